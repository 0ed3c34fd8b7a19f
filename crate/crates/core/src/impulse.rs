use nalgebra::DMatrix;

use crate::error::{shape, Result};
use crate::seq::Sequence;

/// Matrix impulse response `L_0 .. L_{T-1}`, each `n_y x n_x`.
///
/// Both model families are linear time-invariant maps on `T`-step
/// sequences, and this is their common coordinate system.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseResponse {
    coeffs: Vec<DMatrix<f64>>,
}

impl ImpulseResponse {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs.first().ok_or_else(|| shape("impulse response needs at least one lag"))?;
        let dims = first.shape();
        if dims.0 == 0 || dims.1 == 0 {
            return Err(shape("impulse coefficients must be non-empty matrices"));
        }
        for (j, l) in coeffs.iter().enumerate() {
            if l.shape() != dims {
                return Err(shape(format!("L_{j} is {:?}, expected {dims:?}", l.shape())));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(shape(format!("L_{j} has non-finite entries")));
            }
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(steps: usize, n_y: usize, n_x: usize) -> Self {
        Self { coeffs: vec![DMatrix::zeros(n_y, n_x); steps] }
    }

    pub fn steps(&self) -> usize {
        self.coeffs.len()
    }

    pub fn input_channels(&self) -> usize {
        self.coeffs[0].ncols()
    }

    pub fn output_channels(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn lag(&self, j: usize) -> &DMatrix<f64> {
        &self.coeffs[j]
    }

    pub fn into_coeffs(self) -> Vec<DMatrix<f64>> {
        self.coeffs
    }

    /// Frobenius norm of each lag.
    pub fn lag_norms(&self) -> Vec<f64> {
        self.coeffs.iter().map(|l| l.norm()).collect()
    }

    /// Per-lag Frobenius distance to `other`.
    pub fn lag_distances(&self, other: &ImpulseResponse) -> Vec<f64> {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a - b).norm()).collect()
    }

    /// Causal convolution `y_t = sum_{j<=t} L_j x_{t-j}`.
    pub fn apply(&self, x: &Sequence) -> Result<Sequence> {
        if x.channels() != self.input_channels() {
            return Err(shape(format!(
                "input has {} channels, filter expects {}",
                x.channels(),
                self.input_channels()
            )));
        }
        if x.steps() > self.steps() {
            return Err(shape(format!("input has {} steps but only {} lags are defined", x.steps(), self.steps())));
        }
        let xd = x.data();
        let mut y = DMatrix::zeros(x.steps(), self.output_channels());
        for t in 0..x.steps() {
            for j in 0..=t {
                // y_t^T += x_{t-j}^T L_j^T
                let contrib = xd.row(t - j) * self.coeffs[j].transpose();
                let mut row = y.row_mut(t);
                row += contrib;
            }
        }
        Sequence::new(y)
    }

    /// Lagged cross-correlation `E_j = sum_{t>=j} u_t x_{t-j}^T`, the
    /// gradient of `sum_t <u_t, y_t>` with respect to `L_j`.
    pub fn correlate(x: &Sequence, upstream: &Sequence, lags: usize) -> Result<Vec<DMatrix<f64>>> {
        if x.steps() != upstream.steps() {
            return Err(shape("input and upstream lengths differ"));
        }
        let (xd, ud) = (x.data(), upstream.data());
        let mut out = vec![DMatrix::zeros(upstream.channels(), x.channels()); lags];
        for (j, e) in out.iter_mut().enumerate() {
            for t in j..x.steps() {
                *e += ud.row(t).transpose() * xd.row(t - j);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_rejects_channel_mismatch() {
        let l = ImpulseResponse::zeros(3, 1, 2);
        assert!(l.apply(&Sequence::zeros(3, 1)).is_err());
    }

    #[test]
    fn pulse_reads_out_coefficients() {
        let l = ImpulseResponse::new(vec![
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
            DMatrix::from_row_slice(1, 2, &[5.0, 6.0]),
        ])
        .unwrap();
        let y = l.apply(&Sequence::pulse(3, &[0.0, 1.0])).unwrap();
        assert_eq!(y.data().as_slice(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn ragged_coefficients_rejected() {
        assert!(ImpulseResponse::new(vec![DMatrix::zeros(1, 1), DMatrix::zeros(2, 1)]).is_err());
        assert!(ImpulseResponse::new(vec![]).is_err());
    }
}
