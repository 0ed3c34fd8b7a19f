//! Scaled causal 1D convolution `y_t = sum_{j<=t} sqrt(rho_j) theta_j x_{t-j}`.
//!
//! The model is linear in `theta`. With unit scales it is the plain
//! convolutional model whose parameters are the impulse response itself.

use nalgebra::DMatrix;

use crate::error::{invalid, shape, Result};
use crate::impulse::ImpulseResponse;
use crate::scales::{ScaleProvenance, ScaleVector};
use crate::seq::Sequence;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    theta: Vec<DMatrix<f64>>,
    scales: ScaleVector,
}

/// NTK-limit scale factors of a linear RNN:
/// `rho_j = nu_c (j nu_f nu_w^{j-1} + nu_w^j) + nu_f nu_w^j`,
/// with the `j nu_w^{j-1}` term taken as zero at `j = 0`.
pub fn scale_factors(steps: usize, nu_w: f64, nu_f: f64, nu_c: f64) -> Result<ScaleVector> {
    if steps == 0 {
        return Err(invalid("need T >= 1"));
    }
    if !(nu_w > 0.0 && nu_f > 0.0 && nu_c > 0.0) {
        return Err(invalid(format!("variances must be positive, got nu_w={nu_w}, nu_f={nu_f}, nu_c={nu_c}")));
    }
    let rho = (0..steps)
        .map(|j| {
            let pw = nu_w.powi(j as i32);
            let lag_term = if j == 0 { 0.0 } else { j as f64 * nu_f * nu_w.powi(j as i32 - 1) };
            nu_c * (lag_term + pw) + nu_f * pw
        })
        .collect();
    ScaleVector::with_provenance(rho, ScaleProvenance::Analytic { nu_w, nu_f, nu_c })
}

impl ConvParams {
    pub fn new(theta: Vec<DMatrix<f64>>, scales: ScaleVector) -> Result<Self> {
        if theta.len() != scales.len() {
            return Err(shape(format!("{} filters but {} scale factors", theta.len(), scales.len())));
        }
        // validates shapes and finiteness of the effective filter
        let p = Self { theta, scales };
        p.impulse()?;
        Ok(p)
    }

    /// Parameters whose effective filter is `l`: `theta_j = L_j / sqrt(rho_j)`.
    pub fn from_impulse(l: &ImpulseResponse, scales: ScaleVector) -> Result<Self> {
        if l.steps() != scales.len() {
            return Err(shape(format!("{} lags but {} scale factors", l.steps(), scales.len())));
        }
        let theta = l.coeffs().iter().zip(scales.rho()).map(|(lj, r)| lj / r.sqrt()).collect();
        Self::new(theta, scales)
    }

    pub fn theta(&self) -> &[DMatrix<f64>] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.theta
    }

    pub fn scales(&self) -> &ScaleVector {
        &self.scales
    }

    pub fn steps(&self) -> usize {
        self.theta.len()
    }

    pub fn input_channels(&self) -> usize {
        self.theta[0].ncols()
    }

    pub fn output_channels(&self) -> usize {
        self.theta[0].nrows()
    }

    pub fn impulse(&self) -> Result<ImpulseResponse> {
        conv_impulse(self)
    }
}

/// `L_j = sqrt(rho_j) theta_j`.
pub fn conv_impulse(p: &ConvParams) -> Result<ImpulseResponse> {
    ImpulseResponse::new(p.theta.iter().zip(p.scales.rho()).map(|(t, r)| t * r.sqrt()).collect())
}

pub fn conv_forward(p: &ConvParams, x: &Sequence) -> Result<Sequence> {
    conv_impulse(p)?.apply(x)
}

/// `d theta_j = sqrt(rho_j) sum_{t>=j} upstream_t x_{t-j}^T`: the exact
/// gradient of `sum_t <upstream_t, y_t>`.
pub fn conv_gradients(p: &ConvParams, x: &Sequence, upstream: &Sequence) -> Result<Vec<DMatrix<f64>>> {
    if x.channels() != p.input_channels() || upstream.channels() != p.output_channels() {
        return Err(shape(format!(
            "got {}/{} channels, model is {}/{}",
            x.channels(),
            upstream.channels(),
            p.input_channels(),
            p.output_channels()
        )));
    }
    if x.steps() != upstream.steps() || x.steps() > p.steps() {
        return Err(shape("input/upstream length mismatch"));
    }
    let mut e = ImpulseResponse::correlate(x, upstream, p.steps())?;
    for (ej, r) in e.iter_mut().zip(p.scales.rho()) {
        *ej *= r.sqrt();
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{gaussian_matrix, SeededSampler};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn scale_table_at_standard_variances() {
        let s = scale_factors(3, 0.3, 1.0, 1.0).unwrap();
        let r = s.rho();
        assert!(close(r[0], 2.0) && close(r[1], 1.6) && close(r[2], 0.78), "{r:?}");
    }

    #[test]
    fn geometric_bound_holds_for_stable_variances() {
        for &nu_w in &[0.05, 0.3, 0.7, 0.99, 1.0] {
            for &(nu_f, nu_c) in &[(1.0, 1.0), (0.2, 3.0), (2.5, 0.1)] {
                let t = 12;
                let s = scale_factors(t, nu_w, nu_f, nu_c).unwrap();
                let rho_max = nu_c * (t as f64 * nu_f + 1.0) + nu_f;
                assert!((s.rho_max() - rho_max).abs() < 1e-12);
                for j in 1..t {
                    assert!(s.rho()[j] <= rho_max * nu_w.powi(j as i32 - 1) * (1.0 + 1e-12));
                }
                assert!(s.rho()[0] <= rho_max);
            }
        }
    }

    #[test]
    fn vanishing_output_variance_limit() {
        let s = scale_factors(6, 0.4, 1.0, 1e-300).unwrap();
        for (j, r) in s.rho().iter().enumerate() {
            assert!((r - 0.4f64.powi(j as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn nonpositive_variances_rejected() {
        assert!(scale_factors(4, 0.0, 1.0, 1.0).is_err());
        assert!(scale_factors(0, 0.3, 1.0, 1.0).is_err());
    }

    #[test]
    fn identity_filter_passes_input() {
        let t = 4;
        let mut theta = vec![DMatrix::zeros(2, 2); t];
        theta[0] = DMatrix::identity(2, 2);
        let p = ConvParams::new(theta, ScaleVector::unit(t)).unwrap();
        let x = Sequence::from_rows(t, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(conv_forward(&p, &x).unwrap(), x);
    }

    #[test]
    fn pulse_response_reads_scaled_filters() {
        let t = 4;
        let mut s = SeededSampler::new(3, 0);
        let theta: Vec<_> = (0..t).map(|_| gaussian_matrix(3, 2, 1.0, &mut s).unwrap()).collect();
        let scales = scale_factors(t, 0.3, 1.0, 1.0).unwrap();
        let p = ConvParams::new(theta.clone(), scales.clone()).unwrap();
        let y = conv_forward(&p, &Sequence::pulse(t, &[0.0, 1.0])).unwrap();
        for tt in 0..t {
            let expected = theta[tt].column(1) * scales.rho()[tt].sqrt();
            assert!((y.at(tt) - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn impulse_with_constant_scales() {
        let t = 3;
        let theta: Vec<_> = (0..t).map(|j| DMatrix::from_element(2, 2, j as f64 + 1.0)).collect();
        let p = ConvParams::new(theta.clone(), ScaleVector::custom(vec![4.0; t]).unwrap()).unwrap();
        let l = conv_impulse(&p).unwrap();
        for j in 0..t {
            assert_eq!(l.lag(j), &(&theta[j] * 2.0));
        }
        let unit = ConvParams::new(theta.clone(), ScaleVector::unit(t)).unwrap();
        assert_eq!(conv_impulse(&unit).unwrap().coeffs(), &theta[..]);
    }

    #[test]
    fn analytic_identity_filter_norm() {
        let nx = 3;
        let scales = scale_factors(3, 0.3, 1.0, 1.0).unwrap();
        let p = ConvParams::new(vec![DMatrix::identity(nx, nx); 3], scales).unwrap();
        let l = conv_impulse(&p).unwrap();
        assert!((l.lag(2).norm_squared() - 0.78 * nx as f64).abs() < 1e-12);
    }

    #[test]
    fn pulse_gradient() {
        let t = 5;
        let scales = scale_factors(t, 0.5, 1.0, 2.0).unwrap();
        let p = ConvParams::new(vec![DMatrix::zeros(2, 3); t], scales.clone()).unwrap();
        let x0 = [0.5, -1.0, 2.0];
        let x = Sequence::pulse(t, &x0);
        let mut s = SeededSampler::new(1, 1);
        let u = Sequence::new(gaussian_matrix(t, 2, 1.0, &mut s).unwrap()).unwrap();
        let g = conv_gradients(&p, &x, &u).unwrap();
        let x0v = nalgebra::DVector::from_row_slice(&x0);
        for j in 0..t {
            let expected = u.at(j) * x0v.transpose() * scales.rho()[j].sqrt();
            assert!((&g[j] - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let p = ConvParams::new(vec![DMatrix::zeros(1, 1); 3], ScaleVector::unit(3)).unwrap();
        let g =
            conv_gradients(&p, &Sequence::from_rows(3, 1, &[1.0, 2.0, 3.0]).unwrap(), &Sequence::zeros(3, 1)).unwrap();
        assert!(g.iter().all(|m| m.norm() == 0.0));
    }

    #[test]
    fn mismatched_scales_rejected() {
        assert!(ConvParams::new(vec![DMatrix::zeros(1, 1); 3], ScaleVector::unit(2)).is_err());
    }
}
