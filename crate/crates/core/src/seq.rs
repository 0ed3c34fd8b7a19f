//! Sequence containers, the block Toeplitz operator, and output noise.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, shape, Result};
use crate::sampler::SeededSampler;

/// A `T`-step signal with a fixed number of channels; row `t` is the
/// sample at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    data: DMatrix<f64>,
}

impl Sequence {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(shape(format!(
                "sequence needs at least one step and one channel, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % data.nrows(), pos / data.nrows());
            return Err(invalid(format!("non-finite entry at t={r}, channel={c}")));
        }
        Ok(Self { data })
    }

    pub fn zeros(steps: usize, channels: usize) -> Self {
        assert!(steps > 0 && channels > 0);
        Self { data: DMatrix::zeros(steps, channels) }
    }

    /// Row-major construction: `values[t * channels + c]`.
    pub fn from_rows(steps: usize, channels: usize, values: &[f64]) -> Result<Self> {
        if values.len() != steps * channels {
            return Err(shape(format!("{} values cannot fill a {steps}x{channels} sequence", values.len())));
        }
        Self::new(DMatrix::from_row_slice(steps, channels, values))
    }

    /// Unit impulse at `t = 0` carrying `x0`.
    pub fn pulse(steps: usize, x0: &[f64]) -> Self {
        let mut data = DMatrix::zeros(steps, x0.len());
        for (c, &v) in x0.iter().enumerate() {
            data[(0, c)] = v;
        }
        Self { data }
    }

    pub fn steps(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Sample at time `t` as a column vector.
    pub fn at(&self, t: usize) -> DVector<f64> {
        self.data.row(t).transpose()
    }

    pub fn mean_power(&self) -> f64 {
        self.data.norm_squared() / self.data.len() as f64
    }

    /// Shift right by `k` steps, filling with zeros.
    pub fn delayed(&self, k: usize) -> Self {
        let mut data = DMatrix::zeros(self.steps(), self.channels());
        for t in k..self.steps() {
            data.row_mut(t).copy_from(&self.data.row(t - k));
        }
        Self { data }
    }

    pub fn scaled_sum(&self, a: f64, other: &Sequence, b: f64) -> Result<Self> {
        if self.data.shape() != other.data.shape() {
            return Err(shape("sequences differ in shape"));
        }
        Self::new(&self.data * a + &other.data * b)
    }
}

/// Paired input/target sequences sharing one length and channel layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<Sequence>,
    targets: Vec<Sequence>,
}

impl Dataset {
    pub fn new(inputs: Vec<Sequence>, targets: Vec<Sequence>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(shape("dataset must hold at least one sample"));
        }
        if inputs.len() != targets.len() {
            return Err(shape(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        let (t, nx, ny) = (inputs[0].steps(), inputs[0].channels(), targets[0].channels());
        for (i, (x, y)) in inputs.iter().zip(&targets).enumerate() {
            if x.steps() != t || y.steps() != t {
                return Err(shape(format!("sample {i} has length {}/{} (expected {t})", x.steps(), y.steps())));
            }
            if x.channels() != nx || y.channels() != ny {
                return Err(shape(format!(
                    "sample {i} has {}/{} channels (expected {nx}/{ny})",
                    x.channels(),
                    y.channels()
                )));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.inputs[0].steps()
    }

    pub fn input_channels(&self) -> usize {
        self.inputs[0].channels()
    }

    pub fn output_channels(&self) -> usize {
        self.targets[0].channels()
    }

    pub fn inputs(&self) -> &[Sequence] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Sequence] {
        &self.targets
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let inputs = indices.iter().map(|&i| self.inputs[i].clone()).collect();
        let targets = indices.iter().map(|&i| self.targets[i].clone()).collect();
        Self::new(inputs, targets)
    }

    pub fn with_targets(&self, targets: Vec<Sequence>) -> Result<Self> {
        Self::new(self.inputs.clone(), targets)
    }
}

/// The block Toeplitz matrix of a sequence, `(T * n_x) x T`.
///
/// Block `(j, t)` holds `x_{t-j}` for `t >= j` and zero below the block
/// diagonal.
#[derive(Clone, Debug)]
pub struct ToeplitzOp {
    channels: usize,
    matrix: DMatrix<f64>,
}

impl ToeplitzOp {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.matrix.ncols()
    }
}

pub fn toeplitz_of(x: &Sequence) -> ToeplitzOp {
    let (t_len, nx) = (x.steps(), x.channels());
    let mut m = DMatrix::zeros(t_len * nx, t_len);
    for j in 0..t_len {
        for t in j..t_len {
            for c in 0..nx {
                m[(j * nx + c, t)] = x.data[(t - j, c)];
            }
        }
    }
    ToeplitzOp { channels: nx, matrix: m }
}

/// Noise variance giving the requested SNR (in dB) for a signal of mean
/// power `signal_power`.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// `y + e` with `e` i.i.d. Gaussian at the given SNR. `snr_db = +inf`
/// returns `y` unchanged.
pub fn add_output_noise(y: &Sequence, snr_db: f64, sampler: &mut SeededSampler) -> Result<Sequence> {
    Ok(add_noise_pooled(std::slice::from_ref(y), snr_db, sampler)?.remove(0))
}

/// Adds noise to a batch of targets using one signal power pooled over all
/// steps, channels and sequences.
pub fn add_noise_pooled(targets: &[Sequence], snr_db: f64, sampler: &mut SeededSampler) -> Result<Vec<Sequence>> {
    if snr_db.is_nan() {
        return Err(invalid("SNR is NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok(targets.to_vec());
    }
    let entries: usize = targets.iter().map(|y| y.data.len()).sum();
    let power = targets.iter().map(|y| y.data.norm_squared()).sum::<f64>() / entries as f64;
    if power == 0.0 {
        return Err(invalid("signal is identically zero; SNR undefined"));
    }
    let sd = noise_variance(power, snr_db).sqrt();
    targets
        .iter()
        .map(|y| {
            let mut data = y.data.clone();
            // row-major draw order, matching gaussian_matrix
            for t in 0..data.nrows() {
                for c in 0..data.ncols() {
                    data[(t, c)] += sd * sampler.standard_normal();
                }
            }
            Sequence::new(data)
        })
        .collect()
}
