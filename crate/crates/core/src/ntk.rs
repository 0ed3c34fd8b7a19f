//! Neural tangent kernels of the two parameterizations.
//!
//! A kernel block `K(x, x')` is `(T n_y) x (T n_y)`, indexed by
//! `(t, output channel)` with row index `t * n_y + a`. For the scaled
//! convolution it is exactly `T(x)^T D(rho) T(x') (x) I_{n_y}` at every
//! parameter value. For the RNN this holds only in the wide limit, with
//! `rho` given by [`scale_factors`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::conv::{conv_gradients, scale_factors, ConvParams};
use crate::error::{shape, Error, Result};
use crate::impulse::ImpulseResponse;
use crate::linalg::lanczos_extremes;
use crate::rnn::{rnn_forward_trace, rnn_gradients, InitVariances, RnnParams};
use crate::scales::ScaleVector;
use crate::seq::{toeplitz_of, Dataset, Sequence};

#[derive(Clone, Debug, PartialEq)]
pub struct KernelBlock {
    k: DMatrix<f64>,
    n_y: usize,
}

impl KernelBlock {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn output_channels(&self) -> usize {
        self.n_y
    }

    pub fn steps(&self) -> usize {
        self.k.nrows() / self.n_y
    }

    /// The `n_y x n_y` sub-block for times `(t, s)`.
    pub fn time_block(&self, t: usize, s: usize) -> DMatrix<f64> {
        self.k.view((t * self.n_y, s * self.n_y), (self.n_y, self.n_y)).into_owned()
    }

    /// Largest entry coupling two different output channels, relative to
    /// the largest entry overall. Zero for kernels of the form `k (x) I`.
    pub fn cross_channel_fraction(&self) -> f64 {
        let mut off: f64 = 0.0;
        for i in 0..self.k.nrows() {
            for j in 0..self.k.ncols() {
                if i % self.n_y != j % self.n_y {
                    off = off.max(self.k[(i, j)].abs());
                }
            }
        }
        let top = self.k.amax();
        if top == 0.0 {
            0.0
        } else {
            off / top
        }
    }

    pub fn transpose(&self) -> KernelBlock {
        KernelBlock { k: self.k.transpose(), n_y: self.n_y }
    }
}

fn check_pair(x: &Sequence, xp: &Sequence) -> Result<()> {
    if x.steps() != xp.steps() || x.channels() != xp.channels() {
        return Err(shape(format!(
            "kernel inputs are {}x{} and {}x{}",
            x.steps(),
            x.channels(),
            xp.steps(),
            xp.channels()
        )));
    }
    Ok(())
}

/// `k (x) I_{n_y}` for a scalar `T x T` kernel `k`.
fn kron_identity(k: &DMatrix<f64>, n_y: usize) -> DMatrix<f64> {
    let t = k.nrows();
    let mut out = DMatrix::zeros(t * n_y, t * n_y);
    for i in 0..t {
        for j in 0..t {
            for a in 0..n_y {
                out[(i * n_y + a, j * n_y + a)] = k[(i, j)];
            }
        }
    }
    out
}

/// Closed-form kernel of the scaled convolution.
pub fn conv_ntk(x: &Sequence, xp: &Sequence, scales: &ScaleVector, n_y: usize) -> Result<KernelBlock> {
    check_pair(x, xp)?;
    if scales.len() != x.steps() {
        return Err(shape(format!("{} scale factors for {} steps", scales.len(), x.steps())));
    }
    let nx = x.channels();
    let tx = toeplitz_of(x);
    let mut dtxp = toeplitz_of(xp).matrix().clone();
    for (j, r) in scales.rho().iter().enumerate() {
        dtxp.rows_mut(j * nx, nx).scale_mut(*r);
    }
    let k = tx.matrix().tr_mul(&dtxp);
    Ok(KernelBlock { k: kron_identity(&k, n_y), n_y })
}

/// Wide-limit kernel of the linear RNN: the convolution kernel at the
/// analytic scale factors.
pub fn rnn_ntk_limit(x: &Sequence, xp: &Sequence, v: InitVariances, n_y: usize) -> Result<KernelBlock> {
    conv_ntk(x, xp, &scale_factors(x.steps(), v.nu_w, v.nu_f, v.nu_c)?, n_y)
}

fn one_hot(steps: usize, channels: usize, t: usize, a: usize) -> Sequence {
    let mut m = DMatrix::zeros(steps, channels);
    m[(t, a)] = 1.0;
    Sequence::new(m).expect("finite")
}

/// Convolution kernel assembled from explicit Jacobian rows, one
/// [`conv_gradients`] call per output coordinate.
pub fn empirical_conv_ntk(p: &ConvParams, x: &Sequence, xp: &Sequence) -> Result<KernelBlock> {
    check_pair(x, xp)?;
    let (steps, n_y) = (x.steps(), p.output_channels());
    let rows = |seq: &Sequence| -> Result<Vec<Vec<DMatrix<f64>>>> {
        let mut out = Vec::with_capacity(steps * n_y);
        for t in 0..steps {
            for a in 0..n_y {
                out.push(conv_gradients(p, seq, &one_hot(steps, n_y, t, a))?);
            }
        }
        Ok(out)
    };
    let (ja, jb) = (rows(x)?, rows(xp)?);
    let k = DMatrix::from_fn(steps * n_y, steps * n_y, |i, j| ja[i].iter().zip(&jb[j]).map(|(g, h)| g.dot(h)).sum());
    Ok(KernelBlock { k, n_y })
}

/// Finite-width RNN kernel from explicit `(dW, dF, dC)` Jacobian rows, one
/// [`rnn_gradients`] call per output coordinate. Memory is
/// `O(T n_y n^2)`; [`empirical_rnn_ntk`] computes the same quantity in
/// factored form.
pub fn empirical_rnn_ntk_dense(p: &RnnParams, x: &Sequence, xp: &Sequence) -> Result<KernelBlock> {
    check_pair(x, xp)?;
    let (steps, n_y) = (x.steps(), p.output_channels());
    let rows = |seq: &Sequence| -> Result<Vec<_>> {
        let mut out = Vec::with_capacity(steps * n_y);
        for t in 0..steps {
            for a in 0..n_y {
                out.push(rnn_gradients(p, seq, &one_hot(steps, n_y, t, a))?);
            }
        }
        Ok(out)
    };
    let (ja, jb) = (rows(x)?, rows(xp)?);
    let k = DMatrix::from_fn(steps * n_y, steps * n_y, |i, j| ja[i].dot(&jb[j]));
    Ok(KernelBlock { k, n_y })
}

/// Tangent features of an RNN shared by all inputs: the backward vectors
/// `b_m^(a) = (W^T / sqrt(n))^m c_a / sqrt(n)`, which are the gradients of
/// output channel `a` at time `t` with respect to `h_{t-m}`.
pub struct RnnTangent<'a> {
    p: &'a RnnParams,
    steps: usize,
    /// `(m, a), (m', a')` inner products of the backward vectors.
    back_gram: DMatrix<f64>,
}

/// Per-input quantities for [`RnnTangent`]: hidden states and raw input.
pub struct TangentTrace {
    hidden: DMatrix<f64>,
    input: DMatrix<f64>,
}

impl<'a> RnnTangent<'a> {
    pub fn new(p: &'a RnnParams, steps: usize) -> Self {
        let s = 1.0 / (p.hidden() as f64).sqrt();
        let n_y = p.output_channels();
        let mut stacked = DMatrix::zeros(p.hidden(), steps * n_y);
        let mut cur = p.c.transpose() * s;
        for m in 0..steps {
            stacked.columns_mut(m * n_y, n_y).copy_from(&cur);
            if m + 1 < steps {
                cur = p.w.tr_mul(&cur) * s;
            }
        }
        let back_gram = stacked.tr_mul(&stacked);
        Self { p, steps, back_gram }
    }

    pub fn trace(&self, x: &Sequence) -> Result<TangentTrace> {
        if x.steps() != self.steps {
            return Err(shape(format!("expected {} steps, got {}", self.steps, x.steps())));
        }
        let tr = rnn_forward_trace(self.p, x)?;
        let mut hidden = DMatrix::zeros(self.p.hidden(), self.steps);
        for (t, h) in tr.hidden.iter().enumerate() {
            hidden.set_column(t, h);
        }
        Ok(TangentTrace { hidden, input: x.data().transpose() })
    }

    /// Exact kernel block from two traces.
    pub fn block(&self, a: &TangentTrace, b: &TangentTrace) -> KernelBlock {
        let (steps, n_y) = (self.steps, self.p.output_channels());
        let inv_n = 1.0 / self.p.hidden() as f64;
        let hh = a.hidden.tr_mul(&b.hidden);
        let xx = a.input.tr_mul(&b.input);
        let g = &self.back_gram;
        let mut k = DMatrix::zeros(steps * n_y, steps * n_y);
        for t in 0..steps {
            for s in 0..steps {
                for ca in 0..n_y {
                    for cb in 0..n_y {
                        let mut v = if ca == cb { inv_n * hh[(t, s)] } else { 0.0 };
                        for u in 0..=t {
                            for r in 0..=s {
                                let gg = g[((t - u) * n_y + ca, (s - r) * n_y + cb)];
                                // W-path needs the previous hidden state
                                let w_term = if u > 0 && r > 0 { inv_n * hh[(u - 1, r - 1)] } else { 0.0 };
                                v += gg * (w_term + xx[(u, r)]);
                            }
                        }
                        k[(t * n_y + ca, s * n_y + cb)] = v;
                    }
                }
            }
        }
        KernelBlock { k, n_y }
    }
}

/// Exact finite-width RNN kernel at the given parameters, computed without
/// materializing any `n x n` gradient.
pub fn empirical_rnn_ntk(p: &RnnParams, x: &Sequence, xp: &Sequence) -> Result<KernelBlock> {
    check_pair(x, xp)?;
    let tangent = RnnTangent::new(p, x.steps());
    Ok(tangent.block(&tangent.trace(x)?, &tangent.trace(xp)?))
}

/// Relative Frobenius distance `||a - b|| / ||b||`.
pub fn relative_error(a: &KernelBlock, b: &KernelBlock) -> f64 {
    (&a.k - &b.k).norm() / b.k.norm()
}

#[derive(Clone, Debug)]
pub enum Kernel {
    Conv { scales: ScaleVector, n_y: usize },
    RnnLimit { variances: InitVariances, n_y: usize },
    EmpiricalRnn(Arc<RnnParams>),
}

impl Kernel {
    pub fn output_channels(&self) -> usize {
        match self {
            Kernel::Conv { n_y, .. } | Kernel::RnnLimit { n_y, .. } => *n_y,
            Kernel::EmpiricalRnn(p) => p.output_channels(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Conv { .. } => "conv",
            Kernel::RnnLimit { .. } => "rnn-limit",
            Kernel::EmpiricalRnn(_) => "rnn-empirical",
        }
    }

    pub fn eval(&self, x: &Sequence, xp: &Sequence) -> Result<KernelBlock> {
        match self {
            Kernel::Conv { scales, n_y } => conv_ntk(x, xp, scales, *n_y),
            Kernel::RnnLimit { variances, n_y } => rnn_ntk_limit(x, xp, *variances, *n_y),
            Kernel::EmpiricalRnn(p) => empirical_rnn_ntk(p, x, xp),
        }
    }

    /// All blocks `K(a_i, b_j)`, reusing per-input work where possible.
    fn blocks(&self, a: &[Sequence], b: &[Sequence]) -> Result<Vec<Vec<KernelBlock>>> {
        match self {
            Kernel::EmpiricalRnn(p) => {
                let steps = a.first().map(Sequence::steps).unwrap_or(1);
                let tangent = RnnTangent::new(p, steps);
                let ta = a.iter().map(|x| tangent.trace(x)).collect::<Result<Vec<_>>>()?;
                let tb = b.iter().map(|x| tangent.trace(x)).collect::<Result<Vec<_>>>()?;
                Ok(ta.iter().map(|u| tb.iter().map(|v| tangent.block(u, v)).collect()).collect())
            }
            _ => a.iter().map(|x| b.iter().map(|y| self.eval(x, y)).collect()).collect(),
        }
    }
}

/// Dense Gram matrix over a set of inputs, blocks ordered by sample.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    pub block_size: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Lanczos steps used for the extremal-eigenvalue diagnostic.
pub const LANCZOS_STEPS: usize = 400;

pub fn gram(inputs: &[Sequence], kernel: &Kernel) -> Result<GramMatrix> {
    let first = inputs.first().ok_or_else(|| shape("Gram matrix of an empty input set"))?;
    for x in inputs {
        check_pair(first, x)?;
    }
    let bs = first.steps() * kernel.output_channels();
    let blocks = kernel.blocks(inputs, inputs)?;
    let n = inputs.len();
    let mut m = DMatrix::zeros(n * bs, n * bs);
    for i in 0..n {
        for j in i..n {
            m.view_mut((i * bs, j * bs), (bs, bs)).copy_from(blocks[i][j].matrix());
            if i != j {
                m.view_mut((j * bs, i * bs), (bs, bs)).copy_from(&blocks[i][j].matrix().transpose());
            }
        }
    }
    // diagonal blocks are symmetric up to roundoff
    let m = (&m + m.transpose()) * 0.5;
    let (lambda_min, lambda_max) = lanczos_extremes(&m, LANCZOS_STEPS);
    Ok(GramMatrix { matrix: m, block_size: bs, lambda_min, lambda_max })
}

fn stack(seqs: &[Sequence]) -> DVector<f64> {
    let per = seqs[0].data().len();
    let mut v = DVector::zeros(seqs.len() * per);
    for (i, s) in seqs.iter().enumerate() {
        // row-major (t, channel) order within each sample
        for (k, val) in s.data().transpose().iter().enumerate() {
            v[i * per + k] = *val;
        }
    }
    v
}

fn unstack(v: &DVector<f64>, steps: usize, channels: usize) -> Result<Sequence> {
    Sequence::from_rows(steps, channels, v.as_slice())
}

/// Kernel linear model `f(x) = f0(x) + sum_j K(x, x_j) alpha_j` around the
/// initial input-output map `f0`.
#[derive(Clone, Debug)]
pub struct NtkPredictor {
    kernel: Kernel,
    base: ImpulseResponse,
    train_inputs: Vec<Sequence>,
    alpha: Vec<DVector<f64>>,
}

/// Solver used by [`NtkPredictor`] fitting.
#[derive(Clone, Copy, Debug)]
pub enum FitMode {
    /// Interpolating solution of `G alpha = Y - f0(X)`.
    Direct,
    /// `steps` iterations of gradient descent on the summed squared error.
    /// In dual coordinates this is `alpha <- alpha + lr * (Y - f(X))`.
    GradientDescent { lr: f64, steps: usize },
}

impl NtkPredictor {
    pub fn fit(kernel: Kernel, base: ImpulseResponse, train: &Dataset, mode: FitMode) -> Result<Self> {
        let g = gram(train.inputs(), &kernel)?;
        let f0: Vec<Sequence> = train.inputs().iter().map(|x| base.apply(x)).collect::<Result<_>>()?;
        let resid0 = stack(train.targets()) - stack(&f0);
        let alpha_flat = match mode {
            FitMode::Direct => {
                if g.lambda_min <= 1e-12 * g.lambda_max.max(f64::MIN_POSITIVE) {
                    return Err(Error::SingularGram { pivot: g.lambda_min });
                }
                let chol = g.matrix.clone().cholesky().ok_or(Error::SingularGram { pivot: g.lambda_min })?;
                chol.solve(&resid0)
            }
            FitMode::GradientDescent { lr, steps } => {
                let mut alpha = DVector::zeros(resid0.len());
                for _ in 0..steps {
                    let r = &resid0 - &g.matrix * &alpha;
                    alpha.axpy(lr, &r, 1.0);
                }
                alpha
            }
        };
        let bs = g.block_size;
        let alpha = (0..train.len()).map(|i| alpha_flat.rows(i * bs, bs).into_owned()).collect();
        Ok(Self { kernel, base, train_inputs: train.inputs().to_vec(), alpha })
    }

    pub fn alpha(&self) -> &[DVector<f64>] {
        &self.alpha
    }

    pub fn predict(&self, x: &Sequence) -> Result<Sequence> {
        let f0 = self.base.apply(x)?;
        let mut out = stack(std::slice::from_ref(&f0));
        let blocks = self.kernel.blocks(std::slice::from_ref(x), &self.train_inputs)?;
        for (blk, a) in blocks[0].iter().zip(&self.alpha) {
            out += blk.matrix() * a;
        }
        unstack(&out, x.steps(), f0.channels())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::init_rnn;
    use crate::sampler::{gaussian_matrix, SeededSampler};

    fn rand_seq(steps: usize, ch: usize, s: &mut SeededSampler) -> Sequence {
        Sequence::new(gaussian_matrix(steps, ch, 1.0, s).unwrap()).unwrap()
    }

    #[test]
    fn two_step_hand_value() {
        let x = Sequence::from_rows(2, 1, &[1.0, 2.0]).unwrap();
        let k = conv_ntk(&x, &x, &ScaleVector::unit(2), 1).unwrap();
        assert_eq!(k.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]));
    }

    #[test]
    fn zero_partner_gives_zero_block() {
        let mut s = SeededSampler::new(1, 0);
        let x = rand_seq(4, 2, &mut s);
        let z = Sequence::zeros(4, 2);
        assert_eq!(conv_ntk(&x, &z, &ScaleVector::unit(4), 3).unwrap().matrix().norm(), 0.0);
        let p = init_rnn(10, 2, 2, InitVariances::new(0.3, 1.0, 1.0), &s).unwrap();
        assert_eq!(empirical_rnn_ntk(&p, &x, &z).unwrap().matrix().norm(), 0.0);
    }

    #[test]
    fn pulse_diagonal_follows_scales() {
        let v = InitVariances::new(0.3, 1.0, 1.0);
        let x = Sequence::pulse(3, &[1.0]);
        let k = rnn_ntk_limit(&x, &x, v, 1).unwrap();
        let expected = [2.0, 1.6, 0.78];
        for t in 0..3 {
            assert!((k.matrix()[(t, t)] - expected[t]).abs() < 1e-12);
            for s in 0..3 {
                if s != t {
                    assert_eq!(k.matrix()[(t, s)], 0.0);
                }
            }
        }
    }

    #[test]
    fn limit_is_conv_at_analytic_scales() {
        let mut s = SeededSampler::new(2, 0);
        let (x, y) = (rand_seq(6, 2, &mut s), rand_seq(6, 2, &mut s));
        let v = InitVariances::new(0.4, 0.7, 1.3);
        let a = rnn_ntk_limit(&x, &y, v, 2).unwrap();
        let b = conv_ntk(&x, &y, &scale_factors(6, 0.4, 0.7, 1.3).unwrap(), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kernels_are_transpose_symmetric() {
        let mut s = SeededSampler::new(3, 0);
        let (x, y) = (rand_seq(5, 2, &mut s), rand_seq(5, 2, &mut s));
        let scales = scale_factors(5, 0.5, 1.0, 1.0).unwrap();
        let k1 = conv_ntk(&x, &y, &scales, 2).unwrap();
        let k2 = conv_ntk(&y, &x, &scales, 2).unwrap();
        assert!((k1.transpose().matrix() - k2.matrix()).amax() < 1e-13);
        let p = init_rnn(15, 2, 2, InitVariances::new(0.3, 1.0, 1.0), &s).unwrap();
        let e1 = empirical_rnn_ntk(&p, &x, &y).unwrap();
        let e2 = empirical_rnn_ntk(&p, &y, &x).unwrap();
        assert!((e1.transpose().matrix() - e2.matrix()).amax() < 1e-12);
    }

    #[test]
    fn factored_rnn_kernel_matches_dense_jacobians() {
        let mut s = SeededSampler::new(4, 0);
        for (n, nx, ny, t) in [(8, 1, 1, 3), (6, 2, 3, 4), (11, 3, 2, 5)] {
            let p = init_rnn(n, nx, ny, InitVariances::new(0.6, 1.2, 0.8), &s.substream(n as u64)).unwrap();
            let (x, y) = (rand_seq(t, nx, &mut s), rand_seq(t, nx, &mut s));
            let a = empirical_rnn_ntk(&p, &x, &y).unwrap();
            let b = empirical_rnn_ntk_dense(&p, &x, &y).unwrap();
            assert!((a.matrix() - b.matrix()).amax() <= 1e-12 * b.matrix().amax());
        }
    }

    #[test]
    fn conv_closed_form_is_exact_at_any_parameters() {
        let mut s = SeededSampler::new(5, 0);
        let scales = scale_factors(4, 0.3, 1.0, 1.0).unwrap();
        let theta = (0..4).map(|_| gaussian_matrix(3, 2, 1.0, &mut s).unwrap()).collect();
        let p = ConvParams::new(theta, scales.clone()).unwrap();
        let (x, y) = (rand_seq(4, 2, &mut s), rand_seq(4, 2, &mut s));
        let a = empirical_conv_ntk(&p, &x, &y).unwrap();
        let b = conv_ntk(&x, &y, &scales, 3).unwrap();
        assert!((a.matrix() - b.matrix()).amax() < 1e-12);
        assert_eq!(b.cross_channel_fraction(), 0.0);
    }

    #[test]
    fn single_sample_gram_is_its_block() {
        let mut s = SeededSampler::new(6, 0);
        let x = rand_seq(4, 2, &mut s);
        let kernel = Kernel::Conv { scales: ScaleVector::unit(4), n_y: 2 };
        let g = gram(std::slice::from_ref(&x), &kernel).unwrap();
        let k = kernel.eval(&x, &x).unwrap();
        assert!((&g.matrix - k.matrix()).amax() < 1e-14);
    }

    #[test]
    fn gram_symmetric_and_psd() {
        let mut s = SeededSampler::new(7, 0);
        let xs: Vec<_> = (0..10).map(|_| rand_seq(5, 2, &mut s)).collect();
        let kernel = Kernel::RnnLimit { variances: InitVariances::new(0.3, 1.0, 1.0), n_y: 1 };
        let g = gram(&xs, &kernel).unwrap();
        assert!((&g.matrix - g.matrix.transpose()).amax() <= 1e-12);
        assert!(g.lambda_min >= -1e-8, "lambda_min {}", g.lambda_min);
        let dense = nalgebra::SymmetricEigen::new(g.matrix.clone()).eigenvalues;
        assert!((g.lambda_min - dense.min()).abs() < 1e-8 * dense.max());
    }

    // interpolation needs N <= n_x: the Gram rank is at most T n_x n_y
    fn small_dataset(n: usize, steps: usize, s: &mut SeededSampler) -> Dataset {
        let xs: Vec<_> = (0..n).map(|_| rand_seq(steps, 5, s)).collect();
        let ys: Vec<_> = (0..n).map(|_| rand_seq(steps, 1, s)).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn zero_residual_gives_zero_alpha() {
        let mut s = SeededSampler::new(8, 0);
        let xs: Vec<_> = (0..3).map(|_| rand_seq(4, 4, &mut s)).collect();
        let base = ImpulseResponse::new((0..4).map(|_| gaussian_matrix(1, 4, 1.0, &mut s).unwrap()).collect()).unwrap();
        let ys = xs.iter().map(|x| base.apply(x).unwrap()).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let kernel = Kernel::Conv { scales: ScaleVector::unit(4), n_y: 1 };
        for mode in [FitMode::Direct, FitMode::GradientDescent { lr: 1e-2, steps: 10 }] {
            let pred = NtkPredictor::fit(kernel.clone(), base.clone(), &data, mode).unwrap();
            assert!(pred.alpha().iter().all(|a| a.norm() == 0.0));
        }
    }

    #[test]
    fn direct_fit_interpolates() {
        let mut s = SeededSampler::new(9, 0);
        let data = small_dataset(4, 5, &mut s);
        assert_eq!(data.input_channels(), 5);
        let kernel = Kernel::RnnLimit { variances: InitVariances::new(0.3, 1.0, 1.0), n_y: 1 };
        let g = gram(data.inputs(), &kernel).unwrap();
        assert!(g.lambda_min > 1e-6);
        let base = ImpulseResponse::zeros(5, 1, 5);
        let pred = NtkPredictor::fit(kernel, base, &data, FitMode::Direct).unwrap();
        for (x, y) in data.inputs().iter().zip(data.targets()) {
            let r = (pred.predict(x).unwrap().data() - y.data()).amax();
            assert!(r <= 1e-8, "residual {r}");
        }
    }

    #[test]
    fn singular_gram_reported() {
        let x = Sequence::pulse(3, &[1.0]);
        let data = Dataset::new(vec![x.clone(), x.clone()], vec![x.clone(), x]).unwrap();
        let kernel = Kernel::Conv { scales: ScaleVector::unit(3), n_y: 1 };
        let err = NtkPredictor::fit(kernel, ImpulseResponse::zeros(3, 1, 1), &data, FitMode::Direct).unwrap_err();
        assert!(matches!(err, Error::SingularGram { .. }));
    }
}
