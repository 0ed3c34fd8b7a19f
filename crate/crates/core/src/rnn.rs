//! Linear RNN with `1/sqrt(n)` scaling:
//!
//! ```text
//! h_t = W h_{t-1} / sqrt(n) + F x_t,    y_t = C h_t / sqrt(n),    h_{-1} = 0
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{shape, Error, Result};
use crate::impulse::ImpulseResponse;
use crate::sampler::{gaussian_matrix, SeededSampler};
use crate::seq::Sequence;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitVariances {
    pub nu_w: f64,
    pub nu_f: f64,
    pub nu_c: f64,
}

impl InitVariances {
    pub fn new(nu_w: f64, nu_f: f64, nu_c: f64) -> Self {
        Self { nu_w, nu_f, nu_c }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams {
    pub w: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Initialization variances, when the parameters were drawn at random.
    pub variances: Option<InitVariances>,
}

/// Gradients with respect to `(W, F, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnGradients {
    pub dw: DMatrix<f64>,
    pub df: DMatrix<f64>,
    pub dc: DMatrix<f64>,
}

impl RnnGradients {
    pub fn norm_squared(&self) -> f64 {
        self.dw.norm_squared() + self.df.norm_squared() + self.dc.norm_squared()
    }

    pub fn dot(&self, other: &RnnGradients) -> f64 {
        self.dw.dot(&other.dw) + self.df.dot(&other.df) + self.dc.dot(&other.dc)
    }
}

impl RnnParams {
    pub fn new(w: DMatrix<f64>, f: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        if n == 0 || w.ncols() != n {
            return Err(shape(format!("W must be square and non-empty, got {:?}", w.shape())));
        }
        if f.nrows() != n || f.ncols() == 0 {
            return Err(shape(format!("F must be {n} x n_x, got {:?}", f.shape())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(shape(format!("C must be n_y x {n}, got {:?}", c.shape())));
        }
        if [&w, &f, &c].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("RNN parameters must be finite".into()));
        }
        Ok(Self { w, f, c, variances: None })
    }

    pub fn hidden(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_channels(&self) -> usize {
        self.f.ncols()
    }

    pub fn output_channels(&self) -> usize {
        self.c.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.f.len() + self.c.len()
    }

    fn inv_sqrt_n(&self) -> f64 {
        1.0 / (self.hidden() as f64).sqrt()
    }
}

/// Draws `W ~ N(0, nu_w)`, `F ~ N(0, nu_f)`, `C ~ N(0, nu_c)` entrywise,
/// each from its own substream of `sampler`.
pub fn init_rnn(
    n: usize,
    n_x: usize,
    n_y: usize,
    variances: InitVariances,
    sampler: &SeededSampler,
) -> Result<RnnParams> {
    if n == 0 || n_x == 0 || n_y == 0 {
        return Err(Error::InvalidArgument(format!("dimensions must be >= 1, got n={n}, n_x={n_x}, n_y={n_y}")));
    }
    let w = gaussian_matrix(n, n, variances.nu_w, &mut sampler.substream(0))?;
    let f = gaussian_matrix(n, n_x, variances.nu_f, &mut sampler.substream(1))?;
    let c = gaussian_matrix(n_y, n, variances.nu_c, &mut sampler.substream(2))?;
    Ok(RnnParams { w, f, c, variances: Some(variances) })
}

/// Hidden states `h_0 .. h_{T-1}` and the outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub hidden: Vec<DVector<f64>>,
    pub output: Sequence,
}

pub fn rnn_forward_trace(p: &RnnParams, x: &Sequence) -> Result<ForwardTrace> {
    if x.channels() != p.input_channels() {
        return Err(shape(format!("input has {} channels, RNN expects {}", x.channels(), p.input_channels())));
    }
    let s = p.inv_sqrt_n();
    let mut hidden = Vec::with_capacity(x.steps());
    let mut y = DMatrix::zeros(x.steps(), p.output_channels());
    let mut h = DVector::zeros(p.hidden());
    for t in 0..x.steps() {
        let mut next = &p.f * x.at(t);
        next.gemv(s, &p.w, &h, 1.0);
        h = next;
        y.row_mut(t).copy_from(&(&p.c * &h * s).transpose());
        hidden.push(h.clone());
    }
    Ok(ForwardTrace { hidden, output: Sequence::new(y)? })
}

pub fn rnn_forward(p: &RnnParams, x: &Sequence) -> Result<Sequence> {
    Ok(rnn_forward_trace(p, x)?.output)
}

/// Running products `q_j = (W / sqrt(n))^j F` for `j < steps`.
pub fn hidden_impulse(p: &RnnParams, steps: usize) -> Vec<DMatrix<f64>> {
    let s = p.inv_sqrt_n();
    let mut q = Vec::with_capacity(steps);
    let mut cur = p.f.clone();
    for j in 0..steps {
        if j + 1 < steps {
            let next = &p.w * &cur * s;
            q.push(std::mem::replace(&mut cur, next));
        } else {
            q.push(cur.clone());
        }
    }
    q
}

/// `L_j = C W^j F / n^{(j+1)/2}`, built from the running product rather
/// than explicit powers of `W`.
pub fn rnn_impulse(p: &RnnParams, steps: usize) -> Result<ImpulseResponse> {
    if steps == 0 {
        return Err(Error::InvalidArgument("impulse response needs T >= 1".into()));
    }
    impulse_from_hidden(p, &hidden_impulse(p, steps))
}

/// `L_j = C q_j / sqrt(n)` from precomputed running products.
pub fn impulse_from_hidden(p: &RnnParams, q: &[DMatrix<f64>]) -> Result<ImpulseResponse> {
    let s = p.inv_sqrt_n();
    ImpulseResponse::new(q.iter().map(|qj| &p.c * qj * s).collect())
}

/// Exact gradients of `sum_t <upstream_t, y_t>` by backpropagation
/// through time over the cached hidden states.
pub fn rnn_gradients(p: &RnnParams, x: &Sequence, upstream: &Sequence) -> Result<RnnGradients> {
    if upstream.channels() != p.output_channels() || upstream.steps() != x.steps() {
        return Err(shape(format!(
            "upstream is {}x{}, expected {}x{}",
            upstream.steps(),
            upstream.channels(),
            x.steps(),
            p.output_channels()
        )));
    }
    let trace = rnn_forward_trace(p, x)?;
    let s = p.inv_sqrt_n();
    let n = p.hidden();
    let mut dw = DMatrix::zeros(n, n);
    let mut df = DMatrix::zeros(n, p.input_channels());
    let mut dc = DMatrix::zeros(p.output_channels(), n);
    // g = dL/dh_t, carried backwards
    let mut g = DVector::zeros(n);
    for t in (0..x.steps()).rev() {
        let u = upstream.at(t);
        dc.ger(s, &u, &trace.hidden[t], 1.0);
        let mut gt = p.c.tr_mul(&u) * s;
        gt.gemv_tr(s, &p.w, &g, 1.0);
        df.ger(1.0, &gt, &x.at(t), 1.0);
        if t > 0 {
            dw.ger(s, &gt, &trace.hidden[t - 1], 1.0);
        }
        g = gt;
    }
    Ok(RnnGradients { dw, df, dc })
}

/// Gradient of `sum_j <E_j, L_j>` with respect to `(W, F, C)`, where
/// `L_j` is the RNN impulse response.
///
/// The training loss of a linear time-invariant model depends on the
/// parameters only through `L`, so summing [`rnn_gradients`] over a
/// dataset equals this map applied to the lagged residual correlations.
pub fn impulse_vjp(p: &RnnParams, e: &[DMatrix<f64>]) -> Result<RnnGradients> {
    let steps = e.len();
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one lag".into()));
    }
    impulse_vjp_with(p, e, &hidden_impulse(p, steps))
}

/// [`impulse_vjp`] with the running products `q_j` already computed.
pub fn impulse_vjp_with(p: &RnnParams, e: &[DMatrix<f64>], q: &[DMatrix<f64>]) -> Result<RnnGradients> {
    let parts = vjp_parts(p, e, q)?;
    let mut dw = DMatrix::zeros(p.hidden(), p.hidden());
    if let Some((a_stack, q_stack)) = &parts.w_factors {
        dw.gemm(p.inv_sqrt_n(), a_stack, q_stack, 0.0);
    }
    Ok(RnnGradients { dw, df: parts.df, dc: parts.dc })
}

/// In-place `(W, F, C) += lr * impulse_vjp(p, e)`, without forming the
/// dense `dW`.
pub fn impulse_ascent_step(p: &mut RnnParams, e: &[DMatrix<f64>], q: &[DMatrix<f64>], lr: f64) -> Result<()> {
    let parts = vjp_parts(p, e, q)?;
    if let Some((a_stack, q_stack)) = &parts.w_factors {
        let s = p.inv_sqrt_n();
        p.w.gemm(lr * s, a_stack, q_stack, 1.0);
    }
    p.f += parts.df * lr;
    p.c += parts.dc * lr;
    Ok(())
}

struct VjpParts {
    df: DMatrix<f64>,
    dc: DMatrix<f64>,
    /// `dW = A Q / sqrt(n)` with `A = [a_1 ..]`, `Q = [q_0^T; ..]`.
    w_factors: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn vjp_parts(p: &RnnParams, e: &[DMatrix<f64>], q: &[DMatrix<f64>]) -> Result<VjpParts> {
    let steps = e.len();
    if q.len() < steps {
        return Err(shape(format!("{} hidden products for {steps} lags", q.len())));
    }
    for (j, ej) in e.iter().enumerate() {
        if ej.shape() != (p.output_channels(), p.input_channels()) {
            return Err(shape(format!("E_{j} has shape {:?}", ej.shape())));
        }
    }
    let s = p.inv_sqrt_n();
    let n = p.hidden();
    let nx = p.input_channels();

    let mut dc = DMatrix::zeros(p.output_channels(), n);
    for (ej, qj) in e.iter().zip(q) {
        dc.gemm(s, ej, &qj.transpose(), 1.0);
    }

    // a_j = dL/dq_j = C^T E_j / sqrt(n) + W^T a_{j+1} / sqrt(n)
    let mut a = vec![DMatrix::zeros(n, nx); steps];
    for j in (0..steps).rev() {
        let mut aj = p.c.tr_mul(&e[j]) * s;
        if j + 1 < steps {
            aj.gemm_tr(s, &p.w, &a[j + 1], 1.0);
        }
        a[j] = aj;
    }

    let w_factors = (steps > 1).then(|| {
        let k = (steps - 1) * nx;
        let mut a_stack = DMatrix::zeros(n, k);
        let mut q_stack = DMatrix::zeros(k, n);
        for j in 1..steps {
            a_stack.columns_mut((j - 1) * nx, nx).copy_from(&a[j]);
            q_stack.rows_mut((j - 1) * nx, nx).copy_from(&q[j - 1].transpose());
        }
        (a_stack, q_stack)
    });
    let df = a.swap_remove(0);
    Ok(VjpParts { df, dc, w_factors })
}

/// Directional derivative of the impulse response along `(dW, dF, dC)`:
/// `dq_0 = dF`, `dq_{j+1} = (dW q_j + W dq_j) / sqrt(n)`,
/// `dL_j = (dC q_j + C dq_j) / sqrt(n)`.
pub fn impulse_jvp(p: &RnnParams, dir: &RnnGradients, steps: usize) -> Result<Vec<DMatrix<f64>>> {
    if dir.dw.shape() != p.w.shape() || dir.df.shape() != p.f.shape() || dir.dc.shape() != p.c.shape() {
        return Err(shape("direction does not match parameter shapes"));
    }
    let s = p.inv_sqrt_n();
    let q = hidden_impulse(p, steps);
    let mut dq = dir.df.clone();
    let mut out = Vec::with_capacity(steps);
    for j in 0..steps {
        let mut dl = &dir.dc * &q[j] * s;
        dl.gemm(s, &p.c, &dq, 1.0);
        out.push(dl);
        if j + 1 < steps {
            let mut next = &dir.dw * &q[j] * s;
            next.gemm(s, &p.w, &dq, 1.0);
            dq = next;
        }
    }
    Ok(out)
}

/// Deterministic starting vector for the iterative eigen-estimates.
fn start_vector(n: usize) -> DVector<f64> {
    let mut s = SeededSampler::new(0x5eed_5eed, 0);
    let v = DVector::from_fn(n, |_, _| s.standard_normal());
    let norm = v.norm();
    v / norm
}

/// Largest singular value of `W / sqrt(n)` by power iteration on `W^T W`.
pub fn operator_norm(p: &RnnParams) -> Result<f64> {
    Ok(crate::linalg::operator_norm(&p.w, 1e-10, 5000)? * p.inv_sqrt_n())
}

/// `max |eig(W)| / sqrt(n)`.
///
/// Two stages: the operator norm `||W|| / sqrt(n)` from power iteration on
/// `W^T W` gives an upper bound; the estimate itself is the asymptotic
/// growth rate of `||W^k v||` (Gelfand's formula), taken as the mean log
/// growth over the second half of a window of `K` iterations. `K` doubles
/// from 64 until successive estimates agree to 5e-3 relative, up to 8192
/// iterations. Dominant complex pairs are handled since only norms are
/// tracked. Diagnostic only.
pub fn spectral_radius(p: &RnnParams) -> Result<f64> {
    const TOL: f64 = 5e-3;
    const MAX_ITERS: usize = 8192;
    // a loose upper bound is enough here
    let bound = crate::linalg::operator_norm(&p.w, 1e-6, 20000)? * p.inv_sqrt_n();
    if bound == 0.0 {
        return Ok(0.0);
    }
    let s = p.inv_sqrt_n();
    let mut v = start_vector(p.hidden());
    // cumulative log growth after k steps
    let mut logs = vec![0.0];
    let estimate_for = |k: usize, logs: &[f64]| (logs[k] - logs[k / 2]) / (k - k / 2) as f64;
    let mut window = 64;
    let mut previous: Option<f64> = None;
    while window <= MAX_ITERS {
        while logs.len() <= window {
            let mut next = &p.w * &v * s;
            let norm = next.norm();
            if norm == 0.0 {
                return Ok(0.0);
            }
            next /= norm;
            v = next;
            let last = *logs.last().unwrap();
            logs.push(last + norm.ln());
        }
        let est = estimate_for(window, &logs).exp();
        if let Some(prev) = previous {
            if (est - prev).abs() <= TOL * est.max(f64::MIN_POSITIVE) {
                return Ok(est.min(bound));
            }
        }
        previous = Some(est);
        window *= 2;
    }
    Err(Error::NoConvergence { what: "spectral radius growth estimate", iterations: MAX_ITERS })
}
