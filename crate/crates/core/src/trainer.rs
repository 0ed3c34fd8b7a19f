//! Full-batch gradient descent for the RNN and the scaled convolution,
//! trajectory logging, and the drift bound on the impulse response.
//!
//! Both models are linear time-invariant, so the loss depends on the
//! parameters only through the impulse response `L`. Each step computes the
//! lagged residual correlations `E_j = sum_i sum_t r_{i,t} x_{i,t-j}^T`
//! (the descent direction in `L`) and pulls them back to the parameters:
//! `sqrt(rho_j) E_j` for the convolution, [`crate::rnn::impulse_vjp`] for the
//! RNN.
//!
//! The loss is `(1/2) sum_i ||y_i - yhat_i||_F^2`. Learning rates are stated
//! for this sum; [`Normalization::Mean`] divides it by the batch size.

use std::io::Write;

use nalgebra::DMatrix;

use crate::conv::ConvParams;
use crate::error::{invalid, shape, Error, Result};
use crate::impulse::ImpulseResponse;
use crate::linalg::operator_norm;
use crate::rnn::{hidden_impulse, impulse_ascent_step, impulse_from_hidden, rnn_impulse, RnnParams};
use crate::sampler::SeededSampler;
use crate::scales::ScaleVector;
use crate::seq::{Dataset, Sequence};

/// Training aborts once the loss exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Batch {
    Full,
    /// Shuffled minibatches of this size, reshuffled every epoch.
    Mini(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `(1/2) sum_i ||r_i||^2`.
    Sum,
    /// `(1/2N) sum_i ||r_i||^2` over the `N` sequences of the batch.
    Mean,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::Sum => "sum",
            Normalization::Mean => "mean",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: Batch,
    pub normalization: Normalization,
    pub log_every: usize,
    /// Seeds minibatch shuffling. Unused for full-batch runs.
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn full_batch(lr: f64, epochs: usize) -> Self {
        Self { lr, epochs, batch: Batch::Full, normalization: Normalization::Sum, log_every: 1, shuffle_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.log_every == 0 {
            return Err(invalid("log_every must be >= 1"));
        }
        if self.batch == Batch::Mini(0) {
            return Err(invalid("minibatch size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Rnn(RnnParams),
    Conv(ConvParams),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Rnn(_) => "rnn",
            Model::Conv(p) if p.scales().rho().iter().all(|&r| r == 1.0) => "conv-unscaled",
            Model::Conv(_) => "conv-scaled",
        }
    }

    pub fn impulse(&self, steps: usize) -> Result<ImpulseResponse> {
        match self {
            Model::Rnn(p) => rnn_impulse(p, steps),
            Model::Conv(p) => {
                if p.steps() != steps {
                    return Err(shape(format!("conv model has {} lags, data has {steps} steps", p.steps())));
                }
                p.impulse()
            }
        }
    }

    /// Impulse response plus, for the RNN, the running products it was
    /// built from.
    fn impulse_cached(&self, steps: usize) -> Result<(ImpulseResponse, Option<Vec<DMatrix<f64>>>)> {
        match self {
            Model::Rnn(p) => {
                let q = hidden_impulse(p, steps);
                Ok((impulse_from_hidden(p, &q)?, Some(q)))
            }
            Model::Conv(_) => Ok((self.impulse(steps)?, None)),
        }
    }

    pub fn predict(&self, x: &Sequence) -> Result<Sequence> {
        self.impulse(x.steps())?.apply(x)
    }

    fn channels(&self) -> (usize, usize) {
        match self {
            Model::Rnn(p) => (p.input_channels(), p.output_channels()),
            Model::Conv(p) => (p.input_channels(), p.output_channels()),
        }
    }

    /// Moves the parameters by `lr` along the descent direction whose
    /// impulse-space form is `e`.
    fn step(&mut self, e: &[DMatrix<f64>], lr: f64, cache: Option<&[DMatrix<f64>]>) -> Result<()> {
        match self {
            Model::Rnn(p) => match cache {
                Some(q) => impulse_ascent_step(p, e, q, lr)?,
                None => {
                    let q = hidden_impulse(p, e.len());
                    impulse_ascent_step(p, e, &q, lr)?
                }
            },
            Model::Conv(p) => {
                let rho = p.scales().rho().to_vec();
                for ((theta, ej), r) in p.theta_mut().iter_mut().zip(e).zip(rho) {
                    *theta += ej * (lr * r.sqrt());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    /// `||L_j||_F` per lag.
    pub norms: Vec<f64>,
    /// `||L_j - L_j^0||_F` per lag.
    pub drifts: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub model: &'static str,
    pub config: TrainConfig,
    pub entries: Vec<LogEntry>,
}

impl TrajectoryLog {
    pub fn lags(&self) -> usize {
        self.entries.first().map_or(0, |e| e.norms.len())
    }

    pub fn steps(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.step).collect()
    }

    pub fn final_entry(&self) -> Option<&LogEntry> {
        self.entries.last()
    }

    /// CSV with columns `step,train_loss,test_loss,drift_0..,norm_0..`,
    /// preceded by `# comment` lines when `comment` is non-empty.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: &str) -> Result<()> {
        for line in comment.lines() {
            writeln!(out, "# {line}")?;
        }
        let lags = self.lags();
        let mut header = vec!["step".to_string(), "train_loss".into(), "test_loss".into()];
        header.extend((0..lags).map(|j| format!("drift_{j}")));
        header.extend((0..lags).map(|j| format!("norm_{j}")));
        writeln!(out, "{}", header.join(","))?;
        for e in &self.entries {
            let mut row = vec![e.step.to_string(), fmt(e.train_loss), e.test_loss.map_or(String::new(), fmt)];
            row.extend(e.drifts.iter().map(|v| fmt(*v)));
            row.extend(e.norms.iter().map(|v| fmt(*v)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub log: TrajectoryLog,
    pub model: Model,
}

/// Residuals `y_i - yhat_i` over a set of sequences.
fn residuals(l: &ImpulseResponse, data: &Dataset, idx: &[usize]) -> Result<Vec<Sequence>> {
    idx.iter()
        .map(|&i| {
            let yhat = l.apply(&data.inputs()[i])?;
            Sequence::new(data.targets()[i].data() - yhat.data())
        })
        .collect()
}

fn half_sq(res: &[Sequence]) -> f64 {
    0.5 * res.iter().map(|r| r.data().norm_squared()).sum::<f64>()
}

/// Sums matrices pairwise in a fixed tree order.
fn pairwise_sum(mut items: Vec<Vec<DMatrix<f64>>>) -> Vec<DMatrix<f64>> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        items = next;
    }
    items.pop().unwrap_or_default()
}

/// `E_j = sum_i sum_{t>=j} r_{i,t} x_{i,t-j}^T`, i.e. `A^T r` arranged by lag.
pub fn residual_correlation(data: &Dataset, idx: &[usize], res: &[Sequence], lags: usize) -> Result<Vec<DMatrix<f64>>> {
    let parts = idx
        .iter()
        .zip(res)
        .map(|(&i, r)| ImpulseResponse::correlate(&data.inputs()[i], r, lags))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(parts))
}

fn scale_for(norm: Normalization, batch: usize) -> f64 {
    match norm {
        Normalization::Sum => 1.0,
        Normalization::Mean => 1.0 / batch as f64,
    }
}

fn entry(step: usize, train_loss: f64, test_loss: Option<f64>, l: &ImpulseResponse, l0: &ImpulseResponse) -> LogEntry {
    LogEntry { step, train_loss, test_loss, norms: l.lag_norms(), drifts: l.lag_distances(l0) }
}

/// Loss of `model` on every sequence of `data`, under `norm`.
pub fn dataset_loss(model: &Model, data: &Dataset, norm: Normalization) -> Result<f64> {
    let l = model.impulse(data.steps())?;
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(half_sq(&residuals(&l, data, &idx)?) * scale_for(norm, data.len()))
}

/// Runs `cfg.epochs` GD steps, logging at steps `0, k, 2k, ..` and the last.
pub fn gd_fit(model: Model, train: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("empty training set"));
    }
    if model.channels() != (train.input_channels(), train.output_channels()) {
        return Err(shape(format!(
            "model is {:?} (n_x, n_y), data is ({}, {})",
            model.channels(),
            train.input_channels(),
            train.output_channels()
        )));
    }
    if let Some(t) = test {
        if t.steps() != train.steps() || t.input_channels() != train.input_channels() {
            return Err(shape("test set shape differs from training set"));
        }
    }
    let steps = train.steps();
    let all: Vec<usize> = (0..train.len()).collect();
    let batch = match cfg.batch {
        Batch::Full => train.len(),
        Batch::Mini(b) => b.min(train.len()),
    };
    let mut shuffler = SeededSampler::new(cfg.shuffle_seed, 0x5f1e);
    let mut model = model;
    let (l0, mut cache) = model.impulse_cached(steps)?;
    let mut entries = Vec::new();
    let mut initial = None;
    for ell in 0..=cfg.epochs {
        let l = if ell == 0 {
            l0.clone()
        } else {
            let (l, q) = model.impulse_cached(steps)?;
            cache = q;
            l
        };
        let res = residuals(&l, train, &all)?;
        let loss = half_sq(&res) * scale_for(cfg.normalization, train.len());
        let first = *initial.get_or_insert(loss);
        if !loss.is_finite() || (loss > DIVERGENCE_FACTOR * first && loss > 0.0) {
            return Err(Error::Diverged { step: ell, loss, limit: DIVERGENCE_FACTOR * first });
        }
        if ell % cfg.log_every == 0 || ell == cfg.epochs {
            let test_loss = match test {
                Some(t) => {
                    let tidx: Vec<usize> = (0..t.len()).collect();
                    Some(half_sq(&residuals(&l, t, &tidx)?) * scale_for(cfg.normalization, t.len()))
                }
                None => None,
            };
            entries.push(entry(ell, loss, test_loss, &l, &l0));
        }
        if ell == cfg.epochs || cfg.lr == 0.0 {
            if ell < cfg.epochs {
                // parameters cannot move; fill in the remaining log rows
                let test_loss = entries.last().and_then(|e| e.test_loss);
                let mut k = ell + 1;
                while k <= cfg.epochs {
                    if k % cfg.log_every == 0 || k == cfg.epochs {
                        entries.push(entry(k, loss, test_loss, &l, &l0));
                    }
                    k += 1;
                }
            }
            break;
        }
        match cfg.batch {
            Batch::Full => {
                let e = residual_correlation(train, &all, &res, steps)?;
                model.step(&e, cfg.lr * scale_for(cfg.normalization, train.len()), cache.as_deref())?;
            }
            Batch::Mini(_) => {
                let mut order = all.clone();
                for i in (1..order.len()).rev() {
                    order.swap(i, shuffler.below(i + 1));
                }
                for chunk in order.chunks(batch) {
                    let lb = model.impulse(steps)?;
                    let rb = residuals(&lb, train, chunk)?;
                    let e = residual_correlation(train, chunk, &rb, steps)?;
                    model.step(&e, cfg.lr * scale_for(cfg.normalization, chunk.len()), None)?;
                }
            }
        }
    }
    Ok(TrainResult { log: TrajectoryLog { model: model.kind(), config: cfg.clone(), entries }, model })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapRow {
    pub step: usize,
    pub abs_gap: f64,
    /// `|a - b| / a`, relative to the first log.
    pub rel_gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsReport {
    pub rows: Vec<GapRow>,
    pub max_abs_gap: f64,
    pub max_rel_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl DynamicsReport {
    pub fn write_csv<W: Write>(&self, mut out: W, comment: &str) -> Result<()> {
        for line in comment.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "step,abs_gap,rel_gap")?;
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.step, fmt(r.abs_gap), fmt(r.rel_gap))?;
        }
        writeln!(out, "# max_rel_gap={} tolerance={} passed={}", fmt(self.max_rel_gap), self.tolerance, self.passed)?;
        Ok(())
    }
}

/// Train-loss gap between two runs, step by step. `horizon` limits the
/// comparison to logged steps `<= horizon`.
pub fn compare_dynamics(
    a: &TrajectoryLog,
    b: &TrajectoryLog,
    tolerance: f64,
    horizon: Option<usize>,
) -> Result<DynamicsReport> {
    if a.config != b.config {
        return Err(invalid("the two runs used different training configs"));
    }
    if a.steps() != b.steps() {
        return Err(invalid("logging cadence differs between the two runs"));
    }
    let mut rows = Vec::new();
    for (ea, eb) in a.entries.iter().zip(&b.entries) {
        if horizon.is_some_and(|h| ea.step > h) {
            break;
        }
        let abs_gap = (ea.train_loss - eb.train_loss).abs();
        let rel_gap = if abs_gap == 0.0 { 0.0 } else { abs_gap / ea.train_loss.abs() };
        rows.push(GapRow { step: ea.step, abs_gap, rel_gap });
    }
    let max_abs_gap = rows.iter().map(|r| r.abs_gap).fold(0.0, f64::max);
    let max_rel_gap = rows.iter().map(|r| r.rel_gap).fold(0.0, f64::max);
    Ok(DynamicsReport { rows, max_abs_gap, max_rel_gap, tolerance, passed: max_rel_gap <= tolerance })
}

/// Dense stacked design `A` with `yhat = A vec(L)`.
///
/// Rows are indexed `(i, t, a)` as `(i T + t) n_y + a`; columns `(j, a, b)`
/// as `(j n_y + a) n_x + b`.
pub fn design_matrix(inputs: &[Sequence], n_y: usize) -> Result<DMatrix<f64>> {
    let first = inputs.first().ok_or_else(|| invalid("no inputs"))?;
    let (t_len, nx) = (first.steps(), first.channels());
    let mut a = DMatrix::zeros(inputs.len() * t_len * n_y, t_len * n_y * nx);
    for (i, x) in inputs.iter().enumerate() {
        if x.steps() != t_len || x.channels() != nx {
            return Err(shape(format!("input {i} has a different shape")));
        }
        for t in 0..t_len {
            for j in 0..=t {
                for ch in 0..n_y {
                    for b in 0..nx {
                        a[((i * t_len + t) * n_y + ch, (j * n_y + ch) * nx + b)] = x.data()[(t - j, b)];
                    }
                }
            }
        }
    }
    Ok(a)
}

/// `vec(L)` in the column order of [`design_matrix`].
pub fn vectorize(coeffs: &[DMatrix<f64>]) -> nalgebra::DVector<f64> {
    let (ny, nx) = coeffs[0].shape();
    nalgebra::DVector::from_fn(coeffs.len() * ny * nx, |k, _| {
        let (j, rest) = (k / (ny * nx), k % (ny * nx));
        coeffs[j][(rest / nx, rest % nx)]
    })
}

pub fn unvectorize(v: &nalgebra::DVector<f64>, steps: usize, ny: usize, nx: usize) -> Vec<DMatrix<f64>> {
    (0..steps).map(|j| DMatrix::from_fn(ny, nx, |a, b| v[(j * ny + a) * nx + b])).collect()
}

/// Iterates `u <- (I - lr A^T A D) u + lr A^T b` from `u = 0` and returns
/// `theta^l = theta^0 + D^{1/2} u^l` for `l = 0..=steps`.
pub fn affine_gd_oracle(train: &Dataset, theta0: &ConvParams, lr: f64, steps: usize) -> Result<Vec<Vec<DMatrix<f64>>>> {
    let (t_len, ny, nx) = (theta0.steps(), theta0.output_channels(), theta0.input_channels());
    let a = design_matrix(train.inputs(), ny)?;
    let y = nalgebra::DVector::from_iterator(
        a.nrows(),
        train.targets().iter().flat_map(|s| (0..t_len).flat_map(move |t| (0..ny).map(move |c| s.data()[(t, c)]))),
    );
    let d = nalgebra::DVector::from_fn(a.ncols(), |k, _| theta0.scales().rho()[k / (ny * nx)]);
    let th0 = vectorize(theta0.theta());
    let b = &y - &a * th0.component_mul(&d.map(f64::sqrt));
    let atb = a.tr_mul(&b);
    let ata = a.tr_mul(&a);
    let mut u = nalgebra::DVector::zeros(a.ncols());
    let mut out = Vec::with_capacity(steps + 1);
    for ell in 0..=steps {
        let th = &th0 + u.component_mul(&d.map(f64::sqrt));
        out.push(unvectorize(&th, t_len, ny, nx));
        if ell < steps {
            u = &u - (&ata * u.component_mul(&d)) * lr + &atb * lr;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasBound {
    pub rho: Vec<f64>,
    pub rho_max: f64,
    /// Operator norm of the stacked Toeplitz design.
    pub a_norm: f64,
    pub b1: f64,
    pub b2: f64,
}

impl BiasBound {
    /// `B2 rho_j lr step`.
    pub fn envelope(&self, lr: f64, step: usize, lag: usize) -> f64 {
        self.b2 * self.rho[lag] * lr * step as f64
    }
}

/// Constants of the drift bound for data `train`, scale factors `scales`
/// and initial impulse response `initial`.
pub fn bias_bound(train: &Dataset, scales: &ScaleVector, initial: &ImpulseResponse) -> Result<BiasBound> {
    if train.is_empty() {
        return Err(invalid("empty training set"));
    }
    if scales.len() != train.steps() || initial.steps() != train.steps() {
        return Err(shape("scales, initial impulse and data disagree on T"));
    }
    if train.inputs().iter().all(|x| x.data().iter().all(|&v| v == 0.0)) {
        return Err(invalid("all inputs are zero; the design operator vanishes"));
    }
    // the norm of A does not depend on n_y, so use the single-output design
    let a = design_matrix(train.inputs(), 1)?;
    let a_norm = operator_norm(&a, 1e-12, 20_000)?;
    let rho_max = scales.rho_max();
    let all: Vec<usize> = (0..train.len()).collect();
    let res = residuals(initial, train, &all)?;
    let atb = residual_correlation(train, &all, &res, train.steps())?;
    let b2 = atb.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    Ok(BiasBound { rho: scales.rho().to_vec(), rho_max, a_norm, b1: 1.0 / (rho_max * a_norm * a_norm), b2 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub step: usize,
    pub lag: usize,
    pub drift: f64,
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
    pub violations: usize,
    /// Largest `drift / envelope` over steps `>= 1`; below 1 means satisfied.
    pub worst_ratio: f64,
    /// Smallest `envelope - drift` over steps `>= 1`.
    pub min_margin: f64,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks every logged drift against the envelope. Refuses when the
/// step size hypothesis `lr < B1` does not hold.
pub fn verify_bias_bound(log: &TrajectoryLog, bound: &BiasBound, lr: f64) -> Result<BoundReport> {
    if lr != log.config.lr {
        return Err(invalid(format!("log was trained with lr={}, not {lr}", log.config.lr)));
    }
    if log.config.batch != Batch::Full || log.config.normalization != Normalization::Sum {
        return Err(invalid("the drift bound is stated for full-batch GD on the summed loss"));
    }
    if lr >= bound.b1 {
        return Err(Error::StepTooLarge { lr, b1: bound.b1 });
    }
    let mut checks = Vec::new();
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    for e in &log.entries {
        for (lag, &drift) in e.drifts.iter().enumerate() {
            let envelope = bound.envelope(lr, e.step, lag);
            // allow roundoff in the measured drift
            if drift > envelope * (1.0 + 1e-12) + 1e-300 {
                violations += 1;
            }
            if e.step > 0 {
                worst_ratio = worst_ratio.max(drift / envelope);
                min_margin = min_margin.min(envelope - drift);
            }
            checks.push(BoundCheck { step: e.step, lag, drift, envelope });
        }
    }
    Ok(BoundReport { checks, violations, worst_ratio, min_margin })
}
