//! Drivers for the synthetic experiments: teacher-student data, the RNN
//! versus convolution training comparison, the delay sweep, kernel and
//! impulse-response statistics, and the state-evolution report.
//!
//! Every driver is a pure function of its spec and seed. [`run_command`]
//! wraps them for the CLI, writing CSV files whose first lines are `#`
//! comments carrying the seed and the config hash.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::config::Config;
use crate::conv::{scale_factors, ConvParams};
use crate::error::{invalid, Error, Result};
use crate::io::{read_dataset, save_conv, save_rnn, write_dataset, Split};
use crate::ntk::{gram, Kernel};
use crate::realization::rnn_to_conv;
use crate::rnn::{init_rnn, rnn_forward, rnn_impulse, spectral_radius, InitVariances, RnnParams};
use crate::sampler::{gaussian_matrix, SeededSampler};
use crate::scales::ScaleVector;
use crate::se::{
    finite_n_q_recursion, median, ntk_scales_from_se, se_convergence_report, tau_closed_form, tau_recursion,
    SeReportRow,
};
use crate::seq::{add_noise_pooled, Dataset, Sequence};
use crate::trainer::{
    compare_dynamics, fmt, gd_fit, Batch, DynamicsReport, Model, Normalization, TrainConfig, TrainResult,
};

/// Seed and config hash written into every artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stamp {
    pub seed: u64,
    pub config_hash: String,
}

impl Stamp {
    pub fn comment(&self, what: &str) -> String {
        format!("{what}\nseed={} config_hash={}", self.seed, self.config_hash)
    }
}

pub const TRAIN_KEYS: &[&str] = &["lr", "epochs", "log_every", "normalization", "batch", "shuffle_seed"];

/// Reads the training keys, falling back to `defaults`.
pub fn train_config(c: &Config, defaults: &TrainConfig) -> Result<TrainConfig> {
    let normalization = match c.get_str("normalization") {
        None => defaults.normalization,
        Some("sum") => Normalization::Sum,
        Some("mean") => Normalization::Mean,
        Some(other) => return Err(invalid(format!("normalization must be `sum` or `mean`, got `{other}`"))),
    };
    let batch = match c.get_str("batch") {
        None => defaults.batch,
        Some("full") => Batch::Full,
        Some(b) => Batch::Mini(b.parse().map_err(|_| invalid(format!("batch must be `full` or a size, got `{b}`")))?),
    };
    let cfg = TrainConfig {
        lr: c.get_or("lr", defaults.lr)?,
        epochs: c.get_or("epochs", defaults.epochs)?,
        batch,
        normalization,
        log_every: c.get_or("log_every", defaults.log_every)?,
        shuffle_seed: c.get_or("shuffle_seed", defaults.shuffle_seed)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn variances(c: &Config, prefix: &str, d: InitVariances) -> Result<InitVariances> {
    Ok(InitVariances::new(
        c.get_or(&format!("{prefix}nu_w"), d.nu_w)?,
        c.get_or(&format!("{prefix}nu_f"), d.nu_f)?,
        c.get_or(&format!("{prefix}nu_c"), d.nu_c)?,
    ))
}

/// Teacher-student data: a small random RNN teacher, i.i.d. standard
/// Gaussian inputs, targets corrupted at a fixed SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherSpec {
    pub teacher_n: usize,
    pub variances: InitVariances,
    pub n_x: usize,
    pub n_y: usize,
    pub steps: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub snr_db: f64,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        Self {
            teacher_n: 4,
            variances: InitVariances::new(0.3, 1.0, 1.0),
            n_x: 1,
            n_y: 1,
            steps: 10,
            n_train: 50,
            n_test: 50,
            snr_db: 20.0,
        }
    }
}

pub const TEACHER_KEYS: &[&str] =
    &["teacher_n", "nu_w", "nu_f", "nu_c", "n_x", "n_y", "steps", "n_train", "n_test", "snr_db"];

impl TeacherSpec {
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            teacher_n: c.get_or("teacher_n", d.teacher_n)?,
            variances: variances(c, "", d.variances)?,
            n_x: c.get_or("n_x", d.n_x)?,
            n_y: c.get_or("n_y", d.n_y)?,
            steps: c.get_or("steps", d.steps)?,
            n_train: c.get_or("n_train", d.n_train)?,
            n_test: c.get_or("n_test", d.n_test)?,
            snr_db: c.get_or("snr_db", d.snr_db)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub teacher: RnnParams,
    pub train: Dataset,
    pub test: Dataset,
}

impl SyntheticData {
    /// Training sequences first, then test sequences.
    pub fn combined(&self) -> Result<(Dataset, Split)> {
        let inputs = self.train.inputs().iter().chain(self.test.inputs()).cloned().collect();
        let targets = self.train.targets().iter().chain(self.test.targets()).cloned().collect();
        let n_tr = self.train.len();
        let split = Split { train: (0..n_tr).collect(), test: (n_tr..n_tr + self.test.len()).collect() };
        Ok((Dataset::new(inputs, targets)?, split))
    }
}

fn gaussian_sequences(
    count: usize,
    steps: usize,
    channels: usize,
    sampler: &mut SeededSampler,
) -> Result<Vec<Sequence>> {
    (0..count).map(|_| Sequence::new(gaussian_matrix(steps, channels, 1.0, sampler)?)).collect()
}

/// Noise power is pooled over the training and test targets together.
pub fn gen_data(spec: &TeacherSpec, seed: u64) -> Result<SyntheticData> {
    if spec.n_train == 0 || spec.steps == 0 {
        return Err(invalid("need at least one training sequence and one step"));
    }
    let teacher = init_rnn(spec.teacher_n, spec.n_x, spec.n_y, spec.variances, &SeededSampler::new(seed, 1))?;
    let total = spec.n_train + spec.n_test;
    let inputs = gaussian_sequences(total, spec.steps, spec.n_x, &mut SeededSampler::new(seed, 2))?;
    let clean = teacher_targets(&teacher, &inputs)?;
    let noisy = add_noise_pooled(&clean, spec.snr_db, &mut SeededSampler::new(seed, 3))?;
    let train = Dataset::new(inputs[..spec.n_train].to_vec(), noisy[..spec.n_train].to_vec())?;
    let test = Dataset::new(inputs[spec.n_train..].to_vec(), noisy[spec.n_train..].to_vec())?;
    Ok(SyntheticData { teacher, train, test })
}

pub fn teacher_targets(teacher: &RnnParams, inputs: &[Sequence]) -> Result<Vec<Sequence>> {
    inputs.iter().map(|x| rnn_forward(teacher, x)).collect()
}

/// Per-run scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub arm: String,
    pub delay: Option<usize>,
    /// Mean squared error per entry.
    pub train_mse: f64,
    pub test_mse: f64,
    /// `1 - SS_res / SS_tot` per output channel on the test set.
    pub r2: Vec<f64>,
}

pub fn mse(model: &Model, data: &Dataset) -> Result<f64> {
    let l = model.impulse(data.steps())?;
    let mut total = 0.0;
    let mut count = 0;
    for (x, y) in data.inputs().iter().zip(data.targets()) {
        total += (y.data() - l.apply(x)?.data()).norm_squared();
        count += y.data().len();
    }
    Ok(total / count as f64)
}

pub fn r2_scores(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    let l = model.impulse(data.steps())?;
    let ny = data.output_channels();
    let count = (data.len() * data.steps()) as f64;
    let mut mean = vec![0.0; ny];
    for y in data.targets() {
        for c in 0..ny {
            mean[c] += y.data().column(c).sum() / count;
        }
    }
    let (mut ss_res, mut ss_tot) = (vec![0.0; ny], vec![0.0; ny]);
    for (x, y) in data.inputs().iter().zip(data.targets()) {
        let yhat = l.apply(x)?;
        for c in 0..ny {
            for t in 0..data.steps() {
                ss_res[c] += (y.data()[(t, c)] - yhat.data()[(t, c)]).powi(2);
                ss_tot[c] += (y.data()[(t, c)] - mean[c]).powi(2);
            }
        }
    }
    Ok(ss_res.iter().zip(&ss_tot).map(|(r, t)| if *t == 0.0 { f64::NAN } else { 1.0 - r / t }).collect())
}

pub fn metrics_row(
    arm: &str,
    delay: Option<usize>,
    model: &Model,
    train: &Dataset,
    test: &Dataset,
) -> Result<MetricsRow> {
    Ok(MetricsRow {
        arm: arm.into(),
        delay,
        train_mse: mse(model, train)?,
        test_mse: mse(model, test)?,
        r2: r2_scores(model, test)?,
    })
}

pub fn metrics_csv(rows: &[MetricsRow], comment: &str) -> String {
    let mut s = String::new();
    for line in comment.lines() {
        writeln!(s, "# {line}").unwrap();
    }
    let ny = rows.first().map_or(0, |r| r.r2.len());
    let r2_cols: Vec<String> = (0..ny).map(|c| format!("r2_{c}")).collect();
    writeln!(s, "arm,delay,train_mse,test_mse{}", r2_cols.iter().map(|c| format!(",{c}")).collect::<String>()).unwrap();
    for r in rows {
        let delay = r.delay.map_or(String::new(), |d| d.to_string());
        let r2: String = r.r2.iter().map(|v| format!(",{}", fmt(*v))).collect();
        writeln!(s, "{},{delay},{},{}{r2}", r.arm, fmt(r.train_mse), fmt(r.test_mse)).unwrap();
    }
    s
}

/// The three models of a comparison, sharing one initial impulse response.
#[derive(Clone, Debug)]
pub struct InitialArms {
    pub rnn: RnnParams,
    pub scaled: ConvParams,
    pub unscaled: ConvParams,
}

pub fn initial_arms(
    n: usize,
    v: InitVariances,
    steps: usize,
    n_x: usize,
    n_y: usize,
    seed: u64,
) -> Result<InitialArms> {
    let rnn = init_rnn(n, n_x, n_y, v, &SeededSampler::new(seed, 100))?;
    let scaled = rnn_to_conv(&rnn, steps, scale_factors(steps, v.nu_w, v.nu_f, v.nu_c)?)?;
    let unscaled = ConvParams::from_impulse(&rnn_impulse(&rnn, steps)?, ScaleVector::unit(steps))?;
    Ok(InitialArms { rnn, scaled, unscaled })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareSpec {
    pub data: TeacherSpec,
    pub student_n: usize,
    pub student: InitVariances,
    pub train: TrainConfig,
    pub unscaled_arm: bool,
    /// Largest allowed relative train-loss gap between the RNN and the
    /// scaled convolution.
    pub tolerance: f64,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            data: TeacherSpec::default(),
            student_n: 1000,
            student: InitVariances::new(0.3, 1.0, 1.0),
            train: TrainConfig::full_batch(1e-4, 100),
            unscaled_arm: true,
            tolerance: 0.03,
        }
    }
}

pub const COMPARE_KEYS: &[&str] = &[
    "student_n",
    "student_nu_w",
    "student_nu_f",
    "student_nu_c",
    "unscaled_arm",
    "tolerance",
    "data_dir",
    "trend_widths",
    "trend_seeds",
];

impl CompareSpec {
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            data: TeacherSpec::from_config(c)?,
            student_n: c.get_or("student_n", d.student_n)?,
            student: variances(c, "student_", d.student)?,
            train: train_config(c, &d.train)?,
            unscaled_arm: c.get_or("unscaled_arm", d.unscaled_arm)?,
            tolerance: c.get_or("tolerance", d.tolerance)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CompareOutcome {
    pub rnn: TrainResult,
    pub scaled: TrainResult,
    pub unscaled: Option<TrainResult>,
    pub report: DynamicsReport,
    pub metrics: Vec<MetricsRow>,
}

/// Trains the student RNN and the scaled convolution (and optionally the
/// unscaled one) from the same initial impulse response with one config.
pub fn train_compare(spec: &CompareSpec, train: &Dataset, test: &Dataset, seed: u64) -> Result<CompareOutcome> {
    let arms = initial_arms(
        spec.student_n,
        spec.student,
        train.steps(),
        train.input_channels(),
        train.output_channels(),
        seed,
    )?;
    let cfg = &spec.train;
    let rnn = gd_fit(Model::Rnn(arms.rnn), train, Some(test), cfg)?;
    let scaled = gd_fit(Model::Conv(arms.scaled), train, Some(test), cfg)?;
    let unscaled =
        if spec.unscaled_arm { Some(gd_fit(Model::Conv(arms.unscaled), train, Some(test), cfg)?) } else { None };
    let report = compare_dynamics(&rnn.log, &scaled.log, spec.tolerance, None)?;
    let mut metrics = vec![
        metrics_row("rnn", None, &rnn.model, train, test)?,
        metrics_row("conv-scaled", None, &scaled.model, train, test)?,
    ];
    if let Some(u) = &unscaled {
        metrics.push(metrics_row("conv-unscaled", None, &u.model, train, test)?);
    }
    Ok(CompareOutcome { rnn, scaled, unscaled, report, metrics })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapTrendRow {
    pub n: usize,
    pub seed: u64,
    pub max_rel_gap: f64,
}

/// Max relative train-loss gap for each width and seed. Seed `base + k`
/// drives both the data and the student.
pub fn gap_trend(spec: &CompareSpec, widths: &[usize], seeds: u64, base: u64) -> Result<Vec<GapTrendRow>> {
    let mut rows = Vec::new();
    let mut spec = spec.clone();
    spec.unscaled_arm = false;
    for k in 0..seeds {
        let data = gen_data(&spec.data, base + k)?;
        for &n in widths {
            spec.student_n = n;
            let out = train_compare(&spec, &data.train, &data.test, base + k)?;
            rows.push(GapTrendRow { n, seed: base + k, max_rel_gap: out.report.max_rel_gap });
        }
    }
    Ok(rows)
}

/// Median of `value` for each distinct width, in first-seen order.
pub fn medians_by_width<T>(rows: &[T], width: impl Fn(&T) -> usize, value: impl Fn(&T) -> f64) -> Vec<(usize, f64)> {
    let mut widths: Vec<usize> = Vec::new();
    for r in rows {
        if !widths.contains(&width(r)) {
            widths.push(width(r));
        }
    }
    widths
        .into_iter()
        .map(|n| {
            let mut v: Vec<f64> = rows.iter().filter(|r| width(r) == n).map(&value).collect();
            (n, median(&mut v))
        })
        .collect()
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Spearman rank correlation, ties given their average rank.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Delay task: targets are a fixed random readout of `x_{t-d}` (zero for
/// `t < d`) plus noise.
#[derive(Clone, Debug, PartialEq)]
pub struct DelaySpec {
    pub student_n: usize,
    pub student: InitVariances,
    pub n_x: usize,
    pub n_y: usize,
    pub steps: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub snr_db: f64,
    pub delays: Vec<usize>,
    pub train: TrainConfig,
    pub tolerance: f64,
}

impl Default for DelaySpec {
    fn default() -> Self {
        Self {
            student_n: 1000,
            student: InitVariances::new(0.3, 1.0, 1.0),
            n_x: 15,
            n_y: 1,
            steps: 20,
            n_train: 10,
            n_test: 10,
            snr_db: 20.0,
            delays: (0..=10).collect(),
            train: TrainConfig { log_every: 50, ..TrainConfig::full_batch(5e-4, 300) },
            tolerance: 0.03,
        }
    }
}

pub const DELAY_KEYS: &[&str] =
    &["student_n", "nu_w", "nu_f", "nu_c", "n_x", "n_y", "steps", "n_train", "n_test", "snr_db", "delays", "tolerance"];

impl DelaySpec {
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            student_n: c.get_or("student_n", d.student_n)?,
            student: variances(c, "", d.student)?,
            n_x: c.get_or("n_x", d.n_x)?,
            n_y: c.get_or("n_y", d.n_y)?,
            steps: c.get_or("steps", d.steps)?,
            n_train: c.get_or("n_train", d.n_train)?,
            n_test: c.get_or("n_test", d.n_test)?,
            snr_db: c.get_or("snr_db", d.snr_db)?,
            delays: c.list_or("delays", d.delays)?,
            train: train_config(c, &d.train)?,
            tolerance: c.get_or("tolerance", d.tolerance)?,
        })
    }
}

/// Training and test sets for one delay. Inputs and readout depend only on
/// the seed, so every delay sees the same input sequences.
pub fn delay_dataset(spec: &DelaySpec, delay: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if delay >= spec.steps {
        return Err(invalid(format!("delay {delay} must be below T = {}", spec.steps)));
    }
    let total = spec.n_train + spec.n_test;
    let inputs = gaussian_sequences(total, spec.steps, spec.n_x, &mut SeededSampler::new(seed, 20))?;
    let readout = gaussian_matrix(spec.n_y, spec.n_x, 1.0 / spec.n_x as f64, &mut SeededSampler::new(seed, 21))?;
    let clean: Vec<Sequence> =
        inputs.iter().map(|x| Sequence::new(x.delayed(delay).data() * readout.transpose())).collect::<Result<_>>()?;
    let noisy = add_noise_pooled(&clean, spec.snr_db, &mut SeededSampler::new(seed, 22).substream(delay as u64))?;
    Ok((
        Dataset::new(inputs[..spec.n_train].to_vec(), noisy[..spec.n_train].to_vec())?,
        Dataset::new(inputs[spec.n_train..].to_vec(), noisy[spec.n_train..].to_vec())?,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayOutcome {
    pub rows: Vec<MetricsRow>,
    pub spearman_rnn: f64,
    pub spearman_scaled: f64,
    /// Largest `err(d) / err(0)` of the unscaled convolution over `d <= T/2`.
    pub unscaled_ratio: f64,
    /// Largest `|err_rnn(d) - err_scaled(d)| / err_rnn(d)` over delays.
    pub max_gap: f64,
    pub passed: bool,
}

pub fn delay_sweep(spec: &DelaySpec, seed: u64) -> Result<DelayOutcome> {
    if spec.delays.is_empty() {
        return Err(invalid("no delays given"));
    }
    let arms = initial_arms(spec.student_n, spec.student, spec.steps, spec.n_x, spec.n_y, seed)?;
    let mut rows = Vec::new();
    for &d in &spec.delays {
        let (train, test) = delay_dataset(spec, d, seed)?;
        let models = [
            ("rnn", Model::Rnn(arms.rnn.clone())),
            ("conv-scaled", Model::Conv(arms.scaled.clone())),
            ("conv-unscaled", Model::Conv(arms.unscaled.clone())),
        ];
        for (arm, m) in models {
            let fit = gd_fit(m, &train, None, &spec.train)?;
            rows.push(metrics_row(arm, Some(d), &fit.model, &train, &test)?);
        }
    }
    let errors = |arm: &str| -> Vec<f64> { rows.iter().filter(|r| r.arm == arm).map(|r| r.test_mse).collect() };
    let delays: Vec<f64> = spec.delays.iter().map(|&d| d as f64).collect();
    let (rnn, scaled, unscaled) = (errors("rnn"), errors("conv-scaled"), errors("conv-unscaled"));
    let spearman_rnn = spearman(&delays, &rnn);
    let spearman_scaled = spearman(&delays, &scaled);
    let base = spec.delays.iter().position(|&d| d == 0).map(|i| unscaled[i]);
    let unscaled_ratio = match base {
        Some(b) => spec
            .delays
            .iter()
            .zip(&unscaled)
            .filter(|(d, _)| **d <= spec.steps / 2)
            .map(|(_, e)| e / b)
            .fold(0.0, f64::max),
        None => f64::NAN,
    };
    let max_gap = rnn.iter().zip(&scaled).map(|(a, b)| (a - b).abs() / a).fold(0.0, f64::max);
    let passed = spearman_rnn > 0.8 && spearman_scaled > 0.8 && unscaled_ratio <= 2.0 && max_gap <= spec.tolerance;
    Ok(DelayOutcome { rows, spearman_rnn, spearman_scaled, unscaled_ratio, max_gap, passed })
}

/// Empirical RNN kernel against its wide limit.
#[derive(Clone, Debug, PartialEq)]
pub struct NtkCheckSpec {
    pub steps: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub variances: InitVariances,
    pub widths: Vec<usize>,
    pub seeds: u64,
    /// Allowed mean relative error at the largest width.
    pub tolerance: f64,
}

impl Default for NtkCheckSpec {
    fn default() -> Self {
        Self {
            steps: 6,
            n_x: 1,
            n_y: 1,
            variances: InitVariances::new(0.3, 1.0, 1.0),
            widths: vec![250, 1000, 4000],
            seeds: 20,
            tolerance: 0.05,
        }
    }
}

pub const NTK_KEYS: &[&str] = &["steps", "n_x", "n_y", "nu_w", "nu_f", "nu_c", "widths", "seeds", "tolerance"];

impl NtkCheckSpec {
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            steps: c.get_or("steps", d.steps)?,
            n_x: c.get_or("n_x", d.n_x)?,
            n_y: c.get_or("n_y", d.n_y)?,
            variances: variances(c, "", d.variances)?,
            widths: c.list_or("widths", d.widths)?,
            seeds: c.get_or("seeds", d.seeds)?,
            tolerance: c.get_or("tolerance", d.tolerance)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtkCheckRow {
    pub n: usize,
    pub seed: u64,
    /// `||G_emp - G_lim||_F / ||G_lim||_F` on the Gram of two inputs.
    pub rel_error: f64,
    /// Largest off-diagonal output-channel mass among the empirical blocks.
    pub cross_channel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtkCheckOutcome {
    pub rows: Vec<NtkCheckRow>,
    /// `(n, mean, median)` per width.
    pub summary: Vec<(usize, f64, f64)>,
    pub passed: bool,
}

pub fn ntk_check(spec: &NtkCheckSpec, seed: u64) -> Result<NtkCheckOutcome> {
    let mut rows = Vec::new();
    let limit_kernel = Kernel::RnnLimit { variances: spec.variances, n_y: spec.n_y };
    for &n in &spec.widths {
        for k in 0..spec.seeds {
            let base = SeededSampler::new(seed, 1000 + k);
            let inputs = gaussian_sequences(2, spec.steps, spec.n_x, &mut base.substream(0))?;
            let p = init_rnn(n, spec.n_x, spec.n_y, spec.variances, &base.substream(1 + n as u64))?;
            let emp = gram(&inputs, &Kernel::EmpiricalRnn(Arc::new(p)))?;
            let lim = gram(&inputs, &limit_kernel)?;
            let cross_channel = if spec.n_y > 1 { cross_channel_mass(&emp.matrix, spec.n_y) } else { 0.0 };
            rows.push(NtkCheckRow {
                n,
                seed: k,
                rel_error: (&emp.matrix - &lim.matrix).norm() / lim.matrix.norm(),
                cross_channel,
            });
        }
    }
    let summary: Vec<(usize, f64, f64)> = spec
        .widths
        .iter()
        .map(|&n| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.rel_error).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (n, mean, median(&mut v))
        })
        .collect();
    let medians: Vec<f64> = summary.iter().map(|s| s.2).collect();
    let passed = summary.last().is_some_and(|s| s.1 <= spec.tolerance) && strictly_decreasing(&medians);
    Ok(NtkCheckOutcome { rows, summary, passed })
}

fn cross_channel_mass(m: &DMatrix<f64>, n_y: usize) -> f64 {
    let (mut off, mut total) = (0.0, 0.0);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)].powi(2);
            total += v;
            if i % n_y != j % n_y {
                off += v;
            }
        }
    }
    (off / total).sqrt()
}

/// Monte Carlo statistics of the initial impulse response.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseSpec {
    pub n: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub steps: usize,
    pub variances: InitVariances,
    pub seeds: u64,
    /// Spectral radius estimates are slower; only this many seeds get one.
    pub radius_seeds: u64,
    pub tolerance: f64,
}

impl Default for ImpulseSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            n_x: 3,
            n_y: 3,
            steps: 6,
            variances: InitVariances::new(0.3, 1.0, 1.0),
            seeds: 200,
            radius_seeds: 3,
            tolerance: 0.1,
        }
    }
}

pub const IMPULSE_KEYS: &[&str] =
    &["n", "n_x", "n_y", "steps", "nu_w", "nu_f", "nu_c", "seeds", "radius_seeds", "tolerance"];

impl ImpulseSpec {
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            n: c.get_or("n", d.n)?,
            n_x: c.get_or("n_x", d.n_x)?,
            n_y: c.get_or("n_y", d.n_y)?,
            steps: c.get_or("steps", d.steps)?,
            variances: variances(c, "", d.variances)?,
            seeds: c.get_or("seeds", d.seeds)?,
            radius_seeds: c.get_or("radius_seeds", d.radius_seeds)?,
            tolerance: c.get_or("tolerance", d.tolerance)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseRow {
    pub lag: usize,
    pub mean_sq_norm: f64,
    /// `n_x n_y nu_c nu_f nu_w^j`.
    pub predicted: f64,
    pub rel_dev: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseOutcome {
    pub rows: Vec<ImpulseRow>,
    /// Spectral radius of `W / sqrt(n)` averaged over the first seeds.
    pub spectral_radius: f64,
    pub passed: bool,
}

pub fn impulse_stats(spec: &ImpulseSpec, seed: u64) -> Result<ImpulseOutcome> {
    if spec.seeds == 0 {
        return Err(invalid("need at least one seed"));
    }
    let mut sums = vec![0.0; spec.steps];
    let mut radius = 0.0;
    let radius_seeds = spec.radius_seeds.min(spec.seeds);
    for k in 0..spec.seeds {
        let p = init_rnn(spec.n, spec.n_x, spec.n_y, spec.variances, &SeededSampler::new(seed, 5000 + k))?;
        for (s, norm) in sums.iter_mut().zip(rnn_impulse(&p, spec.steps)?.lag_norms()) {
            *s += norm * norm / spec.seeds as f64;
        }
        if k < radius_seeds {
            radius += spectral_radius(&p)? / radius_seeds as f64;
        }
    }
    let v = spec.variances;
    let rows: Vec<ImpulseRow> = sums
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let predicted = (spec.n_x * spec.n_y) as f64 * v.nu_c * v.nu_f * v.nu_w.powi(j as i32);
            ImpulseRow { lag: j, mean_sq_norm: m, predicted, rel_dev: (m - predicted).abs() / predicted }
        })
        .collect();
    let passed = rows.iter().all(|r| r.rel_dev <= spec.tolerance);
    Ok(ImpulseOutcome { rows, spectral_radius: if radius_seeds > 0 { radius } else { f64::NAN }, passed })
}

/// State-evolution diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SeSpec {
    pub nu_w: f64,
    pub nu_f: f64,
    pub nu_c: f64,
    pub n_x: usize,
    pub steps: usize,
    pub widths: Vec<usize>,
    pub trials: usize,
}

impl Default for SeSpec {
    fn default() -> Self {
        Self { nu_w: 0.3, nu_f: 1.0, nu_c: 1.0, n_x: 3, steps: 5, widths: vec![250, 1000, 4000], trials: 20 }
    }
}

pub const SE_KEYS: &[&str] = &["nu_w", "nu_f", "nu_c", "n_x", "steps", "widths", "trials"];

impl SeSpec {
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            nu_w: c.get_or("nu_w", d.nu_w)?,
            nu_f: c.get_or("nu_f", d.nu_f)?,
            nu_c: c.get_or("nu_c", d.nu_c)?,
            n_x: c.get_or("n_x", d.n_x)?,
            steps: c.get_or("steps", d.steps)?,
            widths: c.list_or("widths", d.widths)?,
            trials: c.get_or("trials", d.trials)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeOutcome {
    pub rows: Vec<SeReportRow>,
    /// Largest relative difference between the iterated and closed-form
    /// `tau` over `t <= 64`.
    pub tau_dev: f64,
    /// Largest relative difference between the two routes to `rho`.
    pub rho_dev: f64,
    /// Largest entrywise deviation of the trial-pooled row covariance from
    /// `tau_{t1} I`, relative to `tau_{t1}`, at the largest width.
    pub cov_dev: f64,
    /// Largest trial-pooled correlation between rows of `q_t` and `q_s`,
    /// `t != s`, at the largest width.
    pub cross_corr: f64,
    pub w2_decreasing: bool,
    /// Smallest ratio `W2(n_min) / W2(n_max)` over `t`.
    pub w2_ratio: f64,
    pub kurtosis_range: (f64, f64),
    pub passed: bool,
}

pub fn se_report(spec: &SeSpec, seed: u64) -> Result<SeOutcome> {
    let sampler = SeededSampler::new(seed, 7000);
    let rows = se_convergence_report(spec.nu_w, spec.nu_f, spec.n_x, spec.steps, &spec.widths, spec.trials, &sampler)?;

    let long = tau_recursion(65, spec.nu_w, spec.nu_f)?;
    let mut tau_dev: f64 = 0.0;
    for t in 0..65 {
        let (c1, c2) = tau_closed_form(t, spec.nu_w, spec.nu_f);
        tau_dev = tau_dev.max(rel(long.tau1[t], c1)).max(rel(long.tau2[t], c2));
    }
    let rho_se = ntk_scales_from_se(spec.steps, spec.nu_w, spec.nu_f, spec.nu_c)?;
    let rho_cf = scale_factors(spec.steps, spec.nu_w, spec.nu_f, spec.nu_c)?;
    let rho_dev = rho_se.rho().iter().zip(rho_cf.rho()).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);

    let n_max = *spec.widths.iter().max().ok_or_else(|| invalid("no widths"))?;
    let se = tau_recursion(spec.steps, spec.nu_w, spec.nu_f)?;
    // trial-pooled second moments q_t^T q_s
    let mut cross = vec![vec![DMatrix::zeros(spec.n_x, spec.n_x); spec.steps]; spec.steps];
    for trial in 0..spec.trials {
        let q = finite_n_q_recursion(
            n_max,
            spec.n_x,
            spec.steps,
            spec.nu_w,
            spec.nu_f,
            &sampler.substream(1 << 40 | trial as u64),
        )?
        .q;
        for t in 0..spec.steps {
            for s in 0..spec.steps {
                cross[t][s] += q[t].tr_mul(&q[s]);
            }
        }
    }
    let rows_total = (n_max * spec.trials) as f64;
    let mut cov_dev: f64 = 0.0;
    for t in 0..spec.steps {
        let target = DMatrix::identity(spec.n_x, spec.n_x) * se.tau1[t];
        if se.tau1[t] > 0.0 {
            cov_dev = cov_dev.max((&cross[t][t] / rows_total - target).abs().max() / se.tau1[t]);
        }
    }
    let mut cross_corr: f64 = 0.0;
    for t in 0..spec.steps {
        for s in 0..spec.steps {
            if s == t {
                continue;
            }
            for i in 0..spec.n_x {
                for j in 0..spec.n_x {
                    let d = (cross[t][t][(i, i)] * cross[s][s][(j, j)]).sqrt();
                    if d > 0.0 {
                        cross_corr = cross_corr.max((cross[t][s][(i, j)] / d).abs());
                    }
                }
            }
        }
    }
    let n_min = *spec.widths.iter().min().unwrap();
    let mut w2_decreasing = true;
    let mut w2_ratio = f64::INFINITY;
    for t in 0..spec.steps {
        let by_width: Vec<f64> =
            spec.widths.iter().map(|&n| rows.iter().find(|r| r.n == n && r.t == t).unwrap().w2).collect();
        w2_decreasing &= strictly_decreasing(&by_width);
        let at = |n: usize| rows.iter().find(|r| r.n == n && r.t == t).unwrap().w2;
        w2_ratio = w2_ratio.min(at(n_min) / at(n_max));
    }
    let kurt: Vec<f64> = rows.iter().filter(|r| r.n == n_max).map(|r| r.kurtosis).collect();
    let kurtosis_range =
        (kurt.iter().copied().fold(f64::INFINITY, f64::min), kurt.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let passed = tau_dev <= 1e-13
        && rho_dev <= 1e-14
        && cov_dev <= 0.1
        && cross_corr <= 0.05
        && w2_decreasing
        && kurtosis_range.0 >= 2.8
        && kurtosis_range.1 <= 3.2;
    Ok(SeOutcome { rows, tau_dev, rho_dev, cov_dev, cross_corr, w2_decreasing, w2_ratio, kurtosis_range, passed })
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// The CLI subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainCompare,
    DelaySweep,
    NtkCheck,
    ImpulseStats,
    SeReport,
    Ingest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainCompare => "train-compare",
            Command::DelaySweep => "delay-sweep",
            Command::NtkCheck => "ntk-check",
            Command::ImpulseStats => "impulse-stats",
            Command::SeReport => "se-report",
            Command::Ingest => "ingest",
        }
    }

    fn allowed_keys(self) -> Vec<&'static str> {
        let mut k: Vec<&'static str> = match self {
            Command::GenData => TEACHER_KEYS.to_vec(),
            Command::TrainCompare => [TEACHER_KEYS, COMPARE_KEYS, TRAIN_KEYS].concat(),
            Command::DelaySweep => [DELAY_KEYS, TRAIN_KEYS].concat(),
            Command::NtkCheck => NTK_KEYS.to_vec(),
            Command::ImpulseStats => IMPULSE_KEYS.to_vec(),
            Command::SeReport => SE_KEYS.to_vec(),
            Command::Ingest => vec!["data_dir"],
        };
        k.sort_unstable();
        k
    }
}

/// What a command reports back: whether its built-in checks passed and a
/// few human-readable summary lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub passed: bool,
    pub lines: Vec<String>,
    pub files: Vec<String>,
}

struct Out<'a> {
    dir: &'a Path,
    stamp: Stamp,
    files: Vec<String>,
}

impl Out<'_> {
    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), body)?;
        self.files.push(name.into());
        Ok(())
    }

    fn csv(&mut self, name: &str, what: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let mut s = String::new();
        for line in self.stamp.comment(what).lines() {
            writeln!(s, "# {line}").unwrap();
        }
        writeln!(s, "{header}").unwrap();
        for r in rows {
            writeln!(s, "{r}").unwrap();
        }
        self.write(name, &s)
    }
}

/// Runs one subcommand, writing its artifacts into `out_dir`.
pub fn run_command(cmd: Command, config: &Config, seed: u64, out_dir: &Path) -> Result<RunSummary> {
    config.check_keys(&cmd.allowed_keys())?;
    crate::io::prepare_out_dir(out_dir)?;
    let stamp = Stamp { seed, config_hash: config.hash() };
    let mut out = Out { dir: out_dir, stamp: stamp.clone(), files: Vec::new() };
    out.write(
        "config_used.txt",
        &format!("# command={} seed={seed} config_hash={}\n{}", cmd.name(), stamp.config_hash, config.canonical()),
    )?;
    let mut summary = match cmd {
        Command::GenData => run_gen_data(config, seed, &mut out)?,
        Command::TrainCompare => run_train_compare(config, seed, &mut out)?,
        Command::DelaySweep => run_delay_sweep(config, seed, &mut out)?,
        Command::NtkCheck => run_ntk_check(config, seed, &mut out)?,
        Command::ImpulseStats => run_impulse_stats(config, seed, &mut out)?,
        Command::SeReport => run_se_report(config, seed, &mut out)?,
        Command::Ingest => run_ingest(config, &mut out)?,
    };
    summary.files = out.files;
    Ok(summary)
}

fn run_gen_data(config: &Config, seed: u64, out: &mut Out) -> Result<RunSummary> {
    let spec = TeacherSpec::from_config(config)?;
    let data = gen_data(&spec, seed)?;
    let (all, split) = data.combined()?;
    let comment = out.stamp.comment("teacher-student dataset");
    write_dataset(&out.dir.join("data"), &all, &split, &comment)?;
    out.files.push("data/".into());
    save_rnn(&out.dir.join("teacher.txt"), &data.teacher, &comment)?;
    out.files.push("teacher.txt".into());
    Ok(RunSummary {
        passed: true,
        lines: vec![format!(
            "wrote {} training and {} test sequences (T={}, n_x={}, n_y={}, SNR={} dB)",
            data.train.len(),
            data.test.len(),
            spec.steps,
            spec.n_x,
            spec.n_y,
            spec.snr_db
        )],
        ..Default::default()
    })
}

fn load_or_generate(config: &Config, spec: &TeacherSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    match config.get_str("data_dir") {
        Some(dir) => {
            let (all, split) = read_dataset(Path::new(dir))?;
            if split.test.is_empty() {
                return Err(Error::Dataset { path: dir.into(), msg: "split has no test sequences".into() });
            }
            Ok((all.subset(&split.train)?, all.subset(&split.test)?))
        }
        None => {
            let d = gen_data(spec, seed)?;
            Ok((d.train, d.test))
        }
    }
}

fn run_train_compare(config: &Config, seed: u64, out: &mut Out) -> Result<RunSummary> {
    let spec = CompareSpec::from_config(config)?;
    let (train, test) = load_or_generate(config, &spec.data, seed)?;
    let res = train_compare(&spec, &train, &test, seed)?;
    let mut logs = vec![("loss_rnn.csv", &res.rnn), ("loss_conv_scaled.csv", &res.scaled)];
    if let Some(u) = &res.unscaled {
        logs.push(("loss_conv_unscaled.csv", u));
    }
    for (name, r) in logs {
        let mut buf = Vec::new();
        r.log.write_csv(&mut buf, &out.stamp.comment(&format!("trajectory of {}", r.log.model)))?;
        out.write(name, &String::from_utf8(buf).expect("ascii csv"))?;
    }
    let mut buf = Vec::new();
    res.report.write_csv(&mut buf, &out.stamp.comment("train-loss gap, rnn vs conv-scaled"))?;
    out.write("gap_report.csv", &String::from_utf8(buf).expect("ascii csv"))?;
    out.write("metrics.csv", &metrics_csv(&res.metrics, &out.stamp.comment("final metrics")))?;
    if let Model::Conv(c) = &res.scaled.model {
        save_conv(&out.dir.join("final_conv_scaled.txt"), c, &out.stamp.comment("trained scaled convolution"))?;
        out.files.push("final_conv_scaled.txt".into());
    }
    let mut lines = vec![format!(
        "max relative train-loss gap {:.4} (tolerance {}): {}",
        res.report.max_rel_gap,
        spec.tolerance,
        if res.report.passed { "PASS" } else { "FAIL" }
    )];
    for m in &res.metrics {
        lines.push(format!("{}: train_mse={:.5} test_mse={:.5} r2={:?}", m.arm, m.train_mse, m.test_mse, m.r2));
    }
    let mut passed = res.report.passed;
    let widths: Vec<usize> = config.list_or("trend_widths", vec![])?;
    if !widths.is_empty() {
        let seeds = config.get_or("trend_seeds", 10u64)?;
        let rows = gap_trend(&spec, &widths, seeds, seed)?;
        out.csv(
            "gap_trend.csv",
            "max relative train-loss gap per width and seed",
            "n,seed,max_rel_gap",
            rows.iter().map(|r| format!("{},{},{}", r.n, r.seed, fmt(r.max_rel_gap))),
        )?;
        let med = medians_by_width(&rows, |r| r.n, |r| r.max_rel_gap);
        let dec = strictly_decreasing(&med.iter().map(|m| m.1).collect::<Vec<_>>());
        lines.push(format!("median gaps by width {med:?}: {}", if dec { "decreasing" } else { "NOT decreasing" }));
        passed &= dec;
    }
    Ok(RunSummary { passed, lines, ..Default::default() })
}

fn run_delay_sweep(config: &Config, seed: u64, out: &mut Out) -> Result<RunSummary> {
    let spec = DelaySpec::from_config(config)?;
    let res = delay_sweep(&spec, seed)?;
    out.write("delay_sweep.csv", &metrics_csv(&res.rows, &out.stamp.comment("test error per delay and arm")))?;
    Ok(RunSummary {
        passed: res.passed,
        lines: vec![
            format!("spearman(error, delay): rnn {:.3}, conv-scaled {:.3}", res.spearman_rnn, res.spearman_scaled),
            format!("unscaled conv max error ratio to d=0 for d <= T/2: {:.3}", res.unscaled_ratio),
            format!("max per-delay rnn vs conv-scaled gap: {:.4}", res.max_gap),
        ],
        ..Default::default()
    })
}

fn run_ntk_check(config: &Config, seed: u64, out: &mut Out) -> Result<RunSummary> {
    let spec = NtkCheckSpec::from_config(config)?;
    let res = ntk_check(&spec, seed)?;
    out.csv(
        "ntk_check.csv",
        "empirical rnn kernel vs limit",
        "n,seed,rel_error,cross_channel",
        res.rows.iter().map(|r| format!("{},{},{},{}", r.n, r.seed, fmt(r.rel_error), fmt(r.cross_channel))),
    )?;
    out.csv(
        "ntk_summary.csv",
        "relative error summary",
        "n,mean_rel_error,median_rel_error",
        res.summary.iter().map(|(n, m, d)| format!("{n},{},{}", fmt(*m), fmt(*d))),
    )?;
    Ok(RunSummary {
        passed: res.passed,
        lines: res.summary.iter().map(|(n, m, d)| format!("n={n}: mean {m:.4}, median {d:.4}")).collect(),
        ..Default::default()
    })
}

fn run_impulse_stats(config: &Config, seed: u64, out: &mut Out) -> Result<RunSummary> {
    let spec = ImpulseSpec::from_config(config)?;
    let res = impulse_stats(&spec, seed)?;
    out.csv(
        "impulse_stats.csv",
        "mean squared impulse norms at initialization",
        "lag,mean_sq_norm,predicted,rel_dev",
        res.rows.iter().map(|r| format!("{},{},{},{}", r.lag, fmt(r.mean_sq_norm), fmt(r.predicted), fmt(r.rel_dev))),
    )?;
    let mut lines: Vec<String> = res
        .rows
        .iter()
        .map(|r| format!("lag {}: {:.5} vs {:.5} ({:.2}%)", r.lag, r.mean_sq_norm, r.predicted, 100.0 * r.rel_dev))
        .collect();
    lines.push(format!(
        "spectral radius of W/sqrt(n): {:.4} (sqrt(nu_w) = {:.4})",
        res.spectral_radius,
        spec.variances.nu_w.sqrt()
    ));
    Ok(RunSummary { passed: res.passed, lines, ..Default::default() })
}

fn run_se_report(config: &Config, seed: u64, out: &mut Out) -> Result<RunSummary> {
    let spec = SeSpec::from_config(config)?;
    let res = se_report(&spec, seed)?;
    out.csv(
        "se_report.csv",
        "state evolution vs finite-width simulation",
        "n,t,predicted_var,empirical_var,W2,kurtosis",
        res.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.n,
                r.t,
                fmt(r.predicted_var),
                fmt(r.empirical_var),
                fmt(r.w2),
                fmt(r.kurtosis)
            )
        }),
    )?;
    Ok(RunSummary {
        passed: res.passed,
        lines: vec![
            format!("tau recursion vs closed form: {:.2e}; rho routes: {:.2e}", res.tau_dev, res.rho_dev),
            format!("row covariance deviation {:.4}, cross correlation {:.4}", res.cov_dev, res.cross_corr),
            format!("W2 decreasing in n: {}; W2 ratio smallest/largest width: {:.2}", res.w2_decreasing, res.w2_ratio),
            format!("kurtosis range at largest width: [{:.3}, {:.3}]", res.kurtosis_range.0, res.kurtosis_range.1),
        ],
        ..Default::default()
    })
}

fn run_ingest(config: &Config, out: &mut Out) -> Result<RunSummary> {
    let dir = config.get_str("data_dir").ok_or_else(|| invalid("ingest needs `data_dir`"))?;
    let (data, split) = read_dataset(Path::new(dir))?;
    out.csv(
        "split.csv",
        "train/test membership",
        "index,set",
        (0..data.len()).map(|i| format!("{i},{}", if split.train.contains(&i) { "train" } else { "test" })),
    )?;
    Ok(RunSummary {
        passed: true,
        lines: vec![format!(
            "{} sequences (T={}, n_x={}, n_y={}): {} train, {} test",
            data.len(),
            data.steps(),
            data.input_channels(),
            data.output_channels(),
            split.train.len(),
            split.test.len()
        )],
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_teacher_matches_reference_setup() {
        let d = TeacherSpec::default();
        assert_eq!((d.teacher_n, d.steps, d.n_train, d.n_test, d.snr_db), (4, 10, 50, 50, 20.0));
        assert_eq!(d.variances, InitVariances::new(0.3, 1.0, 1.0));
    }

    #[test]
    fn noiseless_targets_regenerate_from_teacher() {
        let spec = TeacherSpec { snr_db: f64::INFINITY, n_train: 5, n_test: 3, ..Default::default() };
        let d = gen_data(&spec, 3).unwrap();
        assert_eq!(teacher_targets(&d.teacher, d.train.inputs()).unwrap(), d.train.targets());
        assert_eq!(teacher_targets(&d.teacher, d.test.inputs()).unwrap(), d.test.targets());
    }

    #[test]
    fn spearman_hand_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        // ties get average ranks: y ranks (0.5, 0.5, 2)
        let r = spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 5.0]);
        assert!((r - 0.75f64.sqrt()).abs() < 1e-12, "{r}");
    }

    #[test]
    fn r2_of_perfect_model_is_one() {
        let spec = TeacherSpec { snr_db: f64::INFINITY, n_train: 4, n_test: 4, ..Default::default() };
        let d = gen_data(&spec, 4).unwrap();
        let m = Model::Rnn(d.teacher.clone());
        let r2 = r2_scores(&m, &d.test).unwrap();
        assert!((r2[0] - 1.0).abs() < 1e-12);
        assert!(mse(&m, &d.test).unwrap() < 1e-24);
    }

    #[test]
    fn r2_is_at_most_one() {
        let spec = TeacherSpec { n_train: 4, n_test: 4, ..Default::default() };
        let d = gen_data(&spec, 5).unwrap();
        let arms = initial_arms(20, InitVariances::new(0.3, 1.0, 1.0), 10, 1, 1, 5).unwrap();
        for m in [Model::Rnn(arms.rnn), Model::Conv(arms.scaled), Model::Conv(arms.unscaled)] {
            assert!(r2_scores(&m, &d.test).unwrap()[0] <= 1.0);
        }
    }

    #[test]
    fn arms_share_initial_impulse() {
        let arms = initial_arms(30, InitVariances::new(0.3, 1.0, 1.0), 6, 2, 1, 1).unwrap();
        let l = rnn_impulse(&arms.rnn, 6).unwrap();
        for other in [arms.scaled.impulse().unwrap(), arms.unscaled.impulse().unwrap()] {
            assert!(l.lag_distances(&other).iter().all(|&d| d < 1e-12));
        }
    }

    #[test]
    fn delay_targets_are_shifted_readouts() {
        let spec = DelaySpec { n_x: 3, steps: 6, n_train: 2, n_test: 1, snr_db: f64::INFINITY, ..Default::default() };
        let (train, _) = delay_dataset(&spec, 2, 1).unwrap();
        let (train0, _) = delay_dataset(&spec, 0, 1).unwrap();
        let (y, y0) = (&train.targets()[0], &train0.targets()[0]);
        assert_eq!(y.data()[(0, 0)], 0.0);
        assert_eq!(y.data()[(1, 0)], 0.0);
        for t in 2..6 {
            assert!((y.data()[(t, 0)] - y0.data()[(t - 2, 0)]).abs() < 1e-15);
        }
        assert!(delay_dataset(&spec, 6, 1).is_err());
    }

    #[test]
    fn zero_lr_gives_flat_identical_curves() {
        let spec = CompareSpec {
            data: TeacherSpec { n_train: 5, n_test: 5, ..Default::default() },
            student_n: 30,
            train: TrainConfig::full_batch(0.0, 5),
            ..Default::default()
        };
        let d = gen_data(&spec.data, 1).unwrap();
        let r = train_compare(&spec, &d.train, &d.test, 1).unwrap();
        let l0 = r.rnn.log.entries[0].train_loss;
        assert!(r.rnn.log.entries.iter().all(|e| e.train_loss == l0));
        assert_eq!(r.report.max_abs_gap, 0.0);
        assert_eq!(r.unscaled.unwrap().log.entries.len(), 6);
    }

    #[test]
    fn medians_group_by_width() {
        let rows = [(1, 3.0), (2, 1.0), (1, 1.0), (2, 5.0), (1, 2.0)];
        let m = medians_by_width(&rows, |r| r.0, |r| r.1);
        assert_eq!(m, vec![(1, 2.0), (2, 3.0)]);
    }
}
