//! State evolution for the linear RNN recursion `q_{t+1} = W q_t / sqrt(n)`,
//! `q_0 = F`.
//!
//! In the wide limit the rows of `q_t` behave like independent Gaussians
//! `Q_t ~ N(0, tau_{t1} I)`. Perturbing `(W, F)` by independent
//! standard-normal directions `(dW, dF)` gives a second block
//! `q~_{t+1} = (W q~_t + dW q_t) / sqrt(n)`, `q~_0 = dF`, with variance
//! `tau_{t2}`:
//!
//! ```text
//! tau_{0,1} = nu_f                 tau_{0,2} = 1
//! tau_{t+1,1} = nu_w tau_{t,1}     tau_{t+1,2} = nu_w tau_{t,2} + tau_{t,1}
//! ```
//!
//! Only the linear case is covered, where every Onsager-type predictor
//! coefficient of the general recursion vanishes.

use nalgebra::DMatrix;

use crate::conv::scale_factors;
use crate::error::{invalid, Result};
use crate::linalg::{psd_eigen, psd_sqrt};
use crate::sampler::{gaussian_matrix, SeededSampler};
use crate::scales::{ScaleProvenance, ScaleVector};

#[derive(Clone, Debug, PartialEq)]
pub struct SeState {
    pub nu_w: f64,
    pub nu_f: f64,
    /// Variance of the unperturbed limit variable `Q_t`.
    pub tau1: Vec<f64>,
    /// Variance of the perturbation block.
    pub tau2: Vec<f64>,
}

impl SeState {
    pub fn steps(&self) -> usize {
        self.tau1.len()
    }
}

/// Closed-form solution `(nu_w^t nu_f, t nu_f nu_w^{t-1} + nu_w^t)`.
pub fn tau_closed_form(t: usize, nu_w: f64, nu_f: f64) -> (f64, f64) {
    let pw = nu_w.powi(t as i32);
    let lag = if t == 0 { 0.0 } else { t as f64 * nu_f * nu_w.powi(t as i32 - 1) };
    (pw * nu_f, lag + pw)
}

/// Runs the `tau` recursion for `steps` time points.
pub fn tau_recursion(steps: usize, nu_w: f64, nu_f: f64) -> Result<SeState> {
    if steps == 0 {
        return Err(invalid("need T >= 1"));
    }
    let mut tau1 = Vec::with_capacity(steps);
    let mut tau2 = Vec::with_capacity(steps);
    let (mut a, mut b) = (nu_f, 1.0);
    for _ in 0..steps {
        tau1.push(a);
        tau2.push(b);
        (a, b) = (nu_w * a, nu_w * b + a);
    }
    Ok(SeState { nu_w, nu_f, tau1, tau2 })
}

/// NTK scale factors `rho_j = nu_c tau_{j2} + tau_{j1}` from the state
/// evolution. Must agree with [`scale_factors`].
pub fn ntk_scales_from_se(steps: usize, nu_w: f64, nu_f: f64, nu_c: f64) -> Result<ScaleVector> {
    // same positivity contract as the closed form
    scale_factors(steps, nu_w, nu_f, nu_c)?;
    let se = tau_recursion(steps, nu_w, nu_f)?;
    let rho = se.tau1.iter().zip(&se.tau2).map(|(t1, t2)| nu_c * t2 + t1).collect();
    ScaleVector::with_provenance(rho, ScaleProvenance::Analytic { nu_w, nu_f, nu_c })
}

/// One finite-width realization of `q_0 .. q_{T-1}` (each `n x n_x`), and
/// optionally the perturbation block `q~_t`.
#[derive(Clone, Debug)]
pub struct QTrajectory {
    pub q: Vec<DMatrix<f64>>,
    pub q_tilde: Option<Vec<DMatrix<f64>>>,
}

pub fn finite_n_q_recursion(
    n: usize,
    n_x: usize,
    steps: usize,
    nu_w: f64,
    nu_f: f64,
    sampler: &SeededSampler,
) -> Result<QTrajectory> {
    simulate(n, n_x, steps, nu_w, nu_f, sampler, false)
}

/// Like [`finite_n_q_recursion`] but also tracks the perturbation block
/// driven by standard-normal `(dW, dF)`.
pub fn finite_n_perturbed_recursion(
    n: usize,
    n_x: usize,
    steps: usize,
    nu_w: f64,
    nu_f: f64,
    sampler: &SeededSampler,
) -> Result<QTrajectory> {
    simulate(n, n_x, steps, nu_w, nu_f, sampler, true)
}

fn simulate(
    n: usize,
    n_x: usize,
    steps: usize,
    nu_w: f64,
    nu_f: f64,
    sampler: &SeededSampler,
    perturbed: bool,
) -> Result<QTrajectory> {
    if n == 0 || n_x == 0 || steps == 0 {
        return Err(invalid("n, n_x and T must be >= 1"));
    }
    // same substreams as init_rnn, so q_t matches that RNN's hidden impulse
    let w = gaussian_matrix(n, n, nu_w, &mut sampler.substream(0))?;
    let f = gaussian_matrix(n, n_x, nu_f, &mut sampler.substream(1))?;
    let s = 1.0 / (n as f64).sqrt();
    let mut q = vec![f];
    for t in 1..steps {
        let next = &w * &q[t - 1] * s;
        q.push(next);
    }
    let q_tilde = if perturbed {
        let dw = gaussian_matrix(n, n, 1.0, &mut sampler.substream(10))?;
        let df = gaussian_matrix(n, n_x, 1.0, &mut sampler.substream(11))?;
        let mut qt = vec![df];
        for t in 1..steps {
            let next = (&w * &qt[t - 1] + &dw * &q[t - 1]) * s;
            qt.push(next);
        }
        Some(qt)
    } else {
        None
    };
    Ok(QTrajectory { q, q_tilde })
}

/// `q^T q / n`: the empirical covariance of the rows of `q`.
pub fn row_covariance(q: &DMatrix<f64>) -> DMatrix<f64> {
    q.tr_mul(q) / q.nrows() as f64
}

/// Normalized cross-correlation matrix between the rows of `a` and `b`.
pub fn row_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let cross = a.tr_mul(b);
    DMatrix::from_fn(cross.nrows(), cross.ncols(), |i, j| {
        let d = a.column(i).norm() * b.column(j).norm();
        if d == 0.0 {
            0.0
        } else {
            cross[(i, j)] / d
        }
    })
}

/// Kurtosis `m4 / m2^2` of the pooled entries, after removing their mean.
pub fn kurtosis(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = (v - mean).powi(2);
        (a + d, b + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        f64::NAN
    } else {
        m4 / (m2 * m2)
    }
}

/// Wasserstein-2 distance between `N(0, a)` and `N(0, b)`:
/// `W2^2 = tr(a + b - 2 (a^{1/2} b a^{1/2})^{1/2})`.
pub fn w2_gaussian(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(crate::error::shape("covariances must be square and equal-sized"));
    }
    psd_eigen(b)?;
    let ra = psd_sqrt(a)?;
    let mid = &ra * b * &ra;
    let cross = psd_sqrt(&mid)?;
    let w2sq = a.trace() + b.trace() - 2.0 * cross.trace();
    Ok(w2sq.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeReportRow {
    pub n: usize,
    pub t: usize,
    pub predicted_var: f64,
    /// Mean over trials of the average diagonal of the row covariance.
    pub empirical_var: f64,
    /// Median over trials of the W2 distance to the predicted Gaussian.
    pub w2: f64,
    /// Kurtosis of the standardized entries, pooled across trials.
    pub kurtosis: f64,
}

/// Finite-width convergence table for the unperturbed recursion.
pub fn se_convergence_report(
    nu_w: f64,
    nu_f: f64,
    n_x: usize,
    steps: usize,
    n_list: &[usize],
    trials: usize,
    sampler: &SeededSampler,
) -> Result<Vec<SeReportRow>> {
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let se = tau_recursion(steps, nu_w, nu_f)?;
    let mut rows = Vec::new();
    for &n in n_list {
        let mut w2s = vec![Vec::with_capacity(trials); steps];
        let mut vars = vec![0.0; steps];
        let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); steps];
        for trial in 0..trials {
            let sub = sampler.substream(((n as u64) << 20) | trial as u64);
            let traj = finite_n_q_recursion(n, n_x, steps, nu_w, nu_f, &sub)?;
            for (t, q) in traj.q.iter().enumerate() {
                let cov = row_covariance(q);
                let target = DMatrix::identity(n_x, n_x) * se.tau1[t];
                w2s[t].push(w2_gaussian(&cov, &target)?);
                vars[t] += cov.trace() / n_x as f64 / trials as f64;
                let sd = (cov.trace() / n_x as f64).sqrt();
                if sd > 0.0 {
                    pooled[t].extend(q.iter().map(|v| v / sd));
                }
            }
        }
        for t in 0..steps {
            rows.push(SeReportRow {
                n,
                t,
                predicted_var: se.tau1[t],
                empirical_var: vars[t],
                w2: median(&mut w2s[t]),
                kurtosis: if pooled[t].is_empty() { f64::NAN } else { kurtosis(&pooled[t]) },
            });
        }
    }
    Ok(rows)
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::{hidden_impulse, init_rnn, InitVariances};

    #[test]
    fn initial_conditions() {
        let se = tau_recursion(1, 0.3, 1.7).unwrap();
        assert_eq!((se.tau1[0], se.tau2[0]), (1.7, 1.0));
    }

    #[test]
    fn hand_values_at_t2() {
        let se = tau_recursion(3, 0.3, 1.0).unwrap();
        assert!((se.tau1[2] - 0.09).abs() < 1e-15);
        assert!((se.tau2[2] - 0.69).abs() < 1e-15);
    }

    #[test]
    fn unit_recurrence_grows_linearly() {
        let se = tau_recursion(10, 1.0, 2.5).unwrap();
        for t in 0..10 {
            assert_eq!(se.tau2[t], t as f64 * 2.5 + 1.0);
            assert_eq!(se.tau1[t], 2.5);
        }
    }

    #[test]
    fn zero_output_variance_scales() {
        let s = ntk_scales_from_se(6, 0.4, 0.9, 1e-300).unwrap();
        for (j, r) in s.rho().iter().enumerate() {
            assert!((r - 0.9 * 0.4f64.powi(j as i32)).abs() < 1e-15);
        }
        let s = ntk_scales_from_se(1, 0.4, 0.9, 1.3).unwrap();
        assert!((s.rho()[0] - (1.3 + 0.9)).abs() < 1e-15);
    }

    #[test]
    fn no_recurrence_kills_later_steps() {
        let traj = finite_n_q_recursion(50, 2, 4, 0.0, 1.0, &SeededSampler::new(1, 0)).unwrap();
        assert!(traj.q[0].norm() > 0.0);
        for q in &traj.q[1..] {
            assert_eq!(q.norm(), 0.0);
        }
    }

    #[test]
    fn simulation_matches_rnn_hidden_impulse() {
        let sampler = SeededSampler::new(12, 4);
        let traj = finite_n_q_recursion(30, 2, 5, 0.3, 1.0, &sampler).unwrap();
        let p = init_rnn(30, 2, 1, InitVariances::new(0.3, 1.0, 1.0), &sampler).unwrap();
        for (a, b) in traj.q.iter().zip(hidden_impulse(&p, 5)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn w2_identical_is_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(w2_gaussian(&a, &a).unwrap() < 1e-7);
    }

    #[test]
    fn w2_isotropic_closed_form() {
        let d = 3;
        let (a, b) = (2.0f64, 0.5f64);
        let w = w2_gaussian(&(DMatrix::identity(d, d) * a), &(DMatrix::identity(d, d) * b)).unwrap();
        assert!((w * w - d as f64 * (a.sqrt() - b.sqrt()).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn w2_scalar() {
        let w = w2_gaussian(&DMatrix::from_element(1, 1, 4.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w2_rejects_indefinite() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(w2_gaussian(&bad, &DMatrix::identity(2, 2)).is_err());
        assert!(w2_gaussian(&DMatrix::identity(2, 2), &bad).is_err());
    }

    #[test]
    fn report_with_zero_input_variance() {
        let rows = se_convergence_report(0.3, 0.0, 2, 3, &[20], 2, &SeededSampler::new(0, 0)).unwrap();
        assert!(rows.iter().all(|r| r.w2 == 0.0 && r.predicted_var == 0.0));
    }

    #[test]
    fn kurtosis_of_two_point_distribution() {
        assert!((kurtosis(&[1.0, -1.0, 1.0, -1.0]) - 1.0).abs() < 1e-15);
    }
}
