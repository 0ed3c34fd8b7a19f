//! Conversions between the two parameterizations.
//!
//! RNN to convolution is direct: the filter is the RNN's impulse response
//! divided by `sqrt(rho_j)`. The converse builds one `T`-state diagonal
//! system per (output, input) channel pair, with distinct real poles
//! `lambda_k`. Each pair's output weights solve the transposed Vandermonde
//! system `sum_k c_k lambda_k^t = L_t[a, b]`, and the pair systems are
//! stacked block-diagonally into `T * n_x * n_y` hidden states. Factors of
//! `sqrt(n)` keep the result in the scaled form used by [`crate::rnn`].

use nalgebra::{DMatrix, DVector};

use crate::conv::ConvParams;
use crate::error::{Error, Result};
use crate::impulse::ImpulseResponse;
use crate::rnn::{rnn_impulse, RnnParams};
use crate::scales::ScaleVector;

/// Condition estimates above this are refused outright.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative residual the refined Vandermonde solution must reach.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Poles are Chebyshev points of the first kind on `[-POLE_RADIUS, POLE_RADIUS]`.
pub const POLE_RADIUS: f64 = 0.9;

pub fn rnn_to_conv(p: &RnnParams, steps: usize, scales: ScaleVector) -> Result<ConvParams> {
    ConvParams::from_impulse(&rnn_impulse(p, steps)?, scales)
}

/// `lambda_k = r cos((2k + 1) pi / (2T))`, distinct and inside the unit
/// interval so the realized system is stable.
pub fn chebyshev_poles(steps: usize) -> Vec<f64> {
    (0..steps).map(|k| POLE_RADIUS * ((2 * k + 1) as f64 * std::f64::consts::PI / (2 * steps) as f64).cos()).collect()
}

#[derive(Clone, Debug)]
pub struct VandermondeSolution {
    pub coeffs: DVector<f64>,
    /// 1-norm condition estimate of the system matrix.
    pub condition: f64,
    pub relative_residual: f64,
}

/// `V_{tk} = lambda_k^t`.
pub fn power_matrix(poles: &[f64]) -> DMatrix<f64> {
    let n = poles.len();
    DMatrix::from_fn(n, n, |t, k| poles[k].powi(t as i32))
}

/// Björck-Pereyra elimination for `sum_k z_k lambda_k^t = b_t`, `O(T^2)`.
fn bjorck_pereyra(poles: &[f64], rhs: &DVector<f64>) -> DVector<f64> {
    let mut f = rhs.clone();
    let n = poles.len();
    if n < 2 {
        return f;
    }
    let last = n - 1;
    for k in 0..last {
        for i in (k + 1..=last).rev() {
            f[i] -= poles[k] * f[i - 1];
        }
    }
    for k in (0..last).rev() {
        for i in k + 1..=last {
            f[i] /= poles[i] - poles[i - k - 1];
        }
        for i in k..last {
            f[i] -= f[i + 1];
        }
    }
    f
}

/// Solves `sum_k z_k lambda_k^t = b_t` by Björck-Pereyra with two steps of
/// iterative refinement, reporting a 1-norm condition estimate.
pub fn solve_vandermonde(poles: &[f64], rhs: &DVector<f64>) -> Result<VandermondeSolution> {
    let n = poles.len();
    if n != rhs.len() || n == 0 {
        return Err(Error::Shape(format!("{n} poles for {} right-hand sides", rhs.len())));
    }
    for i in 0..n {
        for k in 0..i {
            if poles[i] == poles[k] {
                return Err(Error::InvalidArgument(format!("poles {k} and {i} coincide")));
            }
        }
    }
    let v = power_matrix(poles);
    let mut inv_norm: f64 = 0.0;
    for col in 0..n {
        let e = DVector::from_fn(n, |i, _| if i == col { 1.0 } else { 0.0 });
        inv_norm = inv_norm.max(bjorck_pereyra(poles, &e).lp_norm(1));
    }
    let v_norm = (0..n).map(|k| v.column(k).lp_norm(1)).fold(0.0, f64::max);
    let condition = v_norm * inv_norm;

    let mut z = bjorck_pereyra(poles, rhs);
    for _ in 0..2 {
        let r = rhs - &v * &z;
        z += bjorck_pereyra(poles, &r);
    }
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    let relative_residual = if rhs.norm() == 0.0 { (&v * &z).norm() } else { (rhs - &v * &z).norm() / scale };
    if !condition.is_finite() || condition > MAX_CONDITION || relative_residual > RESIDUAL_TOL {
        return Err(Error::IllConditioned { condition, residual: relative_residual });
    }
    Ok(VandermondeSolution { coeffs: z, condition, relative_residual })
}

/// Builds an RNN with exactly `T * n_x * n_y` hidden states whose first `T`
/// impulse-response coefficients equal `l`.
pub fn conv_to_rnn(l: &ImpulseResponse) -> Result<RnnParams> {
    let (steps, nx, ny) = (l.steps(), l.input_channels(), l.output_channels());
    let n = steps * nx * ny;
    let sn = (n as f64).sqrt();
    let poles = chebyshev_poles(steps);
    let mut w = DMatrix::zeros(n, n);
    let mut f = DMatrix::zeros(n, nx);
    let mut c = DMatrix::zeros(ny, n);
    for a in 0..ny {
        for b in 0..nx {
            let base = (a * nx + b) * steps;
            let rhs = DVector::from_fn(steps, |t, _| l.lag(t)[(a, b)]);
            let sol = solve_vandermonde(&poles, &rhs)?;
            for k in 0..steps {
                w[(base + k, base + k)] = sn * poles[k];
                f[(base + k, b)] = 1.0;
                c[(a, base + k)] = sn * sol.coeffs[k];
            }
        }
    }
    RnnParams::new(w, f, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{conv_forward, scale_factors};
    use crate::rnn::{init_rnn, rnn_forward, InitVariances};
    use crate::sampler::{gaussian_matrix, SeededSampler};
    use crate::seq::Sequence;

    fn random_impulse(steps: usize, ny: usize, nx: usize, seed: u64) -> ImpulseResponse {
        let mut s = SeededSampler::new(seed, 0);
        ImpulseResponse::new((0..steps).map(|_| gaussian_matrix(ny, nx, 1.0, &mut s).unwrap()).collect()).unwrap()
    }

    fn max_lag_error(a: &ImpulseResponse, b: &ImpulseResponse) -> f64 {
        a.lag_distances(b).into_iter().fold(0.0, f64::max)
    }

    #[test]
    fn poles_distinct_and_stable() {
        for t in 1..=16 {
            let p = chebyshev_poles(t);
            assert!(p.iter().all(|l| l.abs() < 1.0));
            for i in 0..t {
                for k in 0..i {
                    assert!((p[i] - p[k]).abs() > 1e-3);
                }
            }
        }
    }

    #[test]
    fn vandermonde_matches_dense_solve() {
        let poles = chebyshev_poles(7);
        let rhs = DVector::from_fn(7, |i, _| (i as f64 * 0.7).sin() + 0.3);
        let sol = solve_vandermonde(&poles, &rhs).unwrap();
        let dense = power_matrix(&poles).lu().solve(&rhs).unwrap();
        assert!((&sol.coeffs - dense).norm() < 1e-9 * sol.coeffs.norm());
        assert!(sol.relative_residual < 1e-14);
        assert!(sol.condition > 1.0);
    }

    #[test]
    fn coincident_poles_rejected() {
        assert!(solve_vandermonde(&[0.1, 0.5, 0.1], &DVector::zeros(3)).is_err());
    }

    #[test]
    fn nearly_coincident_poles_report_condition() {
        let poles = [0.3, 0.3 + 1e-9, 0.3 + 2e-9, 0.5];
        match solve_vandermonde(&poles, &DVector::from_element(4, 1.0)) {
            Err(Error::IllConditioned { condition, .. }) => assert!(condition > MAX_CONDITION),
            other => panic!("expected ill-conditioning, got {other:?}"),
        }
    }

    #[test]
    fn memoryless_round_trip() {
        let mut l = random_impulse(5, 2, 2, 4).into_coeffs();
        for lj in l.iter_mut().skip(1) {
            lj.fill(0.0);
        }
        let l = ImpulseResponse::new(l).unwrap();
        let p = conv_to_rnn(&l).unwrap();
        assert!(max_lag_error(&rnn_impulse(&p, 5).unwrap(), &l) < 1e-10);
    }

    #[test]
    fn siso_round_trip() {
        let l = random_impulse(6, 1, 1, 9);
        let p = conv_to_rnn(&l).unwrap();
        assert_eq!(p.hidden(), 6);
        assert!(max_lag_error(&rnn_impulse(&p, 6).unwrap(), &l) <= 1e-8);
    }

    #[test]
    fn mimo_round_trip_state_count() {
        let l = random_impulse(5, 2, 2, 10);
        let p = conv_to_rnn(&l).unwrap();
        assert_eq!(p.hidden(), 20);
        assert!(max_lag_error(&rnn_impulse(&p, 5).unwrap(), &l) <= 1e-8);
    }

    #[test]
    fn rnn_to_conv_unit_scales_is_impulse() {
        let p = init_rnn(12, 2, 1, InitVariances::new(0.3, 1.0, 1.0), &SeededSampler::new(5, 0)).unwrap();
        let conv = rnn_to_conv(&p, 6, ScaleVector::unit(6)).unwrap();
        assert_eq!(conv.theta(), rnn_impulse(&p, 6).unwrap().coeffs());
    }

    #[test]
    fn rnn_to_conv_preserves_outputs() {
        let t = 7;
        let p = init_rnn(30, 2, 3, InitVariances::new(0.3, 1.0, 1.0), &SeededSampler::new(6, 0)).unwrap();
        let conv = rnn_to_conv(&p, t, scale_factors(t, 0.3, 1.0, 1.0).unwrap()).unwrap();
        let mut s = SeededSampler::new(6, 1);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x = Sequence::new(gaussian_matrix(t, 2, 1.0, &mut s).unwrap()).unwrap();
            let yr = rnn_forward(&p, &x).unwrap();
            let yc = conv_forward(&conv, &x).unwrap();
            worst = worst.max((yr.data() - yc.data()).norm() / yr.data().norm());
        }
        assert!(worst <= 1e-10, "worst {worst}");
    }

    #[test]
    fn conv_round_trip_preserves_behavior() {
        let t = 6;
        let l = random_impulse(t, 2, 1, 17);
        let rnn = conv_to_rnn(&l).unwrap();
        let conv = rnn_to_conv(&rnn, t, ScaleVector::unit(t)).unwrap();
        let mut s = SeededSampler::new(17, 3);
        for _ in 0..10 {
            let x = Sequence::new(gaussian_matrix(t, 1, 1.0, &mut s).unwrap()).unwrap();
            let a = l.apply(&x).unwrap();
            let b = conv_forward(&conv, &x).unwrap();
            let r = rnn_forward(&rnn, &x).unwrap();
            assert!((a.data() - b.data()).norm() <= 1e-8 * a.data().norm().max(1.0));
            assert!((a.data() - r.data()).norm() <= 1e-8 * a.data().norm().max(1.0));
        }
    }
}
