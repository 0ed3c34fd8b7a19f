use lrnn_core::conv::{conv_gradients, scale_factors, ConvParams};
use lrnn_core::ntk::{conv_ntk, empirical_rnn_ntk, gram, rnn_ntk_limit, Kernel};
use lrnn_core::realization::{conv_to_rnn, rnn_to_conv};
use lrnn_core::rnn::{rnn_gradients, RnnParams};
use lrnn_core::se::{tau_closed_form, tau_recursion, w2_gaussian};
use lrnn_core::{
    conv_forward, gaussian_matrix, init_rnn, rnn_forward, rnn_impulse, ImpulseResponse, InitVariances, ScaleVector,
    SeededSampler, Sequence,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn seq(steps: usize, ch: usize, s: &mut SeededSampler) -> Sequence {
    Sequence::new(gaussian_matrix(steps, ch, 1.0, s).unwrap()).unwrap()
}

fn random_impulse(steps: usize, n_y: usize, n_x: usize, s: &mut SeededSampler) -> ImpulseResponse {
    ImpulseResponse::new((0..steps).map(|_| gaussian_matrix(n_y, n_x, 1.0, s).unwrap()).collect()).unwrap()
}

fn rnn(n: usize, n_x: usize, n_y: usize, seed: u64) -> RnnParams {
    init_rnn(n, n_x, n_y, InitVariances::new(0.3, 1.0, 1.0), &SeededSampler::new(seed, 0)).unwrap()
}

fn conv(steps: usize, ny: usize, nx: usize, nu_w: f64, s: &mut SeededSampler) -> ConvParams {
    ConvParams::from_impulse(&random_impulse(steps, ny, nx, s), scale_factors(steps, nu_w, 1.0, 1.0).unwrap()).unwrap()
}

fn frob(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.abs().max()
}

fn random_psd(d: usize, s: &mut SeededSampler) -> DMatrix<f64> {
    let g = gaussian_matrix(d, d + 1, 1.0, s).unwrap();
    &g * g.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn models_are_linear(
        seed in any::<u64>(),
        steps in 1usize..8,
        nx in 1usize..3,
        ny in 1usize..3,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut s = SeededSampler::new(seed, 1);
        let (x, xp) = (seq(steps, nx, &mut s), seq(steps, nx, &mut s));
        let mix = x.scaled_sum(a, &xp, b).unwrap();
        let p = rnn(12, nx, ny, seed);
        let c = conv(steps, ny, nx, 0.3, &mut s);
        let lhs = rnn_forward(&p, &mix).unwrap();
        let rhs = rnn_forward(&p, &x).unwrap().scaled_sum(a, &rnn_forward(&p, &xp).unwrap(), b).unwrap();
        prop_assert!(max_abs(&(lhs.data() - rhs.data())) <= 1e-10 * (1.0 + max_abs(rhs.data())));
        let lhs = conv_forward(&c, &mix).unwrap();
        let rhs = conv_forward(&c, &x).unwrap().scaled_sum(a, &conv_forward(&c, &xp).unwrap(), b).unwrap();
        prop_assert!(max_abs(&(lhs.data() - rhs.data())) <= 1e-10 * (1.0 + max_abs(rhs.data())));
    }

    #[test]
    fn models_are_time_invariant(seed in any::<u64>(), steps in 2usize..9, k in 0usize..9, nx in 1usize..3) {
        let k = k % steps;
        let mut s = SeededSampler::new(seed, 2);
        let x = seq(steps, nx, &mut s);
        let p = rnn(10, nx, 2, seed);
        let shifted_out = rnn_forward(&p, &x.delayed(k)).unwrap();
        let out_shifted = rnn_forward(&p, &x).unwrap().delayed(k);
        let err = max_abs(&(shifted_out.data() - out_shifted.data()));
        prop_assert!(err <= 1e-12 * (1.0 + max_abs(out_shifted.data())));
    }

    #[test]
    fn rnn_output_is_its_impulse_convolution(seed in any::<u64>(), steps in 1usize..10, n in 1usize..20) {
        let mut s = SeededSampler::new(seed, 3);
        let x = seq(steps, 2, &mut s);
        let p = rnn(n, 2, 2, seed);
        let y = rnn_forward(&p, &x).unwrap();
        let yc = rnn_impulse(&p, steps).unwrap().apply(&x).unwrap();
        prop_assert!(max_abs(&(y.data() - yc.data())) <= 1e-11 * (1.0 + max_abs(y.data())));
    }

    #[test]
    fn rnn_gradient_matches_central_differences(
        seed in any::<u64>(),
        steps in 1usize..7,
        n in 2usize..8,
        nx in 1usize..3,
        ny in 1usize..3,
    ) {
        let mut s = SeededSampler::new(seed, 4);
        let x = seq(steps, nx, &mut s);
        let u = seq(steps, ny, &mut s);
        let p = rnn(n, nx, ny, seed);
        let g = rnn_gradients(&p, &x, &u).unwrap();
        let dw = gaussian_matrix(n, n, 1.0, &mut s).unwrap();
        let df = gaussian_matrix(n, nx, 1.0, &mut s).unwrap();
        let dc = gaussian_matrix(ny, n, 1.0, &mut s).unwrap();
        let objective = |eps: f64| {
            let q = RnnParams::new(&p.w + &dw * eps, &p.f + &df * eps, &p.c + &dc * eps).unwrap();
            rnn_forward(&q, &x).unwrap().data().dot(u.data())
        };
        let h = 1e-5;
        let fd = (objective(h) - objective(-h)) / (2.0 * h);
        let analytic = g.dw.dot(&dw) + g.df.dot(&df) + g.dc.dot(&dc);
        let scale = (g.dw.norm_squared() + g.df.norm_squared() + g.dc.norm_squared()).sqrt()
            * (dw.norm_squared() + df.norm_squared() + dc.norm_squared()).sqrt();
        prop_assert!((fd - analytic).abs() <= 1e-6 * scale.max(1e-12), "fd {fd} analytic {analytic}");
    }

    #[test]
    fn conv_gradient_matches_central_differences(
        seed in any::<u64>(),
        steps in 1usize..9,
        nx in 1usize..3,
        ny in 1usize..4,
    ) {
        let mut s = SeededSampler::new(seed, 5);
        let x = seq(steps, nx, &mut s);
        let u = seq(steps, ny, &mut s);
        let c = conv(steps, ny, nx, 0.3, &mut s);
        let g = conv_gradients(&c, &x, &u).unwrap();
        let dir: Vec<DMatrix<f64>> = (0..steps).map(|_| gaussian_matrix(ny, nx, 1.0, &mut s).unwrap()).collect();
        let objective = |eps: f64| {
            let theta = c.theta().iter().zip(&dir).map(|(t, d)| t + d * eps).collect();
            let q = ConvParams::new(theta, c.scales().clone()).unwrap();
            conv_forward(&q, &x).unwrap().data().dot(u.data())
        };
        let h = 1e-4;
        let fd = (objective(h) - objective(-h)) / (2.0 * h);
        let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a.dot(b)).sum();
        let scale = frob(&g) * frob(&dir);
        prop_assert!((fd - analytic).abs() <= 1e-6 * scale.max(1e-12), "fd {fd} analytic {analytic}");
    }

    #[test]
    fn conv_function_depends_only_on_scaled_filters(seed in any::<u64>(), steps in 1usize..8, c in 0.1f64..10.0) {
        let mut s = SeededSampler::new(seed, 6);
        let x = seq(steps, 2, &mut s);
        let a = conv(steps, 1, 2, 0.5, &mut s);
        let rho: Vec<f64> = a.scales().rho().iter().map(|r| r * c).collect();
        let theta = a.theta().iter().map(|t| t / c.sqrt()).collect();
        let b = ConvParams::new(theta, ScaleVector::custom(rho).unwrap()).unwrap();
        let (ya, yb) = (conv_forward(&a, &x).unwrap(), conv_forward(&b, &x).unwrap());
        prop_assert!(max_abs(&(ya.data() - yb.data())) <= 1e-12 * (1.0 + max_abs(ya.data())));
        // the kernel scales with rho
        let ka = conv_ntk(&x, &x, a.scales(), 1).unwrap();
        let kb = conv_ntk(&x, &x, b.scales(), 1).unwrap();
        prop_assert!(max_abs(&(ka.matrix() * c - kb.matrix())) <= 1e-10 * (1.0 + max_abs(kb.matrix())));
    }

    #[test]
    fn kernels_are_symmetric(seed in any::<u64>(), steps in 1usize..7, ny in 1usize..3) {
        let mut s = SeededSampler::new(seed, 7);
        let (x, xp) = (seq(steps, 2, &mut s), seq(steps, 2, &mut s));
        let v = InitVariances::new(0.3, 1.0, 1.0);
        let scales = scale_factors(steps, 0.3, 1.0, 1.0).unwrap();
        let p = rnn(15, 2, ny, seed);
        let pairs = [
            (conv_ntk(&x, &xp, &scales, ny).unwrap(), conv_ntk(&xp, &x, &scales, ny).unwrap()),
            (rnn_ntk_limit(&x, &xp, v, ny).unwrap(), rnn_ntk_limit(&xp, &x, v, ny).unwrap()),
            (empirical_rnn_ntk(&p, &x, &xp).unwrap(), empirical_rnn_ntk(&p, &xp, &x).unwrap()),
        ];
        for (k, kt) in pairs {
            let d = k.transpose().matrix() - kt.matrix();
            prop_assert!(max_abs(&d) <= 1e-10 * (1.0 + max_abs(k.matrix())));
        }
        let g = gram(&[x, xp], &Kernel::RnnLimit { variances: v, n_y: ny }).unwrap();
        prop_assert!(max_abs(&(&g.matrix - g.matrix.transpose())) <= 1e-12 * (1.0 + max_abs(&g.matrix)));
        prop_assert!(g.lambda_min >= -1e-9 * g.lambda_max.abs().max(1.0));
    }

    #[test]
    fn tau_recursion_matches_closed_form(nu_w in 0.0f64..1.5, nu_f in 0.0f64..3.0, steps in 1usize..65) {
        let se = tau_recursion(steps, nu_w, nu_f).unwrap();
        for t in 0..steps {
            let (a, b) = tau_closed_form(t, nu_w, nu_f);
            prop_assert!((se.tau1[t] - a).abs() <= 1e-13 * a.abs().max(f64::MIN_POSITIVE));
            prop_assert!((se.tau2[t] - b).abs() <= 1e-13 * b.abs().max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn w2_is_a_metric_on_gaussians(seed in any::<u64>(), d in 1usize..5) {
        let mut s = SeededSampler::new(seed, 8);
        let (a, b, c) = (random_psd(d, &mut s), random_psd(d, &mut s), random_psd(d, &mut s));
        let ab = w2_gaussian(&a, &b).unwrap();
        prop_assert!((ab - w2_gaussian(&b, &a).unwrap()).abs() <= 1e-8 * (1.0 + ab));
        prop_assert!(w2_gaussian(&a, &a).unwrap() <= 1e-6 * (1.0 + a.trace().sqrt()));
        let (ac, cb) = (w2_gaussian(&a, &c).unwrap(), w2_gaussian(&c, &b).unwrap());
        prop_assert!(ab <= ac + cb + 1e-8 * (1.0 + ab));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn realization_round_trip(seed in any::<u64>(), steps in 1usize..9, nx in 1usize..3, ny in 1usize..3) {
        let mut s = SeededSampler::new(seed, 9);
        let l = random_impulse(steps, ny, nx, &mut s);
        let p = conv_to_rnn(&l).unwrap();
        let back = rnn_impulse(&p, steps).unwrap();
        for d in l.lag_distances(&back) {
            prop_assert!(d <= 1e-8, "lag error {d}");
        }
        let c = rnn_to_conv(&p, steps, scale_factors(steps, 0.3, 1.0, 1.0).unwrap()).unwrap();
        for d in c.impulse().unwrap().lag_distances(&l) {
            prop_assert!(d <= 1e-8, "conv lag error {d}");
        }
    }
}
