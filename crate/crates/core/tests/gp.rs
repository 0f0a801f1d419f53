mod common;

use common::*;
use gpkrige::evaluation::score_full;
use gpkrige::gp::{
    concentrated_tau2, default_init, fit_mle, log_likelihood, profile_gradient, profile_log_likelihood, GpFit,
    MleOptions, PredictOptions,
};
use gpkrige::kernel::{cov_assemble, Family, Hyperparams, Kernel, MaternNu};
use gpkrige::points::Points;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn phi(family: Family, theta: Vec<f64>, tau2: f64, g: f64) -> Hyperparams {
    Hyperparams::new(tau2, g, Kernel::new(family, theta).unwrap()).unwrap()
}

#[test]
fn log_likelihood_matches_dense_density() {
    let mut r = rng(10);
    let x = uniform_points(50, 2, &mut r);
    for p in [
        phi(Family::GAUSSIAN, vec![0.1], 2.0, 0.05),
        phi(Family::Matern { nu: MaternNu::FiveHalves }, vec![0.2, 0.05], 0.7, 0.2),
        phi(Family::PowerExp { p: 1.0 }, vec![0.3], 1.0, 1e-4),
    ] {
        let y = gp_draw(&p, &x, &mut r);
        let got = log_likelihood(&p, &x, &y).unwrap();
        let want = mvn_log_density(&y, &vec![0.0; y.len()], &dense_cov(&p, &x));
        assert!(rel_diff(got, want) < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn concentrated_scale_maximizes_the_likelihood() {
    let mut r = rng(11);
    let x = uniform_points(60, 1, &mut r);
    let k = Kernel::isotropic(Family::GAUSSIAN, 0.02).unwrap();
    let y = gp_draw(&phi(Family::GAUSSIAN, vec![0.02], 3.0, 0.1), &x, &mut r);
    let g = 0.1;
    let tau2 = concentrated_tau2(g, &k, &x, &y).unwrap();
    let at = |t: f64| log_likelihood(&Hyperparams::new(t, g, k.clone()).unwrap(), &x, &y).unwrap();
    let best = at(tau2);
    let grid_best = (1..=400).map(|i| tau2 * (0.2 + 0.01 * i as f64)).max_by(|a, b| at(*a).total_cmp(&at(*b))).unwrap();
    assert!((grid_best / tau2 - 1.0).abs() <= 0.01);
    assert!(best >= at(grid_best));
    assert!((profile_log_likelihood(g, &k, &x, &y).unwrap() - best).abs() < 1e-9 * best.abs());
}

#[test]
fn profile_gradient_matches_finite_differences() {
    let mut r = rng(12);
    let x = uniform_points(40, 2, &mut r);
    let y = smooth_response(&x, 0.1, &mut r);
    for fam in [Family::GAUSSIAN, Family::Matern { nu: MaternNu::ThreeHalves }] {
        let theta = vec![0.15, 0.4];
        let g = 0.03;
        let k = Kernel::new(fam, theta.clone()).unwrap();
        let grad = profile_gradient(g, &k, &x, &y).unwrap();
        let f =
            |g: f64, th: &[f64]| profile_log_likelihood(g, &Kernel::new(fam, th.to_vec()).unwrap(), &x, &y).unwrap();
        let h = 1e-6 * g;
        let fd_g = (f(g + h, &theta) - f(g - h, &theta)) / (2.0 * h);
        assert!((grad[0] - fd_g).abs() < 1e-4 * fd_g.abs().max(1.0));
        for c in 0..2 {
            let h = 1e-6 * theta[c];
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[c] += h;
            dn[c] -= h;
            let fd = (f(g, &up) - f(g, &dn)) / (2.0 * h);
            assert!((grad[1 + c] - fd).abs() < 1e-4 * fd.abs().max(1.0), "{fam} c={c}");
        }
    }
}

#[test]
fn mle_recovers_generating_parameters() {
    let mut r = rng(13);
    let x = uniform_points(400, 2, &mut r);
    let truth = phi(Family::GAUSSIAN, vec![0.05], 1.0, 0.1);
    let y = gp_draw_fast(&truth, &x, &mut r);
    let init = default_init(&x, Family::GAUSSIAN, false).unwrap();
    let fit = fit_mle(&x, &y, &init, &MleOptions::default()).unwrap();
    assert!(fit.converged());
    let theta = fit.phi.kernel.lengthscales()[0];
    assert!((theta / 0.05 - 1.0).abs() < 0.25, "theta {theta}");
    assert!((fit.phi.g / 0.1 - 1.0).abs() < 0.25, "g {}", fit.phi.g);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    assert!((fit.y_mean - mean).abs() < 1e-15);
}

#[test]
fn mle_optimum_beats_perturbations() {
    let mut r = rng(14);
    let x = uniform_points(120, 2, &mut r);
    let y = smooth_response(&x, 0.2, &mut r);
    let init = default_init(&x, Family::GAUSSIAN, true).unwrap();
    let fit = fit_mle(&x, &y, &init, &MleOptions::default()).unwrap();
    let yc: Vec<f64> = y.iter().map(|v| v - fit.y_mean).collect();
    let best = profile_log_likelihood(fit.phi.g, &fit.phi.kernel, &x, &yc).unwrap();
    assert!((best - fit.loglik).abs() < 1e-8 * best.abs());
    for _ in 0..100 {
        let g = fit.phi.g * (r.random_range(-0.3f64..0.3)).exp();
        let th: Vec<f64> =
            fit.phi.kernel.lengthscales().iter().map(|t| t * r.random_range(-0.3f64..0.3).exp()).collect();
        let k = fit.phi.kernel.with_lengthscales(th).unwrap();
        assert!(profile_log_likelihood(g, &k, &x, &yc).unwrap() <= best + 1e-6);
    }
}

#[test]
fn prediction_matches_dense_conditioning() {
    let mut r = rng(15);
    let x = uniform_points(5, 2, &mut r);
    let xs = uniform_points(3, 2, &mut r);
    let p = phi(Family::Matern { nu: MaternNu::FiveHalves }, vec![0.3, 0.1], 1.4, 0.08);
    let y: Vec<f64> = (0..5).map(|_| 1.0 + normal(&mut r)).collect();
    let fit = GpFit::with_hyperparams(p.clone(), x.clone(), y.clone()).unwrap();
    let pred = fit.predict(&xs, true).unwrap();
    let ybar = y.iter().sum::<f64>() / 5.0;
    let sigma = dense_cov(&p, &x);
    let resid: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let alpha = solve(&sigma, &resid);
    let kstar: Vec<Vec<f64>> = (0..3).map(|j| (0..5).map(|i| p.cov(x.row(i), xs.row(j))).collect()).collect();
    let cov = pred.cov.unwrap();
    for j in 0..3 {
        let mean = ybar + kstar[j].iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
        assert!((pred.mean[j] - mean).abs() < 1e-10);
        for l in 0..3 {
            let w = solve(&sigma, &kstar[l]);
            let mut c = p.cov(xs.row(j), xs.row(l)) - kstar[j].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            if j == l {
                c += p.tau2 * p.g;
            }
            assert!((cov[(j, l)] - c).abs() < 1e-10);
        }
        assert!((pred.var[j] - cov[(j, j)]).abs() < 1e-12);
    }
    let latent = fit.predict_with(&xs, PredictOptions { full_cov: false, latent: true }).unwrap();
    for j in 0..3 {
        assert!((pred.var[j] - latent.var[j] - p.tau2 * p.g).abs() < 1e-12);
    }
}

#[test]
fn full_covariance_diagonal_equals_pointwise_variance() {
    let mut r = rng(16);
    let x = uniform_points(80, 3, &mut r);
    let y = smooth_response(&x, 0.05, &mut r);
    let fit = GpFit::with_hyperparams(phi(Family::GAUSSIAN, vec![0.3, 0.5, 1.0], 1.0, 1e-3), x, y).unwrap();
    let xs = uniform_points(40, 3, &mut r);
    let full = fit.predict(&xs, true).unwrap();
    let point = fit.predict(&xs, false).unwrap();
    let cov = full.cov.unwrap();
    for j in 0..40 {
        assert!((cov[(j, j)] - point.var[j]).abs() < 1e-12);
        assert_eq!(full.mean[j], point.mean[j]);
    }
}

#[test]
fn full_score_of_training_data_is_twice_the_log_likelihood() {
    let mut r = rng(17);
    let x = uniform_points(30, 2, &mut r);
    let y = smooth_response(&x, 0.3, &mut r);
    let p = phi(Family::PowerExp { p: 1.5 }, vec![0.2], 0.9, 0.1);
    let fit = GpFit::with_hyperparams(p.clone(), x.clone(), y.clone()).unwrap();
    let cov = cov_assemble(&p, &x).unwrap().matrix;
    let s = score_full(&y, &vec![fit.y_mean; y.len()], cov.as_ref()).unwrap();
    let want = 2.0 * fit.loglik + y.len() as f64 * (2.0 * std::f64::consts::PI).ln();
    assert!((s - want).abs() < 1e-9 * want.abs().max(1.0));
}

#[test]
fn zero_nugget_interpolates_with_jitter() {
    let x = Points::from_column(&[0.0, 0.3, 0.7, 1.0]);
    let y = vec![1.0, -1.0, 0.5, 2.0];
    let fit = GpFit::with_hyperparams(phi(Family::GAUSSIAN, vec![0.05], 1.0, 0.0), x.clone(), y.clone()).unwrap();
    assert!(fit.jitter > 0.0);
    let pred = fit.predict(&x, false).unwrap();
    for i in 0..4 {
        assert!((pred.mean[i] - y[i]).abs() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn log_likelihood_is_permutation_invariant(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let x = uniform_points(25, 2, &mut r);
        let y = smooth_response(&x, 0.1, &mut r);
        let p = phi(Family::Matern { nu: MaternNu::ThreeHalves }, vec![0.1, 0.3], 1.2, 0.05);
        let mut perm: Vec<usize> = (0..25).collect();
        perm.shuffle(&mut r);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = log_likelihood(&p, &x, &y).unwrap();
        let b = log_likelihood(&p, &x.select(&perm), &yp).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn predictive_variance_is_bounded(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let x = uniform_points(20, 1, &mut r);
        let y = smooth_response(&x, 0.1, &mut r);
        let p = phi(Family::GAUSSIAN, vec![0.05], 1.5, 0.01);
        let fit = GpFit::with_hyperparams(p.clone(), x, y).unwrap();
        let pred = fit.predict(&uniform_points(10, 1, &mut r), false).unwrap();
        for v in pred.var {
            prop_assert!(v >= p.tau2 * p.g - 1e-12 && v <= p.noisy_var() + 1e-12);
        }
    }
}
