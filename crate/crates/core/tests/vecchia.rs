mod common;

use common::*;
use gpkrige::gp::{log_likelihood, GpFit};
use gpkrige::kernel::{Family, Hyperparams, Kernel, MaternNu};
use gpkrige::locality::prescale_inputs;
use gpkrige::points::{sq_dist, Points};
use gpkrige::vecchia::{
    build_conditioning_sets, fit_svecchia, vecchia_loglik, Conditioner, SVecchiaConfig, SparseUFactor, VecchiaOrdering,
    VecchiaPredictOptions,
};
use proptest::prelude::*;

fn matern(theta: Vec<f64>, tau2: f64, g: f64) -> Hyperparams {
    Hyperparams::new(tau2, g, Kernel::new(Family::Matern { nu: MaternNu::FiveHalves }, theta).unwrap()).unwrap()
}

fn ordered_cov(phi: &Hyperparams, x: &Points, order: &[usize]) -> Dense {
    dense_cov(phi, &x.select(order))
}

#[test]
fn factor_counts_and_inverts_the_covariance_when_exact() {
    let mut r = rng(50);
    let x = uniform_points(40, 2, &mut r);
    let phi = matern(vec![0.1, 0.3], 1.5, 0.05);
    for m in [1, 5, 39] {
        let cs = build_conditioning_sets(&x, m, &VecchiaOrdering::Maximin).unwrap();
        let u = SparseUFactor::build(&phi, &x, &cs, false).unwrap();
        let want: usize = cs.sets.iter().map(|s| 1 + s.len()).sum();
        assert_eq!(u.nnz(), want);
        assert_eq!(u.nnz(), (0..40).map(|k| 1 + k.min(m)).sum::<usize>());
    }
    let cs = build_conditioning_sets(&x, 39, &VecchiaOrdering::Maximin).unwrap();
    let u = SparseUFactor::build(&phi, &x, &cs, true).unwrap().to_dense();
    let prec = inverse(&ordered_cov(&phi, &x, &cs.order));
    let uut = &u * u.transpose();
    let scale = prec.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..40 {
        for j in 0..40 {
            assert!((uut[(i, j)] - prec[i][j]).abs() < 1e-8 * scale);
        }
        for j in 0..i {
            assert_eq!(u[(i, j)], 0.0);
        }
    }
}

#[test]
fn exact_conditioning_gives_the_exact_likelihood() {
    let mut r = rng(51);
    let x = uniform_points(60, 3, &mut r);
    let phi = matern(vec![0.2], 0.8, 0.1);
    let y = gp_draw(&phi, &x, &mut r);
    let cs = build_conditioning_sets(&x, 59, &VecchiaOrdering::Random { seed: 3 }).unwrap();
    let v = vecchia_loglik(&phi, &x, &y, &cs).unwrap();
    let e = log_likelihood(&phi, &x, &y).unwrap();
    assert!(rel_diff(v, e) < 1e-10);
    let u = SparseUFactor::build(&phi, &x, &cs, false).unwrap();
    let yo: Vec<f64> = cs.order.iter().map(|&i| y[i]).collect();
    let z = u.mul_transpose(&yo);
    let via_factor =
        -0.5 * 60.0 * (2.0 * std::f64::consts::PI).ln() + u.log_det() - 0.5 * z.iter().map(|a| a * a).sum::<f64>();
    assert!(rel_diff(via_factor, e) < 1e-10);
}

#[test]
fn single_neighbor_chain_matches_hand_recursion() {
    let pts = [0.0, 0.3, 0.45, 0.9, 1.0];
    let x = Points::from_column(&pts);
    let y = [0.4, -0.2, 0.1, 1.3, 0.9];
    let phi = Hyperparams::new(2.0, 0.1, Kernel::isotropic(Family::PowerExp { p: 1.0 }, 0.5).unwrap()).unwrap();
    let cs = build_conditioning_sets(&x, 1, &VecchiaOrdering::Given { perm: vec![0, 1, 2, 3, 4] }).unwrap();
    assert_eq!(cs.sets, vec![vec![], vec![0], vec![1], vec![2], vec![3]]);
    let s0 = phi.noisy_var();
    let ln_n = |v: f64, m: f64, s2: f64| -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (v - m) * (v - m) / s2);
    let mut want = ln_n(y[0], 0.0, s0);
    for k in 1..5 {
        let c = phi.cov(&[pts[k]], &[pts[k - 1]]);
        want += ln_n(y[k], c / s0 * y[k - 1], s0 - c * c / s0);
    }
    let got = vecchia_loglik(&phi, &x, &y, &cs).unwrap();
    assert!((got - want).abs() < 1e-12 * want.abs());
}

/// `KL(N(0, Σ) ‖ N(0, (UUᵀ)⁻¹))`.
fn kl_to_exact(phi: &Hyperparams, x: &Points, m: usize) -> f64 {
    let cs = build_conditioning_sets(x, m, &VecchiaOrdering::Maximin).unwrap();
    let u = SparseUFactor::build(phi, x, &cs, false).unwrap();
    let sigma = ordered_cov(phi, x, &cs.order);
    let n = x.len();
    let ud = u.to_dense();
    let mut tr = 0.0;
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                tr += ud[(i, k)] * sigma[i][j] * ud[(j, k)];
            }
        }
    }
    0.5 * (tr - n as f64 - 2.0 * u.log_det() - log_det(&sigma))
}

#[test]
fn divergence_shrinks_as_nested_sets_grow() {
    let mut r = rng(52);
    let x = uniform_points(70, 2, &mut r);
    let phi = matern(vec![0.05], 1.0, 1e-3);
    let kls: Vec<f64> = (1..=12).map(|m| kl_to_exact(&phi, &x, m)).collect();
    for w in kls.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{kls:?}");
    }
    assert!(kls[0] > 0.0);
    assert!(kl_to_exact(&phi, &x, 69).abs() < 1e-7);
}

#[test]
fn joint_prediction_with_all_points_is_exact() {
    let mut r = rng(53);
    let x = uniform_points(50, 2, &mut r);
    let y = smooth_response(&x, 0.1, &mut r);
    let xs = uniform_points(8, 2, &mut r);
    let phi = matern(vec![0.08, 0.2], 1.1, 0.02);
    let ybar = 0.3;
    let cond = Conditioner::new(phi.clone(), x.clone(), &y, ybar, 58).unwrap();
    let opts = VecchiaPredictOptions { full_cov: true, joint: true, latent: false, parallel: false };
    let v = cond.predict(&xs, &opts).unwrap();
    let e = GpFit::with_mean(phi, x, y, ybar).unwrap().predict(&xs, true).unwrap();
    let (vc, ec) = (v.cov.unwrap(), e.cov.unwrap());
    for i in 0..8 {
        assert!((v.mean[i] - e.mean[i]).abs() < 1e-9);
        assert!((v.var[i] - e.var[i]).abs() < 1e-9);
        for j in 0..8 {
            assert!((vc[(i, j)] - ec[(i, j)]).abs() < 1e-9);
        }
    }
    let pointwise = cond.predict(&xs, &VecchiaPredictOptions { joint: false, full_cov: false, ..opts }).unwrap();
    for i in 0..8 {
        assert!((pointwise.mean[i] - e.mean[i]).abs() < 1e-9);
        assert!((pointwise.var[i] - e.var[i]).abs() < 1e-9);
    }
}

#[test]
fn scaled_vecchia_on_an_isotropic_field() {
    let mut r = rng(54);
    let x = uniform_points(1200, 2, &mut r);
    let truth = matern(vec![0.02], 1.0, 0.01);
    let y = gp_draw_fast(&truth, &x, &mut r);
    let cfg = SVecchiaConfig { m: 20, parallel: false, ..SVecchiaConfig::default() };
    let fit = fit_svecchia(&x, &y, &cfg, &mut r).unwrap();
    assert!(!fit.rounds.is_empty() && fit.rounds.len() <= cfg.max_rounds);
    let th = fit.phi.kernel.lengthscales();
    assert!((0.5..=2.0).contains(&(th[0] / th[1])), "theta {th:?}");
    for t in th {
        assert!(t / 0.02 > 0.5 && t / 0.02 < 2.0, "theta {th:?}");
    }
    assert!(fit.loglik.is_finite());
}

#[test]
fn scaled_vecchia_recovers_anisotropy() {
    let mut r = rng(55);
    let x = uniform_points(1200, 2, &mut r);
    let truth = matern(vec![0.01, 0.25], 1.0, 0.01);
    let y = gp_draw_fast(&truth, &x, &mut r);
    let cfg = SVecchiaConfig { m: 20, parallel: false, ..SVecchiaConfig::default() };
    let fit = fit_svecchia(&x, &y, &cfg, &mut r).unwrap();
    let th = fit.phi.kernel.lengthscales();
    let ratio = (th[1] / th[0]) / 25.0;
    assert!((0.5..=2.0).contains(&ratio), "theta {th:?}");
    let last = fit.rounds.last().unwrap();
    assert_eq!(last.theta, th);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conditioning_sets_are_nearest_predecessors(
        seed in 0u64..100_000,
        n in 2usize..250,
        m in 1usize..30,
        scale in prop::collection::vec(0.01f64..4.0, 2),
    ) {
        let mut r = rng(seed);
        let x = uniform_points(n, 2, &mut r);
        let xs = prescale_inputs(&x, &scale).unwrap();
        let cs = build_conditioning_sets(&xs, m, &VecchiaOrdering::Maximin).unwrap();
        let xo = xs.select(&cs.order);
        for k in 0..n {
            let mut want: Vec<(f64, usize)> = (0..k).map(|j| (sq_dist(xo.row(k), xo.row(j)), j)).collect();
            want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = want.into_iter().take(m).map(|(_, j)| j).collect();
            prop_assert_eq!(&cs.sets[k], &want);
        }
    }
}
