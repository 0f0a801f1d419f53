mod common;

use common::*;
use gpkrige::evaluation::rmse;
use gpkrige::gp::fit_mle;
use gpkrige::kernel::{Family, Hyperparams, Kernel};
use gpkrige::lagp::{
    lagp_predict_batch, lagp_predict_one, remediate_batch, slagp_predict_batch, LagpConfig, TrainingSet,
};
use gpkrige::locality::{GlobalScaleOptions, NeighborhoodMethod};
use gpkrige::points::Points;

fn serial(m: usize, method: NeighborhoodMethod) -> LagpConfig {
    LagpConfig { m, method, parallel: false, ..LagpConfig::default() }
}

#[test]
fn full_neighborhood_reproduces_the_exact_gp() {
    let mut r = rng(40);
    let x = uniform_points(60, 2, &mut r);
    let y = smooth_response(&x, 0.1, &mut r);
    let xs = uniform_points(5, 2, &mut r);
    let train = TrainingSet::new(x.clone(), y.clone()).unwrap();
    let cfg = serial(60, NeighborhoodMethod::Nn);
    let st = train.start();
    let b = &cfg.mle.bounds;
    let init = Hyperparams::new(
        1.0,
        st.g.clamp(b.g.0, b.g.1),
        Kernel::isotropic(Family::GAUSSIAN, st.theta.clamp(b.theta.0, b.theta.1)).unwrap(),
    )
    .unwrap();
    let exact = fit_mle(&x, &y, &init, &cfg.mle).unwrap().predict(&xs, false).unwrap();
    let batch = lagp_predict_batch(&train, &xs, &cfg).unwrap();
    for j in 0..5 {
        assert!(rel_diff(batch.prediction.mean[j], exact.mean[j]) < 1e-8);
        assert!(rel_diff(batch.prediction.var[j], exact.var[j]) < 1e-8);
    }
}

#[test]
fn batch_equals_per_site_predictions() {
    let mut r = rng(41);
    let x = uniform_points(400, 2, &mut r);
    let y = smooth_response(&x, 0.05, &mut r);
    let xs = uniform_points(30, 2, &mut r);
    let train = TrainingSet::new(x, y).unwrap();
    let cfg = LagpConfig { m: 30, ..LagpConfig::default() };
    let batch = lagp_predict_batch(&train, &xs, &cfg).unwrap();
    for j in 0..xs.len() {
        let one = lagp_predict_one(&train, xs.row(j), &cfg).unwrap();
        assert_eq!(batch.prediction.mean[j].to_bits(), one.mean.to_bits());
        assert_eq!(batch.prediction.var[j].to_bits(), one.var.to_bits());
        assert_eq!(batch.fits[j].as_ref().unwrap().neighborhood.indices, one.neighborhood.indices);
        assert!(one.var > 0.0);
        assert_eq!(one.neighborhood.indices.len(), 30);
    }
    let ser = lagp_predict_batch(&train, &xs, &LagpConfig { parallel: false, ..cfg }).unwrap();
    assert_eq!(ser.prediction, batch.prediction);
}

#[test]
fn predictive_intervals_cover_held_out_data() {
    let mut r = rng(42);
    let all = uniform_points(700, 2, &mut r);
    let truth = Hyperparams::new(1.0, 0.02, Kernel::isotropic(Family::GAUSSIAN, 0.02).unwrap()).unwrap();
    let yall = gp_draw_fast(&truth, &all, &mut r);
    let train_idx: Vec<usize> = (0..500).collect();
    let test_idx: Vec<usize> = (500..700).collect();
    let train = TrainingSet::new(all.select(&train_idx), yall[..500].to_vec()).unwrap();
    let xs = all.select(&test_idx);
    let batch = lagp_predict_batch(&train, &xs, &LagpConfig { m: 40, ..LagpConfig::default() }).unwrap();
    let p = &batch.prediction;
    assert_eq!(p.n_errors(), 0);
    let covered = (0..200).filter(|&j| (yall[500 + j] - p.mean[j]).abs() <= 3.0 * p.var[j].sqrt()).count();
    assert!(covered >= 170, "{covered}/200 within 3 sd");
}

#[test]
fn remediation_only_touches_pinned_nuggets() {
    let mut r = rng(43);
    let x = uniform_points(300, 1, &mut r);
    let y: Vec<f64> =
        x.rows().map(|v| (8.0 * v[0]).sin() + if v[0] > 0.5 { 0.3 * normal(&mut r) } else { 0.0 }).collect();
    let xs = Points::from_column(&[0.1, 0.2, 0.3, 0.7, 0.8, 0.9]);
    let train = TrainingSet::new(x, y).unwrap();
    let mut cfg = LagpConfig { bound_tol: 1e-6, ..serial(20, NeighborhoodMethod::Nn) };
    cfg.mle.bounds.g.0 = 1e-3;
    let batch = lagp_predict_batch(&train, &xs, &cfg).unwrap();
    let fixed = remediate_batch(&train, &batch).unwrap();
    let mut pinned = 0;
    for (a, b) in batch.fits.iter().zip(&fixed.fits) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert!(!b.nugget_at_bound);
        assert!(b.var > 0.0);
        if a.nugget_at_bound {
            pinned += 1;
            assert_eq!(a.phi.kernel, b.phi.kernel);
            assert_eq!(a.neighborhood, b.neighborhood);
        } else {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.var, b.var);
            assert_eq!(a.phi, b.phi);
        }
    }
    assert!(pinned > 0 && pinned < 6, "{pinned} pinned fits");
}

#[test]
fn oversized_neighborhood_is_a_site_error() {
    let x = Points::from_column(&[0.0, 0.5, 1.0]);
    let train = TrainingSet::new(x, vec![0.0, 1.0, 0.0]).unwrap();
    assert!(lagp_predict_one(&train, &[0.2], &serial(4, NeighborhoodMethod::Nn)).is_err());
}

#[test]
fn prescaling_helps_on_anisotropic_fields() {
    let truth = Hyperparams::new(1.0, 1e-3, Kernel::new(Family::GAUSSIAN, vec![0.004, 0.1]).unwrap()).unwrap();
    let mut wins = 0;
    for rep in 0..10 {
        let mut r = rng(440 + rep);
        let all = uniform_points(1100, 2, &mut r);
        let yall = gp_draw_fast(&truth, &all, &mut r);
        let x = all.select(&(0..1000).collect::<Vec<_>>());
        let xs = all.select(&(1000..1100).collect::<Vec<_>>());
        let (y, ys) = (yall[..1000].to_vec(), &yall[1000..]);
        let cfg = LagpConfig { m: 30, ..LagpConfig::default() };
        let plain = lagp_predict_batch(&TrainingSet::new(x.clone(), y.clone()).unwrap(), &xs, &cfg).unwrap();
        let scales = GlobalScaleOptions { parallel: false, ..GlobalScaleOptions::default() };
        let scaled = slagp_predict_batch(&x, &y, &xs, &cfg, &scales, &mut r).unwrap();
        let a = rmse(ys, &plain.prediction.mean).unwrap();
        let b = rmse(ys, &scaled.batch.prediction.mean).unwrap();
        if b < a {
            wins += 1;
        }
    }
    assert!(wins >= 8, "scaled local GP better in {wins}/10 replicates");
}
