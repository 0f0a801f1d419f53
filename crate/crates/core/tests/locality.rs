mod common;

use common::*;
use gpkrige::kernel::{Family, Hyperparams, Kernel};
use gpkrige::locality::{
    alc_select, estimate_global_lengthscales, maximin_order, nn_search, prescale_inputs, AlcOptions,
    GlobalScaleOptions, NeighborhoodMethod, SpatialIndex,
};
use gpkrige::points::{sq_dist, Points};
use proptest::prelude::*;

fn brute_knn(x: &Points, s: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..x.len()).map(|i| (sq_dist(x.row(i), s), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

#[test]
fn knn_breaks_ties_by_lower_index() {
    let x = Points::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [3.0, 3.0]]).unwrap();
    let idx = SpatialIndex::build(&x);
    let nb: Vec<usize> = idx.knn(&[0.0, 0.0], 3).into_iter().map(|(i, _)| i).collect();
    assert_eq!(nb, vec![0, 1, 2]);
    let n = nn_search(&idx, &[0.0, 0.0], 5).unwrap();
    assert_eq!(n.indices, vec![0, 1, 2, 3, 4]);
    assert_eq!(n.method, NeighborhoodMethod::Nn);
    assert!(nn_search(&idx, &[0.0, 0.0], 6).is_err());
}

#[test]
fn within_radius_matches_brute_force() {
    let mut r = rng(30);
    let x = uniform_points(500, 3, &mut r);
    let idx = SpatialIndex::build(&x);
    let s = [0.5, 0.4, 0.6];
    let mut got: Vec<usize> = idx.within_radius(&s, 0.2).into_iter().map(|(i, _)| i).collect();
    got.sort_unstable();
    let want: Vec<usize> = (0..500).filter(|&i| sq_dist(x.row(i), &s) <= 0.04).collect();
    assert_eq!(got, want);
}

#[test]
fn maximin_on_three_points() {
    let x = Points::from_column(&[0.0, 0.4, 1.0]);
    assert_eq!(maximin_order(&x).perm, vec![2, 0, 1]);
}

#[test]
fn maximin_matches_quadratic_replay() {
    let mut r = rng(31);
    let x = uniform_points(300, 2, &mut r);
    let order = maximin_order(&x).perm;
    let c = x.centroid();
    let first = (0..300).fold(0, |b, i| if sq_dist(x.row(i), &c) > sq_dist(x.row(b), &c) { i } else { b });
    let mut want = vec![first];
    let mut placed = vec![false; 300];
    placed[first] = true;
    let mut dmin: Vec<f64> = (0..300).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for _ in 1..300 {
        let next = (0..300).filter(|&i| !placed[i]).fold(None, |b: Option<usize>, i| match b {
            Some(b) if dmin[b] >= dmin[i] => Some(b),
            _ => Some(i),
        });
        let next = next.unwrap();
        placed[next] = true;
        want.push(next);
        for i in 0..300 {
            dmin[i] = dmin[i].min(sq_dist(x.row(i), x.row(next)));
        }
    }
    assert_eq!(order, want);
}

/// Greedy selection by brute force: at each step, the candidate whose
/// addition leaves the smallest predictive variance at `s`.
fn alc_oracle(x: &Points, s: &[f64], m: usize, n0: usize, phi: &Hyperparams) -> Vec<usize> {
    let mut chosen = brute_knn(x, s, n0);
    while chosen.len() < m {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..x.len() {
            if chosen.contains(&j) {
                continue;
            }
            let mut set = chosen.clone();
            set.push(j);
            let k: Dense = set
                .iter()
                .map(|&a| {
                    set.iter()
                        .map(|&b| phi.kernel.eval(x.row(a), x.row(b)) + if a == b { phi.g } else { 0.0 })
                        .collect()
                })
                .collect();
            let ks: Vec<f64> = set.iter().map(|&a| phi.kernel.eval(x.row(a), s)).collect();
            let w = solve(&k, &ks);
            let v = 1.0 - ks.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            if v < best.0 {
                best = (v, j);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

#[test]
fn alc_matches_exhaustive_greedy_search() {
    let mut r = rng(32);
    let x = uniform_points(150, 2, &mut r);
    let idx = SpatialIndex::build(&x);
    let phi = Hyperparams::new(1.0, 0.01, Kernel::isotropic(Family::GAUSSIAN, 0.05).unwrap()).unwrap();
    let opts = AlcOptions { n0: 6, cand_limit: 150 };
    for s in [[0.5, 0.5], [0.1, 0.9], [0.33, 0.71]] {
        let nb = alc_select(&idx, &s, 20, &opts, &phi).unwrap();
        assert_eq!(nb.method, NeighborhoodMethod::Alc);
        assert_eq!(nb.indices, alc_oracle(&x, &s, 20, 6, &phi));
    }
}

#[test]
fn alc_rejects_bad_sizes() {
    let mut r = rng(33);
    let x = uniform_points(10, 2, &mut r);
    let idx = SpatialIndex::build(&x);
    let phi = Hyperparams::new(1.0, 0.01, Kernel::isotropic(Family::GAUSSIAN, 0.05).unwrap()).unwrap();
    assert!(alc_select(&idx, &[0.5, 0.5], 11, &AlcOptions::default(), &phi).is_err());
    assert!(alc_select(&idx, &[0.5, 0.5], 6, &AlcOptions::default(), &phi).is_err());
}

#[test]
fn prescaling_divides_by_root_lengthscale() {
    let x = Points::from_rows(&[[1.0, 2.0], [4.0, 9.0]]).unwrap();
    let s = prescale_inputs(&x, &[4.0, 9.0]).unwrap();
    assert_eq!(s.as_slice(), &[0.5, 2.0 / 3.0, 2.0, 3.0]);
    assert_eq!(prescale_inputs(&x, &[1.0]).unwrap(), x);
    assert!(prescale_inputs(&x, &[1.0, 2.0, 3.0]).is_err());
    assert!(prescale_inputs(&x, &[0.0]).is_err());
    let k = Kernel::new(Family::GAUSSIAN, vec![4.0, 9.0]).unwrap();
    let unit = Kernel::isotropic(Family::GAUSSIAN, 1.0).unwrap();
    assert!((k.eval(x.row(0), x.row(1)) - unit.eval(s.row(0), s.row(1))).abs() < 1e-15);
}

#[test]
fn global_lengthscales_recover_anisotropy() {
    let mut r = rng(34);
    let x = uniform_points(1500, 2, &mut r);
    let truth = Hyperparams::new(1.0, 0.05, Kernel::new(Family::GAUSSIAN, vec![0.04, 0.25]).unwrap()).unwrap();
    let y = gp_draw_fast(&truth, &x, &mut r);
    let opts = GlobalScaleOptions { block_size: Some(150), parallel: false, ..GlobalScaleOptions::default() };
    let est = estimate_global_lengthscales(&x, &y, &opts, &mut r).unwrap();
    assert_eq!(est.n_fitted, 10);
    for (t, want) in est.theta.iter().zip([0.04, 0.25]) {
        assert!(t / want > 0.5 && t / want < 2.0, "theta {:?}", est.theta);
    }
}

#[test]
fn global_lengthscales_of_isotropic_field_are_balanced() {
    let mut r = rng(35);
    let x = uniform_points(1500, 2, &mut r);
    let truth = Hyperparams::new(1.0, 0.05, Kernel::isotropic(Family::GAUSSIAN, 0.1).unwrap()).unwrap();
    let y = gp_draw_fast(&truth, &x, &mut r);
    let opts = GlobalScaleOptions { block_size: Some(150), parallel: false, ..GlobalScaleOptions::default() };
    let est = estimate_global_lengthscales(&x, &y, &opts, &mut r).unwrap();
    let ratio = est.theta[0] / est.theta[1];
    assert!((0.5..=2.0).contains(&ratio), "theta {:?}", est.theta);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn knn_matches_brute_force(
        seed in 0u64..100_000,
        n in 1usize..300,
        d in 1usize..4,
        k in 1usize..40,
        grid in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let mut x = uniform_points(n, d, &mut r);
        if grid {
            x = Points::new(x.as_slice().iter().map(|v| (v * 4.0).round() / 4.0).collect(), d).unwrap();
        }
        let idx = SpatialIndex::build(&x);
        let s = uniform_points(1, d, &mut r);
        let k = k.min(n);
        let got: Vec<usize> = idx.knn(s.row(0), k).into_iter().map(|(i, _)| i).collect();
        prop_assert_eq!(got, brute_knn(&x, s.row(0), k));
    }

    #[test]
    fn alc_depends_only_on_inputs_and_correlation(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let x = uniform_points(120, 2, &mut r);
        let idx = SpatialIndex::build(&x);
        let phi = Hyperparams::new(1.0, 0.05, Kernel::isotropic(Family::GAUSSIAN, 0.1).unwrap()).unwrap();
        let opts = AlcOptions { n0: 6, cand_limit: 60 };
        let a = alc_select(&idx, &[0.4, 0.6], 25, &opts, &phi).unwrap();
        let b = alc_select(&idx, &[0.4, 0.6], 25, &opts, &Hyperparams { tau2: 7.0, ..phi.clone() }).unwrap();
        prop_assert_eq!(&a.indices, &b.indices);
        let mut sorted = a.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), 25);
    }
}
