mod common;

use std::path::Path;

use common::*;
use gpkrige::censoring::{CensorDirection, CensorSpec};
use gpkrige::data::{code_inputs, read_assay, write_assay_csv, write_predictions_csv, AssaySchema, Coding};
use gpkrige::error::Error;
use gpkrige::meuse::meuse;
use gpkrige::points::Points;
use gpkrige::synth::{gen_synthetic_1d, gen_synthetic_boreholes, BoreholeConfig, Toy1d};
use proptest::prelude::*;

#[test]
fn coding_maps_ranges_to_the_unit_interval() {
    let x = Points::from_rows(&[[100.0, -1.0], [300.0, 1.0], [200.0, 0.0]]).unwrap();
    let (cx, cy, c) = code_inputs(&x, &[1.0, 2.0, 6.0], false).unwrap();
    assert_eq!(cx.row(2), &[0.5, 0.5]);
    assert_eq!(cx.row(0), &[0.0, 0.0]);
    assert_eq!(c.y_center, 3.0);
    assert_eq!(cy, vec![-2.0, -1.0, 3.0]);
    assert!(code_inputs(&x, &[1.0, -2.0, 6.0], true).is_err());
    let flat = Points::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
    assert!(Coding::fit(&flat, &[0.0, 0.0], false).is_err());
}

#[test]
fn boreholes_are_straight_and_censored_as_asked() {
    let mut r = rng(90);
    for frac in [0.0, 0.4] {
        let cfg = BoreholeConfig { n_holes: 30, pts_per_hole: 12, censor_frac: frac, ..BoreholeConfig::default() };
        let b = gen_synthetic_boreholes(&cfg, &mut r).unwrap();
        assert_eq!(b.dataset.len(), 360);
        let holes = b.dataset.holes();
        assert_eq!(holes.len(), 30);
        for (_, idx) in &holes {
            assert_eq!(idx.len(), 12);
            let p0 = b.raw.x.row(idx[0]);
            let p1 = b.raw.x.row(idx[11]);
            let dir: Vec<f64> = (0..3).map(|k| p1[k] - p0[k]).collect();
            let len2: f64 = dir.iter().map(|v| v * v).sum();
            for &i in idx {
                let p = b.raw.x.row(i);
                let t = (0..3).map(|k| (p[k] - p0[k]) * dir[k]).sum::<f64>() / len2;
                let off: f64 = (0..3).map(|k| (p[k] - p0[k] - t * dir[k]).powi(2)).sum::<f64>().sqrt();
                assert!(off < 1e-6);
            }
        }
        let nc = b.dataset.censor.n_censored();
        if frac == 0.0 {
            assert_eq!(nc, 0);
            assert!(b.threshold.is_none());
        } else {
            assert!((nc as f64 / 360.0 - 0.4).abs() < 0.01, "{nc} censored");
            let t = b.threshold.unwrap();
            for i in b.dataset.censor.censored_indices() {
                assert!(b.y_full[i] <= t);
                assert_eq!(b.raw.value[i], t);
            }
        }
        let cx = b.dataset.x.column_ranges();
        assert!(cx.iter().all(|(lo, hi)| *lo >= -1e-12 && *hi <= 1.0 + 1e-12));
    }
}

#[test]
fn toy_censoring_replaces_values_by_the_threshold() {
    let mut r = rng(91);
    let s = gen_synthetic_1d(200, 0.01, Some(1.0), Toy1d::Centered, &mut r).unwrap();
    for i in 0..200 {
        let c = s.dataset.censor.censored[i];
        assert_eq!(c, s.y_full[i] <= 1.0);
        assert_eq!(s.dataset.y[i], if c { 1.0 } else { s.y_full[i] });
    }
}

#[test]
fn assay_csv_round_trips() {
    let x = Points::from_rows(&[[1.5, 2.0, -3.0], [0.1, 1e-9, 7.25], [1e6, -2.5, 0.0]]).unwrap();
    let value = vec![0.3, 0.05, 12.0];
    let holes = vec!["A".to_string(), "A".to_string(), "B-2".to_string()];
    let censor =
        CensorSpec::new(vec![false, true, false], vec![None, Some(0.05), None], CensorDirection::Left).unwrap();
    let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let mut buf = Vec::new();
    write_assay_csv(&mut buf, &names, &x, &value, &holes, &censor, Some(&[false, true, false])).unwrap();
    let raw = read_assay(buf.as_slice(), Path::new("mem.csv"), &AssaySchema::default()).unwrap();
    assert_eq!(raw.x, x);
    assert_eq!(raw.value, value);
    assert_eq!(raw.hole_id, holes);
    assert_eq!(raw.censor, censor);
    let coded = raw.code(true).unwrap();
    let t = coded.censor.threshold[1].unwrap();
    assert!((t - coded.y[1]).abs() < 1e-15);
}

#[test]
fn malformed_csv_reports_the_line() {
    let text = "hole_id,x,y,z,value,censored,detection_limit\nA,1,2,3,0.5,0,\nA,1,oops,3,0.5,0,\n";
    match read_assay(text.as_bytes(), Path::new("bad.csv"), &AssaySchema::default()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let missing = "hole_id,x,y,value\nA,1,2,0.5\n";
    assert!(read_assay(missing.as_bytes(), Path::new("m.csv"), &AssaySchema::default()).is_err());
}

#[test]
fn prediction_csv_layout() {
    let sites = Points::from_rows(&[[0.5, 1.0]]).unwrap();
    let names = vec!["x".to_string(), "y".to_string()];
    let mut buf = Vec::new();
    write_predictions_csv(&mut buf, &names, &sites, &[1.25], &[0.5], Some(&[Some(2)])).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "x,y,mean,var,error_code\n5.0000000000000000e-1,1.0000000000000000e0,1.2500000000000000e0,5.0000000000000000e-1,2\n");
}

#[test]
fn meuse_is_complete() {
    let d = meuse().unwrap();
    assert_eq!(d.len(), 155);
    assert_eq!(d.x.dim(), 2);
    assert!(d.coding.log_response);
    assert!(d.y.iter().all(|v| v.is_finite()));
    assert!(d.y.iter().sum::<f64>().abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coding_round_trips(
        rows in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 3), 2..40),
        ys in prop::collection::vec(0.01f64..1e3, 40),
        log in any::<bool>(),
    ) {
        let x = Points::from_rows(&rows).unwrap();
        prop_assume!(x.column_ranges().iter().all(|(lo, hi)| hi - lo > 1e-3));
        let y = &ys[..rows.len()];
        let (cx, cy, c) = code_inputs(&x, y, log).unwrap();
        let bx = c.decode_x(&cx).unwrap();
        for (a, b) in bx.as_slice().iter().zip(x.as_slice()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in c.decode_y(&cy).iter().zip(y) {
            prop_assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
        for (lo, hi) in cx.column_ranges() {
            prop_assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        }
    }
}
