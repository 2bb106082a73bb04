use proptest::prelude::*;
use rpc_core::rd::{auc, bd_quality, bd_rate, BdOptions, RdCurve, RdError};

fn curve(points: &[(f64, f64)]) -> RdCurve {
    RdCurve::new(points.to_vec()).unwrap()
}

/// Quality as an increasing function of rate, sampled at `bpps`.
fn synthetic(bpps: &[f64]) -> RdCurve {
    curve(&bpps.iter().map(|&b| (b, 20.0 + 8.0 * b.log10() + 3.0 * b.sqrt())).collect::<Vec<_>>())
}

const BPPS: [f64; 8] = [0.125, 0.25, 0.375, 0.5, 0.75, 1.0, 1.5, 2.0];
const NO_EXT: BdOptions = BdOptions { extend_reference_to: None };

#[test]
fn auc_of_simple_shapes() {
    let rect = curve(&[(1e-9, 2.0), (1.0, 2.0)]);
    assert!((auc(&rect).unwrap().value - 2.0).abs() < 1e-8);
    let tri = curve(&[(1e-12, 0.0), (2.0, 10.0)]);
    assert!((auc(&tri).unwrap().value - 10.0).abs() < 1e-10);
    let a = curve(&[(0.5, 1.0), (1.5, 3.0)]);
    let b = curve(&[(0.5, 1.0), (1.0, 2.0), (1.5, 3.0)]);
    assert_eq!(auc(&a).unwrap().value, auc(&b).unwrap().value);
}

#[test]
fn auc_needs_two_finite_points_and_counts_skips() {
    assert!(matches!(auc(&curve(&[(0.5, 1.0)])), Err(RdError::TooFewPoints { need: 2, have: 1 })));
    let c = curve(&[(0.5, 1.0), (1.0, 2.0), (2.0, f64::INFINITY)]);
    let s = auc(&c).unwrap();
    assert_eq!(s.skipped, 1);
    assert!((s.value - 0.75).abs() < 1e-15);
}

#[test]
fn curve_validation() {
    assert!(matches!(RdCurve::new(vec![(0.0, 1.0)]), Err(RdError::Bpp(_))));
    assert!(matches!(RdCurve::new(vec![(-1.0, 1.0)]), Err(RdError::Bpp(_))));
    assert!(matches!(RdCurve::new(vec![(1.0, 1.0), (1.0, 2.0)]), Err(RdError::NotIncreasing { .. })));
    assert!(matches!(RdCurve::new(vec![(1.0, f64::NAN)]), Err(RdError::Quality(0))));
    let sorted = RdCurve::from_unsorted(vec![(2.0, 1.0), (1.0, 0.5)]).unwrap();
    assert_eq!(sorted.points(), &[(1.0, 0.5), (2.0, 1.0)]);
}

#[test]
fn equal_rate_operating_points_keep_the_best_quality() {
    let c = RdCurve::from_operating_points(vec![(0.5, 30.0), (0.25, 25.0), (0.5, 31.0), (0.5, 29.0), (1.0, 34.0)]).unwrap();
    assert_eq!(c.points(), &[(0.25, 25.0), (0.5, 31.0), (1.0, 34.0)]);
    assert!(matches!(RdCurve::from_unsorted(vec![(0.5, 30.0), (0.5, 31.0)]), Err(RdError::NotIncreasing { .. })));
    assert!(matches!(RdCurve::from_operating_points(vec![(0.5, 30.0), (0.5, f64::NAN)]), Err(RdError::Quality(_))));
}

#[test]
fn identical_curves_have_zero_deltas() {
    let c = synthetic(&BPPS);
    assert!(bd_rate(&c, &c, NO_EXT).unwrap().value.abs() < 1e-9);
    assert!(bd_quality(&c, &c, NO_EXT).unwrap().value.abs() < 1e-9);
}

#[test]
fn halved_rate_saves_fifty_percent() {
    let reference = synthetic(&BPPS);
    let half = curve(&reference.points().iter().map(|&(b, q)| (b / 2.0, q)).collect::<Vec<_>>());
    assert!((bd_rate(&reference, &half, NO_EXT).unwrap().value - 50.0).abs() < 1e-9);
    let double = curve(&reference.points().iter().map(|&(b, q)| (b * 2.0, q)).collect::<Vec<_>>());
    assert!((bd_rate(&reference, &double, NO_EXT).unwrap().value + 100.0).abs() < 1e-9);
}

#[test]
fn constant_quality_offset_is_recovered() {
    let reference = synthetic(&BPPS);
    let better = curve(&reference.points().iter().map(|&(b, q)| (b, q + 1.0)).collect::<Vec<_>>());
    assert!((bd_quality(&reference, &better, NO_EXT).unwrap().value - 1.0).abs() < 1e-9);
}

#[test]
fn bd_quality_is_antisymmetric() {
    let a = synthetic(&BPPS);
    let b = curve(&[(0.2, 19.0), (0.4, 22.0), (0.8, 25.5), (1.2, 27.0), (1.9, 29.5)]);
    let ab = bd_quality(&a, &b, NO_EXT).unwrap().value;
    let ba = bd_quality(&b, &a, NO_EXT).unwrap().value;
    assert!((ab + ba).abs() < 1e-9, "{ab} vs {ba}");
}

#[test]
fn exact_cubics_match_closed_form() {
    // log10(bpp) is an exact cubic of quality for the reference, and the
    // test adds a linear term, so the mean difference over [lo, hi] is the
    // linear term's value at the midpoint.
    let p = |q: f64| -2.0 + 0.08 * q + 1e-3 * (q - 30.0).powi(2) - 2e-5 * (q - 30.0).powi(3);
    let lin = |q: f64| -0.05 - 0.002 * q;
    let qs_ref: Vec<f64> = (0..8).map(|i| 24.0 + 2.0 * i as f64).collect();
    let qs_test: Vec<f64> = (0..6).map(|i| 27.0 + 2.5 * i as f64).collect();
    let reference = curve(&qs_ref.iter().map(|&q| (10f64.powf(p(q)), q)).collect::<Vec<_>>());
    let test = curve(&qs_test.iter().map(|&q| (10f64.powf(p(q) + lin(q)), q)).collect::<Vec<_>>());
    let (lo, hi) = (27.0, 38.0);
    let avg = lin(0.5 * (lo + hi));
    let expect = -(10f64.powf(avg) - 1.0) * 100.0;
    let got = bd_rate(&reference, &test, NO_EXT).unwrap().value;
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");

    // Same construction in the quality direction.
    let f = |x: f64| 30.0 + 9.0 * x - 2.0 * x * x + 0.7 * x * x * x;
    let off = |x: f64| 0.4 + 0.3 * x;
    let xs_ref: Vec<f64> = (0..7).map(|i| -1.0 + 0.2 * i as f64).collect();
    let xs_test: Vec<f64> = (0..6).map(|i| -0.7 + 0.25 * i as f64).collect();
    let reference = curve(&xs_ref.iter().map(|&x| (10f64.powf(x), f(x))).collect::<Vec<_>>());
    let test = curve(&xs_test.iter().map(|&x| (10f64.powf(x), f(x) + off(x))).collect::<Vec<_>>());
    let expect = off(0.5 * (-0.7 + 0.2));
    let got = bd_quality(&reference, &test, NO_EXT).unwrap().value;
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
}

#[test]
fn bd_errors() {
    let low = curve(&[(0.1, 10.0), (0.2, 11.0), (0.3, 12.0), (0.4, 13.0)]);
    let high = curve(&[(1.0, 20.0), (2.0, 21.0), (3.0, 22.0), (4.0, 23.0)]);
    assert!(matches!(bd_rate(&low, &high, NO_EXT), Err(RdError::NoOverlap(_))));
    assert!(matches!(bd_quality(&low, &high, NO_EXT), Err(RdError::NoOverlap(_))));
    let three = curve(&[(0.1, 10.0), (0.2, 11.0), (0.3, 12.0)]);
    assert!(matches!(bd_rate(&three, &low, NO_EXT), Err(RdError::TooFewPoints { need: 4, have: 3 })));
}

#[test]
fn infinite_points_are_skipped_and_counted() {
    let mut pts: Vec<(f64, f64)> = synthetic(&BPPS).points().to_vec();
    pts.push((4.0, f64::INFINITY));
    let with_inf = curve(&pts);
    let plain = synthetic(&BPPS);
    let s = bd_quality(&plain, &with_inf, NO_EXT).unwrap();
    assert_eq!(s.skipped, 1);
    assert!(s.value.abs() < 1e-9);
}

#[test]
fn reference_extension_widens_the_rate_window() {
    let reference = synthetic(&[0.125, 0.25, 0.5, 0.75, 1.0]);
    let test = synthetic(&[0.25, 0.5, 1.0, 2.0, 4.0]);
    let base = bd_quality(&reference, &test, NO_EXT).unwrap().value;
    assert!(base.abs() < 0.1);
    let extended = bd_quality(&reference, &test, BdOptions { extend_reference_to: Some(4.0) }).unwrap().value;
    assert!(extended.is_finite());
    assert_ne!(base, extended);
}

#[test]
fn csv_roundtrip() {
    let c = curve(&[(0.125, 12.5), (0.25, 17.0 / 3.0 + 10.0), (0.375, f64::INFINITY)]);
    let mut buf = Vec::new();
    c.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("bpp,quality\n0.125,12.5\n"));
    assert_eq!(RdCurve::read_csv(buf.as_slice()).unwrap(), c);
    assert!(matches!(RdCurve::read_csv("rate,q\n1,2\n".as_bytes()), Err(RdError::Csv { line: 1, .. })));
    assert!(matches!(RdCurve::read_csv("bpp,quality\n1,abc\n".as_bytes()), Err(RdError::Csv { line: 2, .. })));
}

proptest! {
    #[test]
    fn bd_rate_ignores_common_rate_scaling(scale in 0.01f64..100.0, shift in -3.0f64..3.0) {
        let reference = synthetic(&BPPS);
        let test = curve(&[(0.2, 19.0 + shift), (0.4, 22.0 + shift), (0.8, 25.5 + shift), (1.2, 27.0 + shift), (1.9, 29.5 + shift)]);
        let base = bd_rate(&reference, &test, NO_EXT);
        let r2 = curve(&reference.points().iter().map(|&(b, q)| (b * scale, q)).collect::<Vec<_>>());
        let t2 = curve(&test.points().iter().map(|&(b, q)| (b * scale, q)).collect::<Vec<_>>());
        let scaled = bd_rate(&r2, &t2, NO_EXT);
        match (base, scaled) {
            (Ok(a), Ok(b)) => prop_assert!((a.value - b.value).abs() < 1e-8 * (1.0 + a.value.abs())),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn auc_is_unchanged_by_collinear_midpoints(
        qs in proptest::collection::vec(0.0f64..40.0, 2..10),
        which in 0usize..100,
    ) {
        let pts: Vec<(f64, f64)> = qs.iter().enumerate().map(|(i, &q)| (0.125 * (i + 1) as f64, q)).collect();
        let k = which % (pts.len() - 1);
        let mut with_mid = pts.clone();
        let mid = ((pts[k].0 + pts[k + 1].0) / 2.0, (pts[k].1 + pts[k + 1].1) / 2.0);
        with_mid.insert(k + 1, mid);
        let a = auc(&curve(&pts)).unwrap().value;
        let b = auc(&curve(&with_mid)).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }
}
