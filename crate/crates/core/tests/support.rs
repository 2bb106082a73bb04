use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpc_core::codec::{ArchitectureConfig, Model};
use rpc_core::support::{
    decoder_support_bits, empirical_receptive_field, encoder_support, iir_error, iir_simulate, image_support,
    max_support_bits, min_priming, min_priming_exact, Probe, SupportError,
};

fn frac(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

#[test]
fn encoder_supports() {
    assert_eq!(encoder_support(0, 0).unwrap(), 3);
    assert_eq!(encoder_support(1, 0).unwrap(), 7);
    assert_eq!(encoder_support(2, 0).unwrap(), 15);
    assert_eq!(encoder_support(3, 0).unwrap(), 31);
    // Later iterations start from the previous reconstruction's support.
    assert_eq!(encoder_support(3, 1).unwrap(), 111 + 30);
    assert!(matches!(encoder_support(4, 0), Err(SupportError::EncoderLayer(4))));
}

#[test]
fn decoder_supports() {
    assert_eq!(decoder_support_bits(1, 0).unwrap(), Ratio::from_integer(3));
    assert_eq!(decoder_support_bits(2, 0).unwrap(), Ratio::from_integer(4));
    assert_eq!(decoder_support_bits(3, 0).unwrap(), Ratio::from_integer(5));
    assert_eq!(decoder_support_bits(4, 0).unwrap(), Ratio::new(11, 2));
    // Hidden-state paths of the 3x3 layers add one stack per iteration.
    assert_eq!(decoder_support_bits(4, 1).unwrap(), Ratio::new(13, 2));
    assert!(matches!(decoder_support_bits(0, 0), Err(SupportError::DecoderLayer(0))));
    assert!(matches!(decoder_support_bits(5, 0), Err(SupportError::DecoderLayer(5))));
}

#[test]
fn reconstruction_supports() {
    for t in 0..=16 {
        assert_eq!(max_support_bits(t, 0, 0).unwrap(), 6 * t as u64 + 6);
    }
    assert_eq!(max_support_bits(2, 0, 0).unwrap(), 18);
    assert_eq!(max_support_bits(0, 3, 0).unwrap(), 10);
    assert_eq!(max_support_bits(1, 3, 3).unwrap(), 20);
    assert!(matches!(max_support_bits(1, 2, 3), Err(SupportError::Priming { k_prime: 2, k_diffuse: 3 })));
    assert_eq!(image_support(0, 0, 0).unwrap(), 111);
    assert_eq!(image_support(1, 0, 0).unwrap(), 207);
    assert_eq!(image_support(0, 3, 0).unwrap(), 175);
}

#[test]
fn iir_closed_forms_match_simulation() {
    for step in 1..20 {
        let a = step as f64 * 0.05;
        let sim = iir_simulate(3, a, 50).unwrap();
        for n in 1..=3 {
            for t in 0..=50 {
                let closed = iir_error(n, a, t).unwrap();
                assert!((closed - sim[n - 1][t]).abs() < 1e-12, "n={n} a={a} t={t}");
            }
        }
    }
    for a in [0.25, 1.0 / 3.0, 0.4] {
        let sim = iir_simulate(3, a, 50).unwrap();
        for t in 0..=50 {
            assert!((iir_error(1, a, t).unwrap() - a.powi(t as i32 + 1)).abs() < 1e-12);
            assert!((iir_error(2, a, t).unwrap() - sim[1][t]).abs() < 1e-12);
        }
    }
}

#[test]
fn iir_examples() {
    let a: f64 = 0.3;
    assert!((iir_error(1, a, 1).unwrap() - a * a).abs() < 1e-15);
    let third = 1.0 / 3.0;
    assert!((iir_error(2, third, 2).unwrap() - 1.0 / 9.0).abs() < 1e-15);
    assert!((iir_error(2, 0.25, 1).unwrap() - 0.15625).abs() < 1e-15);
    assert!(matches!(iir_error(4, 0.5, 1), Err(SupportError::Filters(4))));
    assert!(matches!(iir_error(2, 1.0, 1), Err(SupportError::Pole(_))));
    assert!(iir_simulate(1, 0.0, 3).is_err());
}

#[test]
fn iir_errors_fall_with_time_and_grow_with_depth() {
    // Closed forms: the simulated `1 - y` rounds to zero once y reaches 1.
    for step in 1..20 {
        let a = step as f64 * 0.05;
        let e = |n: usize, t: usize| iir_error(n, a, t).unwrap();
        for n in 1..=3 {
            for t in 1..=40 {
                assert!(e(n, t) < e(n, t - 1), "n={n} a={a} t={t}");
            }
        }
        for t in 0..=40 {
            assert!(e(2, t) > e(1, t));
            assert!(e(3, t) > e(2, t));
        }
    }
}

#[test]
fn priming_depth_thresholds() {
    // One filter accepts after a single step at any pole.
    for step in 1..20 {
        assert_eq!(min_priming(1, step as f64 * 0.05).unwrap(), 1);
    }
    // Two filters: the boundary a = 1/3 is met with equality at t = 2.
    assert_eq!(min_priming_exact(2, &frac(1, 3)).unwrap(), 2);
    assert_eq!(min_priming_exact(2, &(frac(1, 3) + frac(1, 1_000_000_000))).unwrap(), 3);
    assert_eq!(min_priming_exact(2, &(frac(1, 3) - frac(1, 1_000_000_000))).unwrap(), 2);
    for step in 1..20 {
        let a = frac(step, 20);
        let expect = if step * 3 <= 20 { 2 } else if step <= 12 { 3 } else { 4 };
        let got = min_priming_exact(2, &a).unwrap();
        if step <= 12 {
            assert_eq!(got, expect, "a={step}/20");
        } else {
            assert!(got >= expect, "a={step}/20");
        }
    }
    // Three steps stop sufficing at a = (1 + sqrt(17)) / 8 ~ 0.64039.
    assert_eq!(min_priming_exact(2, &frac(64_038, 100_000)).unwrap(), 3);
    assert_eq!(min_priming_exact(2, &frac(64_040, 100_000)).unwrap(), 4);
    // Three filters need more than two.
    assert_eq!(min_priming_exact(3, &frac(1, 4)).unwrap(), 3);
    assert_eq!(min_priming_exact(3, &frac(2, 5)).unwrap(), 4);
}

fn tiny_model(seed: u64) -> Model<f64> {
    let config = ArchitectureConfig {
        encoder_depths: [4, 8, 8, 8],
        decoder_conv_depth: 8,
        decoder_depths: [8, 8, 8, 8],
        ..ArchitectureConfig::default()
    };
    Model::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn flip_field_at_first_iteration() {
    let model = tiny_model(1);
    let f = empirical_receptive_field(&model, 0, 13, 1, 2, Probe::Flip).unwrap();
    assert!((5..=6).contains(&f.size()), "{f:?}");
    let err = empirical_receptive_field(&model, 0, 12, 1, 2, Probe::Flip).unwrap_err();
    assert!(matches!(err, SupportError::GridTooSmall { grid: 12, support: 6, need: 13 }));
}

#[test]
fn fields_stay_inside_the_analytic_support() {
    let model = tiny_model(3);
    for t in 0..=1 {
        let max = max_support_bits(t, 0, 0).unwrap() as usize;
        let grid = 2 * max + 1;
        for probe in [Probe::Flip, Probe::Gradient { offset: (0, 0) }, Probe::Gradient { offset: (8, 8) }] {
            let f = empirical_receptive_field(&model, t, grid, 1, 4, probe).unwrap();
            assert!(f.size() <= max, "t={t} {probe:?} {f:?}");
            assert!(f.size() >= 4, "t={t} {probe:?} {f:?}");
        }
    }
}

#[test]
fn priming_widens_the_first_field() {
    let mut model = tiny_model(5);
    let plain = empirical_receptive_field(&model, 0, 21, 1, 6, Probe::Gradient { offset: (0, 0) }).unwrap();
    model.set_priming(3, 0);
    let primed = empirical_receptive_field(&model, 0, 21, 1, 6, Probe::Gradient { offset: (0, 0) }).unwrap();
    assert!(primed.size() > plain.size(), "{plain:?} vs {primed:?}");
    assert!(primed.size() <= max_support_bits(0, 3, 0).unwrap() as usize);
}
