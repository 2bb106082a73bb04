use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpc_core::loss::{block_dssim, expand_weights, weighted_l1, LossBaseline, LossError};
use rpc_core::nn::{Graph, ParamSet, Tape};
use rpc_core::tensor::{Shape, Tensor};

fn textured(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.1..0.9))
}

fn perturbed(rng: &mut ChaCha8Rng, x: &Tensor<f64>, noise: f64) -> Tensor<f64> {
    Tensor::from_fn(x.shape(), |i| {
        let d: f64 = rng.random_range(0.2 * noise..noise);
        if rng.random_bool(0.5) {
            x.data()[i] + d
        } else {
            x.data()[i] - d
        }
    })
}

/// SSIM with a uniform window over one block, written from the definition.
fn oracle_block_ssim(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
    let (c1, c2) = (0.0001, 0.0009);
    (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

fn block_channel(img: &Tensor<f64>, by: usize, bx: usize, c: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for y in by * 8..by * 8 + 8 {
        for x in bx * 8..bx * 8 + 8 {
            out.push(img.at(0, y, x, c));
        }
    }
    out
}

#[test]
fn identical_images_have_zero_dissimilarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = textured(&mut rng, Shape::new(2, 16, 24, 3));
    let d = block_dssim(&x, &x).unwrap();
    assert_eq!(d.shape(), Shape::new(2, 2, 3, 1));
    assert!(d.data().iter().all(|&v| v.abs() < 1e-15));
}

#[test]
fn inverted_block_is_more_than_half_dissimilar() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = textured(&mut rng, Shape::new(1, 8, 8, 3));
    let y = x.map(|v| 1.0 - v);
    assert!(block_dssim(&x, &y).unwrap().data()[0] > 0.5);
}

#[test]
fn constant_offset_matches_oracle() {
    let x = Tensor::full(Shape::new(1, 8, 8, 3), 0.4);
    let y = Tensor::full(Shape::new(1, 8, 8, 3), 0.5);
    let d = block_dssim(&x, &y).unwrap().data()[0];
    let s = oracle_block_ssim(&[0.4; 64], &[0.5; 64]);
    assert!((d - (1.0 - s) / 2.0).abs() < 1e-10);
}

#[test]
fn random_blocks_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = textured(&mut rng, Shape::new(1, 24, 16, 3));
    let y = perturbed(&mut rng, &x, 0.2);
    let d = block_dssim(&x, &y).unwrap();
    for by in 0..3 {
        for bx in 0..2 {
            let s: f64 =
                (0..3).map(|c| oracle_block_ssim(&block_channel(&x, by, bx, c), &block_channel(&y, by, bx, c))).sum::<f64>() / 3.0;
            assert!((d.at(0, by, bx, 0) - (1.0 - s) / 2.0).abs() < 1e-10);
        }
    }
}

#[test]
fn dims_must_be_block_aligned() {
    let x = Tensor::<f64>::zeros(Shape::new(1, 12, 8, 3));
    assert!(matches!(block_dssim(&x, &x), Err(LossError::Dims { .. })));
}

#[test]
fn unit_weights_reduce_to_plain_l1() {
    // Every block holds the same pattern, so every block has the same D.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tile = textured(&mut rng, Shape::new(1, 8, 8, 3));
    let noise = perturbed(&mut rng, &tile, 0.1);
    let tiled = |t: &Tensor<f64>| Tensor::from_fn(Shape::new(1, 16, 24, 3), |i| {
        let (c, p) = (i % 3, i / 3);
        let (y, x) = (p / 24, p % 24);
        t.at(0, y % 8, x % 8, c)
    });
    let (x, y) = (tiled(&tile), tiled(&noise));
    let d = block_dssim(&x, &y).unwrap().data()[0];
    let out = weighted_l1(&x, &y, &LossBaseline::from_value(d)).unwrap();
    let l1: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum();
    assert!((out.loss - l1).abs() < 1e-9 * l1);
}

#[test]
fn perfect_reconstruction_has_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = textured(&mut rng, Shape::new(1, 16, 16, 3));
    let out = weighted_l1(&x, &x, &LossBaseline::from_value(0.1)).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(out.weights.data().iter().all(|&w| w.abs() < 1e-14));
}

/// Gradient w.r.t. the reconstruction: the frozen-weight derivative is
/// what the loss reports; differentiating through the weights gives
/// something else.
#[test]
fn gradient_is_the_frozen_weight_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = textured(&mut rng, Shape::new(1, 16, 16, 3));
    let y = perturbed(&mut rng, &x, 0.15);
    let baseline = LossBaseline::from_value(0.05);
    let out = weighted_l1(&x, &y, &baseline).unwrap();
    let grad = out.gradient(&x, &y).unwrap();
    let frozen = expand_weights::<f64>(&out.weights, x.shape());
    let h = 1e-5;

    let mut worst_full = 0.0f64;
    for i in 0..x.len() {
        let mut up = y.clone();
        up.data_mut()[i] += h;
        let mut down = y.clone();
        down.data_mut()[i] -= h;

        let frozen_loss = |yy: &Tensor<f64>| -> f64 {
            x.data().iter().zip(yy.data()).zip(frozen.data()).map(|((a, b), w)| w * (b - a).abs()).sum()
        };
        let numeric_frozen = (frozen_loss(&up) - frozen_loss(&down)) / (2.0 * h);
        let g = grad.data()[i];
        assert!((g - numeric_frozen).abs() <= 1e-4 * g.abs().max(1e-3), "frozen check at {i}");

        let full = |yy: &Tensor<f64>| weighted_l1(&x, yy, &baseline).unwrap().loss;
        let numeric_full = (full(&up) - full(&down)) / (2.0 * h);
        worst_full = worst_full.max((g - numeric_full).abs() / g.abs().max(1e-3));
    }
    assert!(worst_full > 1e-4, "full derivative unexpectedly agrees ({worst_full})");
}

#[test]
fn tape_gradient_agrees_with_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = textured(&mut rng, Shape::new(1, 8, 16, 3));
    let y = perturbed(&mut rng, &x, 0.1);
    let out = weighted_l1(&x, &y, &LossBaseline::from_value(0.02)).unwrap();
    let empty = ParamSet::new();
    let mut tape = Tape::new(&empty);
    let leaf = tape.leaf(y.clone());
    let w = expand_weights::<f64>(&out.weights, x.shape());
    let l = tape.weighted_abs_sum(leaf, x.clone(), w).unwrap();
    assert!((tape.value(&l).data()[0] - out.loss).abs() < 1e-12);
    let g = tape.reverse_pass(1.0);
    assert_eq!(g.wrt(leaf).unwrap(), &out.gradient(&x, &y).unwrap());
}

#[test]
fn above_average_blocks_are_overweighted() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = textured(&mut rng, Shape::new(1, 16, 16, 3));
    let y = Tensor::from_fn(x.shape(), |i| {
        let p = i / 3;
        let noisy = (p / 16) < 8 && (p % 16) < 8;
        if noisy { 1.0 - x.data()[i] } else { x.data()[i] + 0.01 }
    });
    let d = block_dssim(&x, &y).unwrap();
    let mean = d.data().iter().sum::<f64>() / d.len() as f64;
    let out = weighted_l1(&x, &y, &LossBaseline::from_value(mean)).unwrap();
    for (dv, wv) in d.data().iter().zip(out.weights.data()) {
        if *dv > mean {
            assert!(*wv > 1.0);
        } else if *dv < mean {
            assert!(*wv < 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_identity(seed in any::<u64>(), noise in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = textured(&mut rng, Shape::new(1, 8, 16, 3));
        let y = perturbed(&mut rng, &x, noise);
        let out = weighted_l1(&x, &y, &LossBaseline::from_value(0.1)).unwrap();
        prop_assert!(out.loss >= 0.0);
        if x != y {
            prop_assert!(out.loss > 0.0);
        }
    }

    #[test]
    fn loss_and_gradient_scale_inversely_with_baseline(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = textured(&mut rng, Shape::new(1, 8, 8, 3));
        let y = perturbed(&mut rng, &x, 0.2);
        let a = weighted_l1(&x, &y, &LossBaseline::from_value(0.1)).unwrap();
        let b = weighted_l1(&x, &y, &LossBaseline::from_value(0.1 * c)).unwrap();
        prop_assert!((a.loss / c - b.loss).abs() <= 1e-12 * a.loss.max(1.0));
        let (ga, gb) = (a.gradient(&x, &y).unwrap(), b.gradient(&x, &y).unwrap());
        for (p, q) in ga.data().iter().zip(gb.data()) {
            prop_assert!((p / c - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn baseline_stays_within_observed_range(values in proptest::collection::vec(0.001f64..1.0, 1..50)) {
        let mut b = LossBaseline::new();
        let (lo, hi) = values.iter().fold((f64::MAX, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        for v in &values {
            b.update(*v).unwrap();
            prop_assert!(b.value() > 0.0);
        }
        prop_assert!(b.value() >= lo - 1e-15 && b.value() <= hi + 1e-15);
    }
}
