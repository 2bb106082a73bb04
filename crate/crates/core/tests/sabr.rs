use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpc_core::bitstream::{deflate_map, deserialize, serialize};
use rpc_core::codec::{compress, decompress, ArchitectureConfig, CodeTensor, Model};
use rpc_core::sabr::{
    allocate, apply_mask, clamp_window, kept_bits, sabr_bpp, target_quality_for, tile_error, HeightMap, TileGrid,
};
use rpc_core::tensor::{Shape, Tensor};

fn grid(rows: usize, cols: usize, data: Vec<f64>) -> TileGrid {
    TileGrid { rows, cols, data }
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
fn perfect_reconstruction_has_zero_tile_error() {
    let x = Tensor::from_fn(Shape::new(1, 32, 48, 3), |i| (i as f64 * 0.01).sin());
    let e = tile_error(&x, &x).unwrap();
    assert_eq!((e.rows, e.cols), (2, 3));
    assert!(e.data.iter().all(|&v| v == 0.0));
}

#[test]
fn tile_error_takes_the_worst_sub_tile() {
    let x = Tensor::<f64>::zeros(Shape::new(1, 16, 16, 3));
    let mut y = x.clone();
    for yy in 8..16 {
        for xx in 0..8 {
            for c in 0..3 {
                y.set(0, yy, xx, c, 0.2);
            }
        }
    }
    let e = tile_error(&x, &y).unwrap();
    assert!((e.data[0] - 0.2).abs() < 1e-15);
}

#[test]
fn tile_error_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = Shape::new(1, 48, 32, 3);
    let x = Tensor::<f64>::from_fn(shape, |_| rng.random_range(0.0..1.0));
    let y = Tensor::<f64>::from_fn(shape, |_| rng.random_range(0.0..1.0));
    let e = tile_error(&x, &y).unwrap();
    for r in 0..3 {
        for c in 0..2 {
            let mut worst = 0.0f64;
            for (sy, sx) in [(0, 0), (0, 8), (8, 0), (8, 8)] {
                let mut sum = 0.0f64;
                for yy in 0..8 {
                    for xx in 0..8 {
                        for ch in 0..3 {
                            let (py, px) = (r * 16 + sy + yy, c * 16 + sx + xx);
                            sum += (x.at(0, py, px, ch) - y.at(0, py, px, ch)).abs();
                        }
                    }
                }
                worst = worst.max(sum / 192.0);
            }
            assert_eq!(e.at(r, c), worst);
        }
    }
}

#[test]
fn tile_error_rejects_mismatch() {
    let a = Tensor::<f64>::zeros(Shape::new(1, 16, 16, 3));
    let b = Tensor::<f64>::zeros(Shape::new(1, 16, 32, 3));
    assert!(tile_error(&a, &b).is_err());
    let c = Tensor::<f64>::zeros(Shape::new(1, 8, 16, 3));
    assert!(tile_error(&c, &c).is_err());
}

fn curves_from(per_tile: &[Vec<f64>]) -> Vec<TileGrid> {
    let n = per_tile.len();
    (0..16).map(|t| grid(1, n, per_tile.iter().map(|c| c[t]).collect())).collect()
}

#[test]
fn easy_tiles_are_raised_to_the_window_floor() {
    let curves = curves_from(&[vec![0.0; 16]]);
    assert_eq!(allocate(&curves, 0.1, 4).unwrap().data(), &[2]);
}

#[test]
fn hopeless_tiles_are_capped_at_the_window_ceiling() {
    let curves = curves_from(&[vec![1.0; 16]]);
    assert_eq!(allocate(&curves, 0.1, 4).unwrap().data(), &[5]);
}

#[test]
fn zero_target_at_full_rate_uses_everything() {
    let curves = curves_from(&[vec![0.01; 16], vec![0.5; 16]]);
    assert_eq!(allocate(&curves, 0.0, 16).unwrap().data(), &[16, 16]);
}

#[test]
fn allocation_picks_first_iteration_meeting_quality() {
    let decreasing: Vec<f64> = (1..=16).map(|t| 1.0 / t as f64).collect();
    let curves = curves_from(&[decreasing]);
    // 1/t <= 0.2 first at t = 5; window for t* = 5 is [3, 6].
    assert_eq!(allocate(&curves, 0.2, 5).unwrap().data(), &[5]);
    assert!(allocate(&[], 0.2, 5).is_err());
    assert!(allocate(&curves, 0.2, 0).is_err());
}

#[test]
fn target_quality_is_mean_error_at_target() {
    let curves = vec![grid(1, 2, vec![0.4, 0.2]), grid(1, 2, vec![0.3, 0.1])];
    assert!((target_quality_for(&curves, 2).unwrap() - 0.2).abs() < 1e-15);
    assert!(target_quality_for(&curves, 3).is_err());
}

#[test]
fn full_map_is_identity_and_empty_map_zero_fills() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = (0..4 * 2 * 2 * 32).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    let codes = CodeTensor::from_vec(4, 2, 2, data).unwrap();
    assert_eq!(apply_mask(&codes, &HeightMap::uniform(2, 2, 16)).unwrap(), codes);
    let none = apply_mask(&codes, &HeightMap::uniform(2, 2, 0)).unwrap();
    assert!(none.data().iter().all(|&v| v == 0));
    let img = decompress(&tiny_model(3), &none, 0.0).unwrap();
    assert!(img.all_finite());
    assert!(apply_mask(&codes, &HeightMap::uniform(1, 2, 1)).is_err());
}

#[test]
fn effective_rate_matches_bit_accounting() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (rows, cols, t) = (3, 5, 6);
    let data = (0..t * rows * cols * 32).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    let codes = CodeTensor::from_vec(t, rows, cols, data).unwrap();
    let map = HeightMap::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(0..=t as u8)).collect()).unwrap();
    let masked = apply_mask(&codes, &map).unwrap();
    let present = masked.data().iter().filter(|&&v| v != 0).count();
    assert_eq!(present, kept_bits(&map, t));
    let mean_t = map.total() as f64 / (rows * cols) as f64;
    let pixels = (rows * cols * 256) as f64;
    assert!((present as f64 / pixels - mean_t / 8.0).abs() < 1e-15);

    // The raw payload carries exactly the kept bits.
    let bytes = serialize(&masked, Some(&map), (cols * 16) as u32, (rows * 16) as u32, false).unwrap();
    let map_len = deflate_map(&map).len();
    assert_eq!(bytes.len(), 15 + 4 + map_len + 4 + present.div_ceil(8));
}

#[test]
fn sabr_rate_counts_map_bytes() {
    let map = HeightMap::uniform(4, 4, 4);
    let n = deflate_map(&map).len();
    assert!(n > 0);
    let expect = 0.5 + 8.0 * n as f64 / 4096.0;
    assert!((sabr_bpp(&map, n) - expect).abs() < 1e-15);
    assert!(sabr_bpp(&map, n) > 0.5);
}

#[test]
fn masked_stream_decodes_standalone_and_matches_zero_fill() {
    let model = tiny_model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let image = Tensor::<f64>::from_fn(Shape::new(1, 32, 48, 3), |_| rng.random_range(-0.5..0.5));
    let out = compress(&model, &image, 6).unwrap();
    let curves: Vec<TileGrid> = out.reconstructions.iter().map(|r| tile_error(&image, r).unwrap()).collect();
    let q = target_quality_for(&curves, 4).unwrap();
    let map = allocate(&curves, q, 4).unwrap();
    let (lo, hi) = clamp_window(4);
    assert!(map.data().iter().all(|&v| (lo..=hi).contains(&(v as usize))));
    let codes = out.codes.truncated(hi);
    let masked = apply_mask(&codes, &map).unwrap();

    let bytes = serialize(&masked, Some(&map), 48, 32, true).unwrap();
    let restored = deserialize(&bytes).unwrap();
    assert_eq!(restored.codes, masked);
    let from_stream = decompress(&model, &restored.codes, 0.0).unwrap();

    // Zero-fill equivalence: overwrite absent bits of the full codes with 0.
    let mut overwritten = codes.clone();
    for i in 0..codes.iterations() {
        for r in 0..2 {
            for c in 0..3 {
                if i >= map.at(r, c) as usize {
                    overwritten.stack_mut(i, r, c).iter_mut().for_each(|v| *v = 0);
                }
            }
        }
    }
    let reference = decompress(&model, &overwritten, 0.0).unwrap();
    assert_eq!(from_stream, reference);
}

proptest! {
    #[test]
    fn looser_targets_never_need_more(
        errors in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 16), 1..8),
        q in 0.0f64..1.0,
        dq in 0.0f64..0.5,
    ) {
        let curves = curves_from(&errors);
        // Widest window so clamping does not mask the unclamped search.
        let tight = allocate(&curves, q, 16).unwrap();
        let loose = allocate(&curves, q + dq, 16).unwrap();
        // With t* = 16 the window is [8, 16]; compare raw searches directly too.
        for (a, b) in tight.data().iter().zip(loose.data()) {
            prop_assert!(b <= a);
        }
        for (i, e) in errors.iter().enumerate() {
            let search = |q: f64| e.iter().position(|&v| v <= q).map_or(16, |p| p + 1);
            prop_assert!(search(q + dq) <= search(q), "tile {i}");
        }
    }

    #[test]
    fn allocation_respects_clamp_window(
        errors in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 16), 1..8),
        q in 0.0f64..1.0,
        t in 1usize..=16,
    ) {
        let map = allocate(&curves_from(&errors), q, t).unwrap();
        let (lo, hi) = clamp_window(t);
        prop_assert!(map.data().iter().all(|&v| (lo..=hi).contains(&(v as usize))));
        let code_bpp = map.total() as f64 * 32.0 / (map.rows() * map.cols() * 256) as f64;
        prop_assert!(sabr_bpp(&map, deflate_map(&map).len()) >= code_bpp);
    }
}
