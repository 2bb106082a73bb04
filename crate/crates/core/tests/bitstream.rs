use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpc_core::bitstream::{
    decode_bits, deserialize, encode_bits, measured_bpp, serialize, StreamError, FIXED_HEADER, MAGIC,
};
use rpc_core::codec::CodeTensor;
use rpc_core::sabr::HeightMap;

fn random_codes(rng: &mut ChaCha8Rng, t: usize, rows: usize, cols: usize, p_one: f64) -> CodeTensor {
    let data = (0..t * rows * cols * 32).map(|_| if rng.random_bool(p_one) { 1 } else { -1 }).collect();
    CodeTensor::from_vec(t, rows, cols, data).unwrap()
}

fn random_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize, t: usize) -> HeightMap {
    HeightMap::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(0..=t) as u8).collect()).unwrap()
}

fn masked(codes: &CodeTensor, map: &HeightMap) -> CodeTensor {
    rpc_core::sabr::apply_mask(codes, map).unwrap()
}

#[test]
fn header_is_nineteen_bytes_and_raw_payload_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let codes = random_codes(&mut rng, 2, 2, 2, 0.5);
    let bytes = serialize(&codes, None, 32, 32, false).unwrap();
    assert_eq!(FIXED_HEADER, 15);
    // Fixed header, payload length field, 2*2*2*32 bits.
    assert_eq!(bytes.len(), FIXED_HEADER + 4 + 32);
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(bytes[4], 1);
    assert_eq!(bytes[5], 0);
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 32);
    assert_eq!(bytes[14], 2);
    assert_eq!(u32::from_le_bytes(bytes[15..19].try_into().unwrap()), 32);
}

#[test]
fn raw_bits_are_msb_first_with_one_for_plus() {
    let mut data = vec![-1i8; 32];
    data[0] = 1;
    data[9] = 1;
    let codes = CodeTensor::from_vec(1, 1, 1, data).unwrap();
    let bytes = serialize(&codes, None, 16, 16, false).unwrap();
    assert_eq!(&bytes[19..], &[0x80, 0x40, 0, 0]);
}

#[test]
fn flags_reflect_options() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let codes = random_codes(&mut rng, 3, 2, 2, 0.5);
    let map = HeightMap::uniform(2, 2, 2);
    let m = masked(&codes, &map);
    assert_eq!(serialize(&codes, None, 32, 32, true).unwrap()[5], 1);
    assert_eq!(serialize(&m, Some(&map), 32, 32, false).unwrap()[5], 2);
    assert_eq!(serialize(&m, Some(&map), 32, 32, true).unwrap()[5], 3);
}

#[test]
fn roundtrip_all_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (w, h) in [(32, 32), (33, 17), (100, 64)] {
        let (rows, cols) = rpc_core::bitstream::tile_grid(w, h);
        let codes = random_codes(&mut rng, 5, rows, cols, 0.7);
        let map = random_map(&mut rng, rows, cols, 5);
        let m = masked(&codes, &map);
        for entropy in [false, true] {
            let c = deserialize(&serialize(&codes, None, w, h, entropy).unwrap()).unwrap();
            assert_eq!((c.codes, c.map, c.width, c.height, c.entropy), (codes.clone(), None, w, h, entropy));
            let c = deserialize(&serialize(&m, Some(&map), w, h, entropy).unwrap()).unwrap();
            assert_eq!(c.codes, m);
            assert_eq!(c.map.as_ref(), Some(&map));
        }
    }
}

#[test]
fn random_containers_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..10_000 {
        let t = rng.random_range(1..=16);
        let w = rng.random_range(1..=80);
        let h = rng.random_range(1..=80);
        let (rows, cols) = rpc_core::bitstream::tile_grid(w, h);
        let p_one = rng.random_range(0.0..1.0);
        let codes = random_codes(&mut rng, t, rows, cols, p_one);
        let use_map = rng.random_bool(0.5);
        let entropy = rng.random_bool(0.5);
        let map = use_map.then(|| random_map(&mut rng, rows, cols, t));
        let codes = map.as_ref().map_or(codes.clone(), |m| masked(&codes, m));
        let bytes = serialize(&codes, map.as_ref(), w, h, entropy).unwrap();
        let c = deserialize(&bytes).unwrap();
        assert_eq!(c.codes, codes, "case {case}");
        assert_eq!(c.map, map, "case {case}");
        assert_eq!(serialize(&c.codes, c.map.as_ref(), w, h, entropy).unwrap(), bytes);
    }
}

#[test]
fn corrupt_magic_and_version_are_distinct_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bytes = serialize(&random_codes(&mut rng, 1, 1, 1, 0.5), None, 16, 16, false).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(deserialize(&bad), Err(StreamError::BadMagic));
    assert_eq!(deserialize(b"RP"), Err(StreamError::BadMagic));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert_eq!(deserialize(&bad), Err(StreamError::Version(2)));
}

#[test]
fn every_truncation_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let codes = random_codes(&mut rng, 4, 2, 3, 0.8);
    let map = random_map(&mut rng, 2, 3, 4);
    let m = masked(&codes, &map);
    for (c, map, entropy) in [(&codes, None, false), (&codes, None, true), (&m, Some(&map), false), (&m, Some(&map), true)] {
        let bytes = serialize(c, map, 48, 32, entropy).unwrap();
        for cut in 0..bytes.len() {
            let err = deserialize(&bytes[..cut]).unwrap_err();
            if cut >= 4 {
                assert!(matches!(err, StreamError::Truncated(_)), "cut {cut}: {err:?}");
            }
        }
        // The last byte of the payload is cut: reported as truncation.
        let err = deserialize(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, StreamError::Truncated(_)));
    }
}

#[test]
fn random_mutations_never_panic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let codes = random_codes(&mut rng, 3, 2, 2, 0.6);
    let map = random_map(&mut rng, 2, 2, 3);
    let base = serialize(&masked(&codes, &map), Some(&map), 32, 32, true).unwrap();
    for _ in 0..5_000 {
        let mut b = base.clone();
        for _ in 0..rng.random_range(1..4) {
            let i = rng.random_range(0..b.len());
            b[i] = rng.random();
        }
        let _ = deserialize(&b);
    }
}

#[test]
fn inconsistent_inputs_are_rejected_on_write() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let codes = random_codes(&mut rng, 2, 2, 2, 0.5);
    assert!(serialize(&codes, None, 48, 32, false).is_err());
    assert!(serialize(&codes, Some(&HeightMap::uniform(1, 2, 1)), 32, 32, false).is_err());
    assert!(serialize(&codes, Some(&HeightMap::uniform(2, 2, 3)), 32, 32, false).is_err());
    let holes = masked(&codes, &HeightMap::uniform(2, 2, 1));
    assert!(serialize(&holes, None, 32, 32, false).is_err());
    assert!(serialize(&codes, None, 0, 32, false).is_err());
}

#[test]
fn coder_is_lossless_up_to_a_million_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (n, p) in [(1usize, 0.5), (7, 0.1), (1000, 0.99), (65_537, 0.3), (1_000_000, 0.5), (1_000_000, 0.02)] {
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let bytes = encode_bits(&bits);
        assert_eq!(decode_bits(&bytes, n).unwrap(), bits, "n={n} p={p}");
    }
}

fn binary_entropy(p: f64) -> f64 {
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

#[test]
fn biased_bits_code_near_the_shannon_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 100_000;
    let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.9)).collect();
    let bound = binary_entropy(0.9);
    assert!((bound - 0.469).abs() < 1e-3);
    let rate = 8.0 * encode_bits(&bits).len() as f64 / n as f64;
    assert!(rate <= 1.05 * bound, "rate {rate} vs bound {bound}");
}

#[test]
fn incompressible_input_costs_at_most_sixteen_extra_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [10_000usize, 50_000, 250_000, 1_000_000] {
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let raw = n.div_ceil(8);
        let coded = encode_bits(&bits).len();
        assert!(coded <= raw + 16, "n={n}: {coded} > {raw} + 16");
    }
}

#[test]
fn measured_bpp_accounting() {
    assert_eq!(measured_bpp(47, 32, 32).unwrap(), 0.3671875);
    assert_eq!(measured_bpp(0, 32, 32).unwrap(), 0.0);
    assert!(measured_bpp(10, 0, 32).is_err());
    let mut prev = -1.0;
    for n in 0..100 {
        let b = measured_bpp(n, 48, 16).unwrap();
        assert!(b > prev);
        prev = b;
    }
}
