//! Container format for code tensors and height maps.
//!
//! Layout (all integers little-endian):
//!
//! | field        | size | notes                                        |
//! |--------------|------|----------------------------------------------|
//! | magic        | 4    | `RPC1`                                       |
//! | version      | 1    | `1`                                          |
//! | flags        | 1    | bit 0 entropy-coded, bit 1 height map        |
//! | width        | 4    | image width before padding                   |
//! | height       | 4    | image height before padding                  |
//! | iterations   | 1    |                                              |
//! | map_len      | 4    | only with flag bit 1                         |
//! | map          | n    | raw DEFLATE of one byte per tile, row-major  |
//! | payload_len  | 4    |                                              |
//! | payload      | n    |                                              |
//!
//! See `FORMAT.md` at the repository root for the payload bit order.

mod range;

pub use range::{decode_bits, encode_bits, BitContext, Exhausted, RangeDecoder, RangeEncoder};

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::codec::{CodeTensor, BINARIZER_DEPTH, MAX_ITERATIONS, TILE};
use crate::sabr::HeightMap;

pub const MAGIC: &[u8; 4] = b"RPC1";
pub const VERSION: u8 = 1;
pub const FLAG_ENTROPY: u8 = 1;
pub const FLAG_MAP: u8 = 2;
/// Header bytes before any map or payload.
pub const FIXED_HEADER: usize = 4 + 1 + 1 + 4 + 4 + 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("bad magic: not an RPC1 stream")]
    BadMagic,
    #[error("unsupported container version {0} (expected {VERSION})")]
    Version(u8),
    #[error("truncated stream: {0}")]
    Truncated(String),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("cannot serialize: {0}")]
    Invalid(String),
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    /// Image size before padding to whole tiles.
    pub width: u32,
    pub height: u32,
    /// Codes with absent stacks zero-filled.
    pub codes: CodeTensor,
    pub map: Option<HeightMap>,
    pub entropy: bool,
}

impl Container {
    pub fn grid(&self) -> (usize, usize) {
        tile_grid(self.width, self.height)
    }
}

/// Tiles covering an image of the given size.
pub fn tile_grid(width: u32, height: u32) -> (usize, usize) {
    ((height as usize).div_ceil(TILE), (width as usize).div_ceil(TILE))
}

fn stack_present(map: Option<&HeightMap>, i: usize, r: usize, c: usize) -> bool {
    map.is_none_or(|m| i < m.at(r, c) as usize)
}

/// Visits every transmitted bit position in stream order.
fn for_each_present(
    iterations: usize,
    rows: usize,
    cols: usize,
    map: Option<&HeightMap>,
    mut f: impl FnMut(usize, usize, usize),
) {
    for i in 0..iterations {
        for r in 0..rows {
            for c in 0..cols {
                if stack_present(map, i, r, c) {
                    f(i, r, c);
                }
            }
        }
    }
}

pub fn deflate_map(map: &HeightMap) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(map.data()).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

fn inflate_map(bytes: &[u8], rows: usize, cols: usize) -> Result<HeightMap, StreamError> {
    // DEFLATE cannot expand by more than about 1032:1.
    if rows * cols > 1100 * (bytes.len() + 1) {
        return Err(StreamError::Corrupt(format!("height map of {} bytes cannot hold {rows}x{cols} tiles", bytes.len())));
    }
    let mut out = Vec::new();
    DeflateDecoder::new(bytes)
        .take(rows as u64 * cols as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| StreamError::Corrupt(format!("height map: {e}")))?;
    if out.len() != rows * cols {
        return Err(StreamError::Corrupt(format!("height map has {} entries, expected {}", out.len(), rows * cols)));
    }
    HeightMap::from_vec(rows, cols, out).map_err(|e| StreamError::Corrupt(e.to_string()))
}

fn validate(codes: &CodeTensor, map: Option<&HeightMap>, width: u32, height: u32) -> Result<(), StreamError> {
    let bad = |m: String| Err(StreamError::Invalid(m));
    if width == 0 || height == 0 {
        return bad("image has zero area".into());
    }
    let (rows, cols) = tile_grid(width, height);
    if codes.rows() != rows || codes.cols() != cols {
        return bad(format!("codes cover {}x{} tiles, image needs {rows}x{cols}", codes.rows(), codes.cols()));
    }
    let t = codes.iterations();
    if t == 0 || t > MAX_ITERATIONS {
        return bad(format!("iteration count {t} outside 1..={MAX_ITERATIONS}"));
    }
    if let Some(m) = map {
        if m.rows() != rows || m.cols() != cols {
            return bad(format!("height map is {}x{}, codes are {rows}x{cols}", m.rows(), m.cols()));
        }
        if m.max() as usize > t {
            return bad(format!("height map entry {} exceeds {t} iterations", m.max()));
        }
    }
    let mut missing = None;
    for_each_present(t, rows, cols, map, |i, r, c| {
        if missing.is_none() && codes.stack(i, r, c).contains(&0) {
            missing = Some((i, r, c));
        }
    });
    if let Some((i, r, c)) = missing {
        return bad(format!("stack ({i}, {r}, {c}) is transmitted but holds absent bits"));
    }
    Ok(())
}

/// Writes a container. Stacks outside the height map are skipped.
pub fn serialize(
    codes: &CodeTensor,
    map: Option<&HeightMap>,
    width: u32,
    height: u32,
    entropy: bool,
) -> Result<Vec<u8>, StreamError> {
    validate(codes, map, width, height)?;
    let (rows, cols, t) = (codes.rows(), codes.cols(), codes.iterations());

    let payload = if entropy {
        let mut enc = RangeEncoder::new();
        let mut contexts = vec![BitContext::default(); t * BINARIZER_DEPTH];
        for_each_present(t, rows, cols, map, |i, r, c| {
            for (d, &v) in codes.stack(i, r, c).iter().enumerate() {
                enc.encode(&mut contexts[i * BINARIZER_DEPTH + d], v > 0);
            }
        });
        enc.finish()
    } else {
        let mut bytes = Vec::new();
        let mut n = 0usize;
        for_each_present(t, rows, cols, map, |i, r, c| {
            for &v in codes.stack(i, r, c) {
                if n % 8 == 0 {
                    bytes.push(0u8);
                }
                if v > 0 {
                    *bytes.last_mut().expect("pushed above") |= 0x80 >> (n % 8);
                }
                n += 1;
            }
        });
        bytes
    };

    let map_bytes = map.map(deflate_map);
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 + payload.len() + map_bytes.as_ref().map_or(0, Vec::len));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(if entropy { FLAG_ENTROPY } else { 0 } | if map.is_some() { FLAG_MAP } else { 0 });
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.push(t as u8);
    if let Some(m) = &map_bytes {
        out.extend_from_slice(&(m.len() as u32).to_le_bytes());
        out.extend_from_slice(m);
    }
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StreamError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            StreamError::Truncated(format!("{what} needs {n} bytes at offset {}, {} available", self.pos, self.bytes.len() - self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, StreamError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, StreamError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a container, restoring absent stacks as zeros.
pub fn deserialize(bytes: &[u8]) -> Result<Container, StreamError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic").map_err(|_| StreamError::BadMagic)?;
    if magic != MAGIC {
        return Err(StreamError::BadMagic);
    }
    let version = cur.u8("version")?;
    if version != VERSION {
        return Err(StreamError::Version(version));
    }
    let flags = cur.u8("flags")?;
    if flags & !(FLAG_ENTROPY | FLAG_MAP) != 0 {
        return Err(StreamError::Corrupt(format!("unknown flag bits {flags:#04x}")));
    }
    let width = cur.u32("width")?;
    let height = cur.u32("height")?;
    if width == 0 || height == 0 {
        return Err(StreamError::Corrupt(format!("zero image size {width}x{height}")));
    }
    let t = cur.u8("iterations")? as usize;
    if t == 0 || t > MAX_ITERATIONS {
        return Err(StreamError::Corrupt(format!("iteration count {t}")));
    }
    let (rows, cols) = tile_grid(width, height);
    let map = if flags & FLAG_MAP != 0 {
        let len = cur.u32("map length")? as usize;
        let m = inflate_map(cur.take(len, "height map")?, rows, cols)?;
        if m.max() as usize > t {
            return Err(StreamError::Corrupt(format!("height map entry {} exceeds {t} iterations", m.max())));
        }
        Some(m)
    } else {
        None
    };
    let len = cur.u32("payload length")? as usize;
    let payload = cur.take(len, "payload")?;
    if cur.pos != bytes.len() {
        return Err(StreamError::Corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }

    let stacks = map.as_ref().map_or(t * rows * cols, |m| m.data().iter().map(|&v| v as usize).sum());
    let nbits = stacks * BINARIZER_DEPTH;
    let entropy = flags & FLAG_ENTROPY != 0;
    // A coded bit costs at least -log2(65535/65536) bits, so a payload can
    // never describe more than about 363k bits per byte.
    if entropy && nbits > (payload.len() + 1) * (1 << 19) {
        return Err(StreamError::Truncated(format!("{} payload bytes cannot hold {nbits} bits", payload.len())));
    }
    if !entropy && payload.len() < nbits.div_ceil(8) {
        return Err(StreamError::Truncated(format!("payload has {} bytes, needs {}", payload.len(), nbits.div_ceil(8))));
    }
    if map.is_none() && (rows * cols).checked_mul(t * BINARIZER_DEPTH).is_none() {
        return Err(StreamError::Corrupt("tile grid too large".into()));
    }
    let mut data = vec![0i8; t * rows * cols * BINARIZER_DEPTH];
    let offset = |i: usize, r: usize, c: usize| ((i * rows + r) * cols + c) * BINARIZER_DEPTH;

    if entropy {
        let truncated = |_| StreamError::Truncated("entropy-coded payload ends early".into());
        let mut dec = RangeDecoder::new(payload).map_err(truncated)?;
        let mut contexts = vec![BitContext::default(); t * BINARIZER_DEPTH];
        let mut result = Ok(());
        for_each_present(t, rows, cols, map.as_ref(), |i, r, c| {
            if result.is_err() {
                return;
            }
            let o = offset(i, r, c);
            for d in 0..BINARIZER_DEPTH {
                match dec.decode(&mut contexts[i * BINARIZER_DEPTH + d]) {
                    Ok(bit) => data[o + d] = if bit { 1 } else { -1 },
                    Err(e) => {
                        result = Err(truncated(e));
                        return;
                    }
                }
            }
        });
        result?;
        if dec.position() != payload.len() {
            return Err(StreamError::Corrupt(format!(
                "entropy payload has {} unused bytes",
                payload.len() - dec.position()
            )));
        }
    } else {
        let expected = nbits.div_ceil(8);
        if payload.len() < expected {
            return Err(StreamError::Truncated(format!("payload has {} bytes, needs {expected}", payload.len())));
        }
        if payload.len() > expected {
            return Err(StreamError::Corrupt(format!("payload has {} bytes, expected {expected}", payload.len())));
        }
        let mut n = 0usize;
        for_each_present(t, rows, cols, map.as_ref(), |i, r, c| {
            let o = offset(i, r, c);
            for d in 0..BINARIZER_DEPTH {
                let bit = payload[n / 8] & (0x80 >> (n % 8)) != 0;
                data[o + d] = if bit { 1 } else { -1 };
                n += 1;
            }
        });
        if nbits % 8 != 0 && payload[expected - 1] & (0xFF >> (nbits % 8)) != 0 {
            return Err(StreamError::Corrupt("nonzero padding bits".into()));
        }
    }

    let codes = CodeTensor::from_vec(t, rows, cols, data).map_err(|e| StreamError::Corrupt(e.to_string()))?;
    Ok(Container { width, height, codes, map, entropy })
}

/// `8 * bytes / (width * height)`.
pub fn measured_bpp(bytes: usize, width: u32, height: u32) -> Result<f64, StreamError> {
    let area = width as u64 * height as u64;
    if area == 0 {
        return Err(StreamError::Invalid("zero-area image".into()));
    }
    Ok(8.0 * bytes as f64 / area as f64)
}
