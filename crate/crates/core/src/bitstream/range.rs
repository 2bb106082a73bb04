//! Binary range coder with carry propagation and adaptive bit contexts.

const TOP: u32 = 1 << 24;
const PROB_BITS: u32 = 16;
const PROB_ONE: u32 = 1 << PROB_BITS;

/// Laplace-smoothed frequency counts for one binary source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BitContext {
    ones: u32,
    total: u32,
}

impl BitContext {
    /// `P(bit = 1) = (ones + 1) / (total + 2)`.
    pub fn p_one(&self) -> f64 {
        (self.ones as f64 + 1.0) / (self.total as f64 + 2.0)
    }

    /// Probability of a zero bit on a 16-bit scale, kept inside (0, 1).
    fn p_zero_scaled(&self) -> u32 {
        let zeros = (self.total - self.ones) as u64 + 1;
        let p = (zeros << PROB_BITS) / (self.total as u64 + 2);
        (p as u32).clamp(1, PROB_ONE - 1)
    }

    pub fn update(&mut self, bit: bool) {
        if self.total == u32::MAX {
            // Halve to keep the estimate adaptive and the counts bounded.
            self.ones /= 2;
            self.total /= 2;
        }
        self.ones += bit as u32;
        self.total += 1;
    }
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, pending: 1, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            while self.pending > 0 {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes `bit` under `ctx` and adapts the context.
    pub fn encode(&mut self, ctx: &mut BitContext, bit: bool) {
        let bound = (self.range >> PROB_BITS) * ctx.p_zero_scaled();
        if bit {
            self.low += bound as u64;
            self.range -= bound;
        } else {
            self.range = bound;
        }
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        ctx.update(bit);
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

/// Reading past the end of the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exhausted;

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self, Exhausted> {
        let mut d = Self { input, pos: 0, range: u32::MAX, code: 0 };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next()? as u32;
        }
        Ok(d)
    }

    fn next(&mut self) -> Result<u8, Exhausted> {
        let b = *self.input.get(self.pos).ok_or(Exhausted)?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, ctx: &mut BitContext) -> Result<bool, Exhausted> {
        let bound = (self.range >> PROB_BITS) * ctx.p_zero_scaled();
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next()? as u32;
        }
        ctx.update(bit);
        Ok(bit)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Codes a bit sequence under one adaptive context.
pub fn encode_bits(bits: &[bool]) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    let mut ctx = BitContext::default();
    for &b in bits {
        enc.encode(&mut ctx, b);
    }
    enc.finish()
}

/// Inverse of [`encode_bits`].
pub fn decode_bits(bytes: &[u8], n: usize) -> Result<Vec<bool>, Exhausted> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut ctx = BitContext::default();
    (0..n).map(|_| dec.decode(&mut ctx)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_estimate() {
        let mut c = BitContext::default();
        assert_eq!(c.p_one(), 0.5);
        c.update(true);
        assert!((c.p_one() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.p_zero_scaled(), PROB_ONE / 3);
    }

    #[test]
    fn empty_and_tiny_sequences_roundtrip() {
        for bits in [vec![], vec![true], vec![false], vec![true, false, true]] {
            let bytes = encode_bits(&bits);
            assert_eq!(decode_bits(&bytes, bits.len()).unwrap(), bits);
        }
    }

    #[test]
    fn long_runs_exercise_carries() {
        let bits: Vec<bool> = (0..200_000).map(|i| i % 977 != 0).collect();
        let bytes = encode_bits(&bits);
        assert_eq!(decode_bits(&bytes, bits.len()).unwrap(), bits);
        assert!(bytes.len() < 2_000);
    }
}
