//! Multi-symbol arithmetic coding driven by 16-bit quantized PMFs.
//!
//! The coder keeps a 62-bit interval `[low, high]` and renormalizes one bit
//! at a time, deferring straddling bits (the classic "pending bit" scheme)
//! so no carry ever propagates into already written output. Bits are packed
//! most significant first. Termination writes the shortest bit string whose
//! zero-extension lands in the middle half of the final interval.

pub mod rational;

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

const PRECISION: u32 = 62;
const FULL: u64 = 1 << PRECISION;
const HALF: u64 = FULL >> 1;
const QUARTER: u64 = FULL >> 2;

/// Integer PMF whose counts sum to exactly 2^16, every count at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QuantizedPmf {
    cumulative: Vec<u32>,
}

impl QuantizedPmf {
    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        if counts.len() < 2 || counts.contains(&0) {
            return Err(Error::InvalidArgument("PMF needs >= 2 positive counts".into()));
        }
        let mut cumulative = Vec::with_capacity(counts.len() + 1);
        cumulative.push(0u32);
        let mut acc = 0u64;
        for &c in counts {
            acc += c as u64;
            cumulative.push(acc.min(u32::MAX as u64) as u32);
        }
        if acc != PROB_TOTAL as u64 {
            return Err(Error::InvalidArgument(format!("counts sum to {acc}, not {PROB_TOTAL}")));
        }
        Ok(QuantizedPmf { cumulative })
    }

    /// Floors `p * 2^16` (at least 1) and fixes the total with a
    /// largest-remainder pass. Identical inputs give identical counts.
    pub fn quantize(probs: &[f64]) -> Result<Self> {
        let m = probs.len();
        if m < 2 || m > PROB_TOTAL as usize {
            return Err(Error::InvalidArgument(format!("alphabet size {m} not in [2, 65536]")));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("PMF entry {p} is not positive")));
        }
        let scale = PROB_TOTAL as f64;
        let mut counts: Vec<i64> = probs.iter().map(|&p| ((p * scale).floor() as i64).max(1)).collect();
        let rem: Vec<f64> = probs.iter().map(|&p| p * scale - (p * scale).floor()).collect();
        let mut diff = PROB_TOTAL as i64 - counts.iter().sum::<i64>();
        let mut order: Vec<usize> = (0..m).collect();
        if diff > 0 {
            order.sort_by(|&a, &b| rem[b].total_cmp(&rem[a]).then(a.cmp(&b)));
            let mut idx = 0;
            while diff > 0 {
                counts[order[idx % m]] += 1;
                diff -= 1;
                idx += 1;
            }
        } else if diff < 0 {
            order.sort_by(|&a, &b| rem[a].total_cmp(&rem[b]).then(a.cmp(&b)));
            while diff < 0 {
                let mut progressed = false;
                for &i in &order {
                    if diff == 0 {
                        break;
                    }
                    if counts[i] > 1 {
                        counts[i] -= 1;
                        diff += 1;
                        progressed = true;
                    }
                }
                debug_assert!(progressed, "m <= 2^16 leaves room to shrink");
            }
        }
        let counts: Vec<u32> = counts.into_iter().map(|c| c as u32).collect();
        Self::from_counts(&counts)
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::quantize(&vec![1.0 / m as f64; m])
    }

    pub fn alphabet(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn count(&self, symbol: usize) -> u32 {
        self.cumulative[symbol + 1] - self.cumulative[symbol]
    }

    pub fn counts(&self) -> Vec<u32> {
        (0..self.alphabet()).map(|s| self.count(s)).collect()
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    /// Ideal code length of `symbol` under this PMF.
    pub fn cost_bits(&self, symbol: usize) -> f64 {
        -(self.count(symbol) as f64 / PROB_TOTAL as f64).log2()
    }

    fn find(&self, target: u32) -> usize {
        // last s with cumulative[s] <= target
        self.cumulative.partition_point(|&c| c <= target) - 1
    }
}

/// MSB-first bit sink.
#[derive(Clone, Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bit: bool) {
        let pos = (self.bits % 8) as u32;
        if pos == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().expect("just pushed") |= 0x80 >> pos;
        }
        self.bits += 1;
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// MSB-first bit source; reads past the end yield zeros and are counted.
#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn next_bit(&mut self) -> bool {
        let byte = (self.pos / 8) as usize;
        let bit = self
            .bytes
            .get(byte)
            .map(|b| b & (0x80 >> (self.pos % 8)) != 0)
            .unwrap_or(false);
        self.pos += 1;
        bit
    }

    pub fn bits_past_end(&self) -> u64 {
        self.pos.saturating_sub(8 * self.bytes.len() as u64)
    }
}

fn narrow(low: u64, high: u64, pmf: &QuantizedPmf, symbol: usize) -> (u64, u64) {
    let range = (high - low + 1) as u128;
    let lo = pmf.cumulative[symbol] as u128;
    let hi = pmf.cumulative[symbol + 1] as u128;
    let new_high = low + ((range * hi) >> PROB_BITS) as u64 - 1;
    let new_low = low + ((range * lo) >> PROB_BITS) as u64;
    (new_low, new_high)
}

/// Shortest `(bits, len)` such that `bits << (62 - len)` lies in the middle
/// half of `[low, high]`.
fn termination(low: u64, high: u64) -> (u64, u32) {
    let quarter = (high - low + 1) / 4;
    let (lo, hi) = (low + quarter, high - quarter);
    for len in 1..=PRECISION {
        let step = 1u64 << (PRECISION - len);
        let b = lo.div_ceil(step);
        if b * step <= hi {
            return (b, len);
        }
    }
    unreachable!("the middle half is never empty")
}

pub struct ArithmeticEncoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Default for ArithmeticEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithmeticEncoder {
    pub fn new() -> Self {
        ArithmeticEncoder {
            low: 0,
            high: FULL - 1,
            pending: 0,
            out: BitWriter::new(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(!bit);
        }
        self.pending = 0;
    }

    pub fn encode(&mut self, symbol: usize, pmf: &QuantizedPmf) {
        assert!(symbol < pmf.alphabet(), "symbol {symbol} outside PMF");
        (self.low, self.high) = narrow(self.low, self.high, pmf, symbol);
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let (bits, len) = termination(self.low, self.high);
        for i in (0..len).rev() {
            let bit = (bits >> i) & 1 == 1;
            if i == len - 1 {
                self.emit(bit);
            } else {
                self.out.push(bit);
            }
        }
        self.out.into_bytes()
    }
}

pub struct ArithmeticDecoder<'a> {
    low: u64,
    high: u64,
    code: u64,
    shifts: u64,
    input: BitReader<'a>,
    len: usize,
}

impl<'a> ArithmeticDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut input = BitReader::new(bytes);
        let mut code = 0u64;
        for _ in 0..PRECISION {
            code = (code << 1) | input.next_bit() as u64;
        }
        ArithmeticDecoder {
            low: 0,
            high: FULL - 1,
            code,
            shifts: 0,
            input,
            len: bytes.len(),
        }
    }

    pub fn decode(&mut self, pmf: &QuantizedPmf) -> Result<usize> {
        // a valid stream never has the look-ahead window fully past its end
        if self.input.bits_past_end() > PRECISION as u64 {
            return Err(Error::StreamExhausted("read past the end of the payload".into()));
        }
        let range = (self.high - self.low + 1) as u128;
        let offset = (self.code - self.low) as u128;
        let target = (((offset + 1) << PROB_BITS) - 1) / range;
        let symbol = pmf.find(target as u32);
        (self.low, self.high) = narrow(self.low, self.high, pmf, symbol);
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.code -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.code -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.code = (self.code << 1) | self.input.next_bit() as u64;
            self.shifts += 1;
        }
        Ok(symbol)
    }

    /// Checks that the payload has exactly the length the encoder produced.
    pub fn finish(self) -> Result<()> {
        let (_, len) = termination(self.low, self.high);
        let bits = self.shifts + len as u64;
        let expected = bits.div_ceil(8) as usize;
        if expected != self.len {
            return Err(Error::StreamExhausted(format!(
                "payload is {} bytes, decoder expected {}",
                self.len, expected
            )));
        }
        Ok(())
    }
}

pub fn ac_encode(symbols: &[usize], pmfs: &[QuantizedPmf]) -> Result<Vec<u8>> {
    if symbols.len() != pmfs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} symbols but {} PMFs",
            symbols.len(),
            pmfs.len()
        )));
    }
    let mut enc = ArithmeticEncoder::new();
    for (&s, pmf) in symbols.iter().zip(pmfs) {
        if s >= pmf.alphabet() {
            return Err(Error::InvalidArgument(format!("symbol {s} outside alphabet {}", pmf.alphabet())));
        }
        enc.encode(s, pmf);
    }
    Ok(enc.finish())
}

/// Decodes `n` symbols; `supplier(i, decoded_so_far)` yields the PMF for step `i`.
pub fn ac_decode(
    stream: &[u8],
    n: usize,
    mut supplier: impl FnMut(usize, &[usize]) -> QuantizedPmf,
) -> Result<Vec<usize>> {
    let mut dec = ArithmeticDecoder::new(stream);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let pmf = supplier(i, &out);
        out.push(dec.decode(&pmf)?);
    }
    dec.finish()?;
    Ok(out)
}
