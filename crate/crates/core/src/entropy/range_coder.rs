//! 32-bit renormalizing range coder with carry propagation.
//!
//! Symbols are coded against cumulative frequency tables whose total is at
//! most [`FREQ_TOTAL`]. The encoder emits one byte per renormalization
//! shift plus four termination bytes; the decoder consumes exactly the same
//! number, so a truncated or padded payload is always detected.

use crate::error::{Error, Result};

pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;
const TOP: u32 = 1 << 24;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    skip_first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            skip_first: true,
            out: Vec::new(),
        }
    }

    /// Code the symbol occupying `[start, start + freq)` out of `total`.
    pub fn encode(&mut self, start: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && start + freq <= total && total <= FREQ_TOTAL);
        let r = self.range / total;
        self.low += u64::from(start) * u64::from(r);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn emit(&mut self, byte: u8) {
        // The first byte of the carry scheme is always zero.
        if self.skip_first {
            self.skip_first = false;
        } else {
            self.out.push(byte);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.emit(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    step: u32,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(buf: &'a [u8]) -> Result<Self> {
        if buf.len() < 4 {
            return Err(Error::Entropy(format!(
                "payload of {} bytes is shorter than the 4-byte coder state",
                buf.len()
            )));
        }
        let code = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
        Ok(RangeDecoder {
            code,
            range: u32::MAX,
            step: 0,
            buf,
            pos: 4,
        })
    }

    /// Target frequency of the next symbol; must be followed by
    /// [`consume`](Self::consume) with the symbol that covers it.
    pub fn target(&mut self, total: u32) -> u32 {
        self.step = self.range / total;
        (self.code / self.step).min(total - 1)
    }

    pub fn consume(&mut self, start: u32, freq: u32) -> Result<()> {
        self.code = self.code.wrapping_sub(start.wrapping_mul(self.step));
        self.range = self.step * freq;
        while self.range < TOP {
            let byte = *self
                .buf
                .get(self.pos)
                .ok_or_else(|| Error::Entropy("payload truncated".into()))?;
            self.pos += 1;
            self.code = (self.code << 8) | u32::from(byte);
            self.range <<= 8;
        }
        Ok(())
    }

    /// Decode a symbol index against a cumulative table
    /// (`cdf[0] = 0`, `cdf[n] = total`).
    pub fn decode_symbol(&mut self, cdf: &[u32]) -> Result<usize> {
        let total = *cdf.last().expect("non-empty cdf");
        let t = self.target(total);
        // Largest i with cdf[i] <= t.
        let sym = cdf.partition_point(|&c| c <= t) - 1;
        self.consume(cdf[sym], cdf[sym + 1] - cdf[sym])?;
        Ok(sym)
    }

    /// Check that the payload was consumed exactly.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Entropy(format!(
                "{} unused trailing payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_symbol(enc: &mut RangeEncoder, cdf: &[u32], sym: usize) {
    let total = *cdf.last().expect("non-empty cdf");
    enc.encode(cdf[sym], cdf[sym + 1] - cdf[sym], total);
}
