//! Carry-propagating range coder with a 64-bit `low` register and 32-bit
//! range, normalized a byte at a time so that `range ≥ 2²⁴`. Frequencies
//! are 16-bit: every symbol is coded as an interval of a 65536-unit total.
//!
//! The first byte an encoder of this construction produces is always zero,
//! so it is dropped from the output and implied by the decoder.

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
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Codes the interval `[start, start + freq)` of [`FREQ_TOTAL`].
    pub fn encode(&mut self, start: u32, freq: u32) {
        debug_assert!(freq > 0 && start + freq <= FREQ_TOTAL);
        let r = self.range >> FREQ_BITS;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Codes the low 16 bits of `value` with a flat distribution.
    pub fn encode_raw16(&mut self, value: u32) {
        self.encode(value & (FREQ_TOTAL - 1), 1);
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
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
        debug_assert_eq!(self.out[0], 0);
        self.out.remove(0);
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    scale: u32,
    data: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = Self {
            code: 0,
            range: u32::MAX,
            scale: 0,
            data,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Position of the next symbol within [`FREQ_TOTAL`]; follow with [`update`](Self::update).
    pub fn target(&mut self) -> Result<u32> {
        self.scale = self.range >> FREQ_BITS;
        let t = self.code / self.scale;
        if t >= FREQ_TOTAL {
            return Err(Error::Decode("code value outside coding interval".into()));
        }
        Ok(t)
    }

    pub fn update(&mut self, start: u32, freq: u32) {
        self.code -= self.scale * start;
        self.range = self.scale * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
    }

    pub fn decode_raw16(&mut self) -> Result<u32> {
        let t = self.target()?;
        self.update(t, 1);
        Ok(t)
    }

    /// Fails if the decoder consumed bytes beyond the end of its input.
    pub fn finish(self) -> Result<()> {
        if self.pos > self.data.len() {
            return Err(Error::Decode(format!(
                "stream overrun: consumed {} of {} bytes",
                self.pos,
                self.data.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_values_round_trip() {
        let values: Vec<u32> = (0..5000u32).map(|i| i.wrapping_mul(2_654_435_761) >> 16).collect();
        let mut enc = RangeEncoder::new();
        for v in &values {
            enc.encode_raw16(*v);
        }
        let bytes = enc.finish();
        // 16 bits per value plus the flush
        assert_eq!(bytes.len(), values.len() * 2 + 4);
        let mut dec = RangeDecoder::new(&bytes);
        for v in &values {
            assert_eq!(dec.decode_raw16().unwrap(), *v);
        }
        dec.finish().unwrap();
    }

    #[test]
    fn skewed_binary_source() {
        // p(0) = 65000/65536
        let bits: Vec<u32> = (0..20_000u32).map(|i| u32::from(i % 97 == 0)).collect();
        let mut enc = RangeEncoder::new();
        for b in &bits {
            if *b == 0 {
                enc.encode(0, 65_000);
            } else {
                enc.encode(65_000, 536);
            }
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for b in &bits {
            let t = dec.target().unwrap();
            let got = u32::from(t >= 65_000);
            assert_eq!(got, *b);
            if got == 0 {
                dec.update(0, 65_000);
            } else {
                dec.update(65_000, 536);
            }
        }
        dec.finish().unwrap();
    }
}
