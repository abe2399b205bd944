//! Carry-less byte-oriented range coder with an adaptive order-0 model.
//!
//! Pure integer arithmetic throughout, so identical inputs produce
//! identical bitstream bytes on every platform.

use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
const BOTTOM: u32 = 1 << 16;

pub struct RangeEncoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> RangeEncoder {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    /// Encode a symbol spanning `[cum, cum + freq)` of `total`.
    /// `total` must not exceed 2^16.
    pub fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && cum + freq <= total && total <= BOTTOM);
        let r = self.range / total;
        self.low = self.low.wrapping_add(r.wrapping_mul(cum));
        self.range = r * freq;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOTTOM {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOTTOM - 1);
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Flush the remaining state and return the stream.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
        }
        self.out
    }

    pub fn bytes_written(&self) -> usize {
        self.out.len()
    }
}

impl Default for RangeEncoder {
    fn default() -> Self {
        RangeEncoder::new()
    }
}

pub struct RangeDecoder<'a> {
    low: u32,
    range: u32,
    code: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<RangeDecoder<'a>> {
        let mut dec = RangeDecoder {
            low: 0,
            range: u32::MAX,
            code: 0,
            input,
            pos: 0,
        };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | u32::from(dec.next_byte()?);
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b =
            self.input.get(self.pos).copied().ok_or_else(|| {
                Error::CorruptPayload("range decoder ran past end of payload".into())
            })?;
        self.pos += 1;
        Ok(b)
    }

    /// Frequency slot of the next symbol. Mirrors `RangeEncoder::encode`:
    /// the caller locates the symbol covering the slot, then calls
    /// [`consume`](Self::consume) with that symbol's span.
    pub fn slot(&mut self, total: u32) -> Result<u32> {
        self.range /= total;
        let slot = self.code.wrapping_sub(self.low) / self.range;
        if slot >= total {
            return Err(Error::CorruptPayload(format!(
                "slot {slot} out of range for total {total}"
            )));
        }
        Ok(slot)
    }

    pub fn consume(&mut self, cum: u32, freq: u32) -> Result<()> {
        self.low = self.low.wrapping_add(self.range.wrapping_mul(cum));
        self.range *= freq;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOTTOM {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOTTOM - 1);
            }
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(())
    }
}

/// Adaptive frequency table over the 255 possible occupancy bytes
/// (1..=255; byte 0 cannot occur). Each coded byte increments its count
/// by 1; when the total reaches 2^16 all counts are halved (floored at 1).
pub struct OccupancyModel {
    freq: [u32; 255],
    total: u32,
}

impl OccupancyModel {
    pub fn new() -> OccupancyModel {
        OccupancyModel {
            freq: [1; 255],
            total: 255,
        }
    }

    fn symbol_of(byte: u8) -> usize {
        debug_assert!(byte != 0, "occupancy byte 0 cannot occur");
        usize::from(byte) - 1
    }

    pub fn encode(&mut self, enc: &mut RangeEncoder, byte: u8) {
        let sym = Self::symbol_of(byte);
        let cum: u32 = self.freq[..sym].iter().sum();
        enc.encode(cum, self.freq[sym], self.total);
        self.update(sym);
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder<'_>) -> Result<u8> {
        let slot = dec.slot(self.total)?;
        let mut cum = 0;
        let mut sym = 0;
        while cum + self.freq[sym] <= slot {
            cum += self.freq[sym];
            sym += 1;
        }
        dec.consume(cum, self.freq[sym])?;
        self.update(sym);
        Ok((sym + 1) as u8)
    }

    fn update(&mut self, sym: usize) {
        self.freq[sym] += 1;
        self.total += 1;
        if self.total >= 1 << 16 {
            self.total = 0;
            for f in &mut self.freq {
                *f = (*f + 1) >> 1;
                self.total += *f;
            }
        }
    }
}

impl Default for OccupancyModel {
    fn default() -> Self {
        OccupancyModel::new()
    }
}
