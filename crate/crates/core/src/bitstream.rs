//! MSB-first bit writer and reader.
//!
//! Bits are packed from the most significant bit of each byte downwards, so a
//! hex dump of a buffer reads left to right in write order. The final byte is
//! padded with zero bits; callers record the logical bit length themselves.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitError {
    #[error("bit width {0} outside 1..=64")]
    InvalidWidth(u32),
    #[error("value {value:#x} does not fit in {width} bits")]
    ValueOverflow { value: u64, width: u32 },
    #[error("end of stream: needed {needed} bits, {remaining} remaining")]
    EndOfStream { needed: u32, remaining: u64 },
}

fn check_width(width: u32) -> Result<(), BitError> {
    if (1..=64).contains(&width) {
        Ok(())
    } else {
        Err(BitError::InvalidWidth(width))
    }
}

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    buf: Vec<u8>,
    // Pending bits, left-aligned at bit 63.
    acc: u64,
    pending: u32,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_bits(bits: u64) -> Self {
        BitWriter { buf: Vec::with_capacity(bits.div_ceil(8) as usize), ..Self::default() }
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, width: u32) -> Result<(), BitError> {
        check_width(width)?;
        if width < 64 && value >> width != 0 {
            return Err(BitError::ValueOverflow { value, width });
        }
        self.put(value, width);
        Ok(())
    }

    pub fn write_bit(&mut self, bit: bool) {
        self.put(bit as u64, 1);
    }

    /// Unchecked append; `value < 2^width` and `1 <= width <= 64` must hold.
    #[inline]
    pub(crate) fn put(&mut self, value: u64, width: u32) {
        debug_assert!((1..=64).contains(&width));
        debug_assert!(width == 64 || value >> width == 0);
        self.bits += width as u64;
        let free = 64 - self.pending;
        if width <= free {
            self.acc |= value << (free - width);
            self.pending += width;
            if self.pending == 64 {
                self.buf.extend_from_slice(&self.acc.to_be_bytes());
                self.acc = 0;
                self.pending = 0;
            }
        } else {
            let hi = width - free;
            self.acc |= value >> hi;
            self.buf.extend_from_slice(&self.acc.to_be_bytes());
            self.acc = value << (64 - hi);
            self.pending = hi;
        }
    }

    /// Number of logical bits written so far.
    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    /// Pads the trailing byte with zeros and returns the buffer.
    pub fn finish(mut self) -> Vec<u8> {
        let tail = self.pending.div_ceil(8) as usize;
        self.buf.extend_from_slice(&self.acc.to_be_bytes()[..tail]);
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: u64,
    len: u64,
}

impl<'a> BitReader<'a> {
    /// Reader over all bits of `data`, padding included.
    pub fn new(data: &'a [u8]) -> Self {
        BitReader { data, pos: 0, len: data.len() as u64 * 8 }
    }

    /// Reader limited to the first `bit_len` bits of `data`.
    pub fn with_bit_len(data: &'a [u8], bit_len: u64) -> Result<Self, BitError> {
        let avail = data.len() as u64 * 8;
        if bit_len > avail {
            return Err(BitError::EndOfStream {
                needed: u32::try_from(bit_len - avail).unwrap_or(u32::MAX),
                remaining: 0,
            });
        }
        Ok(BitReader { data, pos: 0, len: bit_len })
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.len - self.pos
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64, BitError> {
        check_width(width)?;
        if self.remaining() < width as u64 {
            return Err(BitError::EndOfStream { needed: width, remaining: self.remaining() });
        }
        Ok(self.take(width))
    }

    pub fn read_bit(&mut self) -> Result<bool, BitError> {
        if self.remaining() == 0 {
            return Err(BitError::EndOfStream { needed: 1, remaining: 0 });
        }
        Ok(self.take(1) == 1)
    }

    #[inline]
    fn take(&mut self, width: u32) -> u64 {
        let byte = (self.pos / 8) as usize;
        let shift = (self.pos % 8) as u32;
        // Up to 64 + 7 bits span at most 9 bytes.
        let mut word = [0u8; 16];
        let end = (byte + 9).min(self.data.len());
        word[..end - byte].copy_from_slice(&self.data[byte..end]);
        let v = u128::from_be_bytes(word);
        self.pos += width as u64;
        ((v << shift) >> (128 - width)) as u64
    }
}
