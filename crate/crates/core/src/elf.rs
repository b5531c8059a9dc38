//! Exponent-less float encoding (ELF).
//!
//! A parameter `p` with `-1 < p < 1` is shifted to `p' = 1 + |p|`, which lies
//! in `[1, 2)` and therefore always carries the bias as its exponent field.
//! Dropping that constant exponent leaves a code of one sign bit plus the
//! mantissa of `p'`: 11, 24 or 53 bits for F16, F32 and F64. Decoding
//! reinserts the bias exponent, subtracts one and reapplies the sign.
//!
//! The shift rounds `|p|` to the mantissa grid of `[1, 2)`, so the roundtrip
//! error is at most half an ulp there: `2^-11`, `2^-24` and `2^-53`.
//!
//! Parameters outside `(-1, 1)`, including NaN and infinities, cannot be
//! encoded this way and are kept verbatim in a per-block exception table.

use half::f16;
use rayon::prelude::*;
use thiserror::Error;

use crate::bitstream::{BitError, BitReader, BitWriter};
use crate::float::{read_le, FloatDtype, RawFloat};
use crate::varint::{write_uleb128, Cursor, ReadError};

/// Parameters per block when a stream is split for parallel compression.
pub const DEFAULT_BLOCK_PARAMS: usize = 1 << 22;

const BLOCK_HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ElfError {
    #[error("block holds {0} parameters, more than a u32 count allows")]
    TooManyParams(usize),
    #[error("input length {len} is not a multiple of the {dtype} element width")]
    RaggedInput { len: usize, dtype: FloatDtype },
    #[error("expected {expected} elements, block is {actual}")]
    DtypeMismatch { expected: FloatDtype, actual: FloatDtype },
    #[error("truncated block: {0}")]
    Truncated(#[from] ReadError),
    #[error("truncated code payload: {0}")]
    TruncatedCodes(#[from] BitError),
    #[error("corrupt block: {0}")]
    Corrupt(String),
}

/// Sign bit of `p` and the mantissa of `1 + |p|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElfCode {
    pub sign: bool,
    pub mantissa: u64,
}

impl ElfCode {
    /// Packs the code as `s | m'`, `1 + mantissa_bits` wide.
    pub fn to_bits(self, dtype: FloatDtype) -> u64 {
        ((self.sign as u64) << dtype.format().mantissa_bits) | self.mantissa
    }

    pub fn from_bits(bits: u64, dtype: FloatDtype) -> Self {
        let fmt = dtype.format();
        ElfCode { sign: (bits >> fmt.mantissa_bits) & 1 == 1, mantissa: bits & fmt.mantissa_mask() }
    }
}

/// True when the bit pattern is a finite value strictly inside `(-1, 1)`.
#[inline]
pub fn is_in_range(bits: u64, dtype: FloatDtype) -> bool {
    let v = dtype.bits_to_f64(bits);
    v > -1.0 && v < 1.0
}

/// Encodes one parameter given as a raw bit pattern, or `None` when it is out
/// of range.
#[inline]
pub fn transform_bits(bits: u64, dtype: FloatDtype) -> Option<ElfCode> {
    if !is_in_range(bits, dtype) {
        return None;
    }
    let fmt = dtype.format();
    let sign_mask = 1u64 << fmt.sign_shift();
    let abs = bits & !sign_mask;
    // 1 + |p| with the dtype's round-to-nearest-even.
    let shifted = match dtype {
        FloatDtype::F32 => (1.0f32 + f32::from_bits(abs as u32)).to_bits() as u64,
        FloatDtype::F64 => (1.0f64 + f64::from_bits(abs)).to_bits(),
        FloatDtype::F16 => {
            // |p| * 2^10 is exact in f64; rounding it to an integer is
            // rounding 1 + |p| to the F16 grid of [1, 2).
            let k = (f16::from_bits(abs as u16).to_f64() * 1024.0).round_ties_even() as u64;
            (fmt.bias() << fmt.mantissa_bits) + k
        }
    };
    // The largest values below one round up to exactly 2.0; keep them on
    // the top of the grid instead, which is still within half an ulp.
    let mantissa =
        if shifted >> fmt.mantissa_bits == fmt.bias() { shifted & fmt.mantissa_mask() } else { fmt.mantissa_mask() };
    Some(ElfCode { sign: bits & sign_mask != 0, mantissa })
}

/// Decodes a code back to a bit pattern of `dtype`.
#[inline]
pub fn restore_bits(code: ElfCode, dtype: FloatDtype) -> u64 {
    let fmt = dtype.format();
    let shifted = (fmt.bias() << fmt.mantissa_bits) | code.mantissa;
    // p' - 1 is exact for p' in [1, 2).
    let magnitude = match dtype {
        FloatDtype::F32 => (f32::from_bits(shifted as u32) - 1.0).to_bits() as u64,
        FloatDtype::F64 => (f64::from_bits(shifted) - 1.0).to_bits(),
        FloatDtype::F16 => f16::from_f64(code.mantissa as f64 / 1024.0).to_bits() as u64,
    };
    magnitude | ((code.sign as u64) << fmt.sign_shift())
}

pub fn elf_transform<F: RawFloat>(p: F) -> Option<ElfCode> {
    transform_bits(p.to_bits64(), F::DTYPE)
}

pub fn elf_restore<F: RawFloat>(code: ElfCode) -> F {
    F::from_bits64(restore_bits(code, F::DTYPE))
}

/// One out-of-range parameter kept verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exception {
    pub position: u32,
    pub bits: u64,
}

/// Out-of-range parameters of a block, ordered by position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExceptionTable {
    entries: Vec<Exception>,
}

impl ExceptionTable {
    pub fn entries(&self) -> &[Exception] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Exponent-less codes for one block of parameters of a single dtype.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElfBlock {
    dtype: FloatDtype,
    param_count: u32,
    exceptions: ExceptionTable,
    codes: Vec<u8>,
    code_bits: u64,
}

impl ElfBlock {
    pub fn compress<F: RawFloat>(params: &[F]) -> Result<Self, ElfError> {
        Self::compress_iter(F::DTYPE, params.len(), params.iter().map(|p| p.to_bits64()))
    }

    /// Compresses little-endian elements of `dtype`.
    pub fn compress_bytes(bytes: &[u8], dtype: FloatDtype) -> Result<Self, ElfError> {
        let w = dtype.byte_width();
        if !bytes.len().is_multiple_of(w) {
            return Err(ElfError::RaggedInput { len: bytes.len(), dtype });
        }
        Self::compress_iter(dtype, bytes.len() / w, bytes.chunks_exact(w).map(read_le))
    }

    fn compress_iter(dtype: FloatDtype, count: usize, bits: impl Iterator<Item = u64>) -> Result<Self, ElfError> {
        let param_count = u32::try_from(count).map_err(|_| ElfError::TooManyParams(count))?;
        let width = dtype.elf_code_bits();
        let mut writer = BitWriter::with_capacity_bits(count as u64 * width as u64);
        let mut entries = Vec::new();
        for (i, b) in bits.enumerate() {
            match transform_bits(b, dtype) {
                Some(code) => writer.put(code.to_bits(dtype), width),
                None => entries.push(Exception { position: i as u32, bits: b }),
            }
        }
        let code_bits = writer.bit_len();
        Ok(ElfBlock { dtype, param_count, exceptions: ExceptionTable { entries }, codes: writer.finish(), code_bits })
    }

    pub fn dtype(&self) -> FloatDtype {
        self.dtype
    }

    pub fn param_count(&self) -> usize {
        self.param_count as usize
    }

    pub fn exceptions(&self) -> &ExceptionTable {
        &self.exceptions
    }

    /// Packed code bytes, zero padded to a whole byte.
    pub fn code_bytes(&self) -> &[u8] {
        &self.codes
    }

    pub fn code_bit_len(&self) -> u64 {
        self.code_bits
    }

    /// Restores every parameter as a little-endian bit pattern.
    pub fn decompress_bits(&self) -> Result<Vec<u64>, ElfError> {
        let width = self.dtype.elf_code_bits();
        let expected = (self.param_count as u64 - self.exceptions.len() as u64) * width as u64;
        if self.code_bits != expected {
            return Err(ElfError::Corrupt(format!(
                "code payload holds {} bits, {} expected",
                self.code_bits, expected
            )));
        }
        let mut reader = BitReader::with_bit_len(&self.codes, self.code_bits)?;
        let mut out = Vec::with_capacity(self.param_count as usize);
        let mut exceptions = self.exceptions.entries.iter().peekable();
        for i in 0..self.param_count {
            if let Some(e) = exceptions.next_if(|e| e.position == i) {
                out.push(e.bits);
            } else {
                let code = ElfCode::from_bits(reader.read_bits(width)?, self.dtype);
                out.push(restore_bits(code, self.dtype));
            }
        }
        if exceptions.next().is_some() {
            return Err(ElfError::Corrupt("exception position beyond block".into()));
        }
        Ok(out)
    }

    pub fn decompress<F: RawFloat>(&self) -> Result<Vec<F>, ElfError> {
        if F::DTYPE != self.dtype {
            return Err(ElfError::DtypeMismatch { expected: F::DTYPE, actual: self.dtype });
        }
        Ok(self.decompress_bits()?.into_iter().map(F::from_bits64).collect())
    }

    pub fn decompress_to_bytes(&self) -> Result<Vec<u8>, ElfError> {
        let w = self.dtype.byte_width();
        let bits = self.decompress_bits()?;
        let mut out = Vec::with_capacity(bits.len() * w);
        for b in bits {
            out.extend_from_slice(&b.to_le_bytes()[..w]);
        }
        Ok(out)
    }

    /// Serializes as: u32 param count, u32 exception count, u64 code bit
    /// length, LEB128 position deltas, raw exception values, code bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = self.dtype.byte_width();
        let mut out = Vec::with_capacity(BLOCK_HEADER_LEN + self.exceptions.len() * (w + 2) + self.codes.len());
        out.extend_from_slice(&self.param_count.to_le_bytes());
        out.extend_from_slice(&(self.exceptions.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.code_bits.to_le_bytes());
        let mut prev = None;
        for e in &self.exceptions.entries {
            let delta = match prev {
                None => e.position,
                Some(p) => e.position - p,
            };
            write_uleb128(&mut out, delta as u64);
            prev = Some(e.position);
        }
        for e in &self.exceptions.entries {
            out.extend_from_slice(&e.bits.to_le_bytes()[..w]);
        }
        out.extend_from_slice(&self.codes);
        out
    }

    pub fn from_bytes(bytes: &[u8], dtype: FloatDtype) -> Result<Self, ElfError> {
        let mut cur = Cursor::new(bytes);
        let param_count = cur.u32()?;
        let exception_count = cur.u32()?;
        let code_bits = cur.u64()?;
        if exception_count > param_count {
            return Err(ElfError::Corrupt(format!("{exception_count} exceptions in a block of {param_count}")));
        }
        let width = dtype.elf_code_bits() as u64;
        if code_bits != (param_count - exception_count) as u64 * width {
            return Err(ElfError::Corrupt(format!("code bit length {code_bits} inconsistent")));
        }
        let mut positions = Vec::with_capacity(exception_count as usize);
        let mut prev: Option<u64> = None;
        for _ in 0..exception_count {
            let delta = cur.uleb128()?;
            let pos = match prev {
                None => delta,
                Some(_) if delta == 0 => return Err(ElfError::Corrupt("exception positions not increasing".into())),
                Some(p) => p.saturating_add(delta),
            };
            if pos >= param_count as u64 {
                return Err(ElfError::Corrupt(format!("exception position {pos} out of block")));
            }
            positions.push(pos as u32);
            prev = Some(pos);
        }
        let w = dtype.byte_width();
        let mut entries = Vec::with_capacity(positions.len());
        for position in positions {
            entries.push(Exception { position, bits: read_le(cur.take(w)?) });
        }
        let code_len = code_bits.div_ceil(8) as usize;
        let codes = cur.take(code_len)?.to_vec();
        if cur.remaining() != 0 {
            return Err(ElfError::Corrupt(format!("{} trailing bytes", cur.remaining())));
        }
        Ok(ElfBlock { dtype, param_count, exceptions: ExceptionTable { entries }, codes, code_bits })
    }
}

/// Splits a little-endian stream into blocks of `block_params` elements and
/// compresses them in parallel on the current rayon pool.
pub fn compress_blocks(bytes: &[u8], dtype: FloatDtype, block_params: usize) -> Result<Vec<ElfBlock>, ElfError> {
    assert!(block_params > 0);
    let w = dtype.byte_width();
    if !bytes.len().is_multiple_of(w) {
        return Err(ElfError::RaggedInput { len: bytes.len(), dtype });
    }
    bytes.par_chunks(block_params * w).map(|chunk| ElfBlock::compress_bytes(chunk, dtype)).collect()
}

pub fn decompress_blocks(blocks: &[ElfBlock]) -> Result<Vec<u8>, ElfError> {
    let parts: Vec<Vec<u8>> = blocks.par_iter().map(ElfBlock::decompress_to_bytes).collect::<Result<_, _>>()?;
    Ok(parts.concat())
}
