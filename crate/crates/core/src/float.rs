//! IEEE 754 field views for the three floating-point widths found in model files.
//!
//! A binary float is `(-1)^s * 2^(e - bias) * (1.m)` for normal values. The
//! codecs in this crate only ever need the raw bit pattern and a handful of
//! field widths, so everything here works on `u64` bit patterns tagged with a
//! [`FloatDtype`].

use std::fmt;

use half::f16;
use serde::{Deserialize, Serialize};

/// Floating-point element types that the parameter codecs understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FloatDtype {
    F16,
    F32,
    F64,
}

/// Field widths of one IEEE 754 binary format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FloatFormat {
    pub total_bits: u32,
    pub exponent_bits: u32,
    pub mantissa_bits: u32,
}

impl FloatFormat {
    pub const fn bias(&self) -> u64 {
        (1 << (self.exponent_bits - 1)) - 1
    }

    pub const fn mantissa_mask(&self) -> u64 {
        (1 << self.mantissa_bits) - 1
    }

    pub const fn exponent_mask(&self) -> u64 {
        (1 << self.exponent_bits) - 1
    }

    pub const fn sign_shift(&self) -> u32 {
        self.total_bits - 1
    }
}

impl FloatDtype {
    pub const ALL: [FloatDtype; 3] = [FloatDtype::F16, FloatDtype::F32, FloatDtype::F64];

    pub const fn format(self) -> FloatFormat {
        match self {
            FloatDtype::F16 => FloatFormat { total_bits: 16, exponent_bits: 5, mantissa_bits: 10 },
            FloatDtype::F32 => FloatFormat { total_bits: 32, exponent_bits: 8, mantissa_bits: 23 },
            FloatDtype::F64 => FloatFormat { total_bits: 64, exponent_bits: 11, mantissa_bits: 52 },
        }
    }

    pub const fn byte_width(self) -> usize {
        self.format().total_bits as usize / 8
    }

    pub const fn bits(self) -> u32 {
        self.format().total_bits
    }

    /// Width of one exponent-less code: sign bit plus mantissa.
    pub const fn elf_code_bits(self) -> u32 {
        1 + self.format().mantissa_bits
    }

    /// Worst-case absolute error of an exponent-less roundtrip: half an ulp of
    /// values in `[1, 2)`, i.e. `2^-(mantissa_bits + 1)`.
    pub fn elf_error_bound(self) -> f64 {
        (-((self.format().mantissa_bits + 1) as i32) as f64).exp2()
    }

    pub fn name(self) -> &'static str {
        match self {
            FloatDtype::F16 => "F16",
            FloatDtype::F32 => "F32",
            FloatDtype::F64 => "F64",
        }
    }

    /// Converts a raw bit pattern of this dtype to `f64`. The conversion is exact.
    pub fn bits_to_f64(self, bits: u64) -> f64 {
        match self {
            FloatDtype::F16 => f16::from_bits(bits as u16).to_f64(),
            FloatDtype::F32 => f32::from_bits(bits as u32) as f64,
            FloatDtype::F64 => f64::from_bits(bits),
        }
    }

    /// Reads the little-endian element at `index` of `bytes` as a bit pattern.
    pub fn read_bits(self, bytes: &[u8], index: usize) -> u64 {
        let w = self.byte_width();
        let chunk = &bytes[index * w..(index + 1) * w];
        read_le(chunk)
    }
}

impl fmt::Display for FloatDtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn read_le(chunk: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..chunk.len()].copy_from_slice(chunk);
    u64::from_le_bytes(buf)
}

/// Sign / exponent / mantissa view of a float bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FloatDecomposition {
    pub sign: bool,
    /// Biased exponent field.
    pub exponent: u64,
    pub mantissa: u64,
    pub dtype: FloatDtype,
}

impl FloatDecomposition {
    pub fn from_bits(bits: u64, dtype: FloatDtype) -> Self {
        let fmt = dtype.format();
        FloatDecomposition {
            sign: (bits >> fmt.sign_shift()) & 1 == 1,
            exponent: (bits >> fmt.mantissa_bits) & fmt.exponent_mask(),
            mantissa: bits & fmt.mantissa_mask(),
            dtype,
        }
    }

    pub fn to_bits(&self) -> u64 {
        let fmt = self.dtype.format();
        ((self.sign as u64) << fmt.sign_shift())
            | ((self.exponent & fmt.exponent_mask()) << fmt.mantissa_bits)
            | (self.mantissa & fmt.mantissa_mask())
    }

    /// Unbiased exponent `e - bias`.
    pub fn unbiased_exponent(&self) -> i64 {
        self.exponent as i64 - self.dtype.format().bias() as i64
    }
}

/// A float element type stored in model files, viewed through its bit pattern.
pub trait RawFloat: Copy + Send + Sync + fmt::Debug + 'static {
    const DTYPE: FloatDtype;

    fn to_bits64(self) -> u64;
    fn from_bits64(bits: u64) -> Self;

    fn to_f64(self) -> f64 {
        Self::DTYPE.bits_to_f64(self.to_bits64())
    }

    fn decompose(self) -> FloatDecomposition {
        FloatDecomposition::from_bits(self.to_bits64(), Self::DTYPE)
    }
}

impl RawFloat for f16 {
    const DTYPE: FloatDtype = FloatDtype::F16;

    fn to_bits64(self) -> u64 {
        self.to_bits() as u64
    }

    fn from_bits64(bits: u64) -> Self {
        f16::from_bits(bits as u16)
    }
}

impl RawFloat for f32 {
    const DTYPE: FloatDtype = FloatDtype::F32;

    fn to_bits64(self) -> u64 {
        self.to_bits() as u64
    }

    fn from_bits64(bits: u64) -> Self {
        f32::from_bits(bits as u32)
    }
}

impl RawFloat for f64 {
    const DTYPE: FloatDtype = FloatDtype::F64;

    fn to_bits64(self) -> u64 {
        self.to_bits()
    }

    fn from_bits64(bits: u64) -> Self {
        f64::from_bits(bits)
    }
}

/// Decodes a little-endian byte buffer into typed elements.
///
/// Panics if `bytes.len()` is not a multiple of the element width.
pub fn from_le_bytes<F: RawFloat>(bytes: &[u8]) -> Vec<F> {
    let w = F::DTYPE.byte_width();
    assert_eq!(bytes.len() % w, 0, "byte length not a multiple of element width");
    bytes.chunks_exact(w).map(|c| F::from_bits64(read_le(c))).collect()
}

pub fn to_le_bytes<F: RawFloat>(values: &[F]) -> Vec<u8> {
    let w = F::DTYPE.byte_width();
    let mut out = Vec::with_capacity(values.len() * w);
    for v in values {
        out.extend_from_slice(&v.to_bits64().to_le_bytes()[..w]);
    }
    out
}
