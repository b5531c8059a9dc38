//! Distance encoding (DE): a one-parameter-long length-distance coder.
//!
//! A linear pass keeps, for every bit pattern seen so far, the position of its
//! most recent occurrence. Each parameter then contributes to the output:
//!
//! * a fresh value: flag bit `0` in the distance bitmap, raw value appended to
//!   the distinct array;
//! * a repeat: flag bit `1`, a 5-bit field `L` holding the bit length of the
//!   distance, and the distance `D` itself in exactly `L` bits.
//!
//! `L` ranges over 1..=31, so distances up to `2^31 - 1` are representable;
//! repeats further back than that are stored as fresh values. Values are
//! compared by bit pattern, so `-0.0`, `0.0` and NaN payloads stay distinct
//! and roundtrip bit-exactly.

use hashbrown::HashMap;
use thiserror::Error;

use crate::bitstream::{BitError, BitReader, BitWriter};
use crate::float::{read_le, FloatDtype, RawFloat};
use crate::varint::{Cursor, ReadError};

pub const LENGTH_FIELD_BITS: u32 = 5;
pub const MAX_DISTANCE: u64 = (1 << 31) - 1;

const HEADER_LEN: usize = 4 + 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeError {
    #[error("distance encoding supports F32 and F64 streams, not {0}")]
    UnsupportedDtype(FloatDtype),
    #[error("stream holds {0} parameters, more than a u32 count allows")]
    TooManyParams(usize),
    #[error("input length {len} is not a multiple of the {dtype} element width")]
    RaggedInput { len: usize, dtype: FloatDtype },
    #[error("expected {expected} elements, stream is {actual}")]
    DtypeMismatch { expected: FloatDtype, actual: FloatDtype },
    #[error("truncated stream: {0}")]
    Truncated(#[from] ReadError),
    #[error("truncated distance bitmap: {0}")]
    TruncatedBitmap(#[from] BitError),
    #[error("corrupt stream at parameter {position}: {reason}")]
    Corrupt { position: u64, reason: String },
}

/// Element types distance encoding is defined for.
pub trait DeFloat: RawFloat {}

impl DeFloat for f32 {}
impl DeFloat for f64 {}

fn check_dtype(dtype: FloatDtype) -> Result<(), DeError> {
    match dtype {
        FloatDtype::F32 | FloatDtype::F64 => Ok(()),
        other => Err(DeError::UnsupportedDtype(other)),
    }
}

/// Back-reference of a repeated parameter: `distance` in exactly
/// `length_bits` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthDistance {
    length_bits: u8,
    distance: u32,
}

impl LengthDistance {
    /// `None` unless `1 <= distance <= 2^31 - 1`.
    pub fn new(distance: u64) -> Option<Self> {
        if distance == 0 || distance > MAX_DISTANCE {
            return None;
        }
        Some(LengthDistance { length_bits: bit_length(distance) as u8, distance: distance as u32 })
    }

    pub fn length_bits(&self) -> u32 {
        self.length_bits as u32
    }

    pub fn distance(&self) -> u64 {
        self.distance as u64
    }

    /// Bits this record occupies in the bitmap, flag included.
    pub fn record_bits(&self) -> u64 {
        1 + LENGTH_FIELD_BITS as u64 + self.length_bits as u64
    }
}

fn bit_length(v: u64) -> u32 {
    64 - v.leading_zeros()
}

/// A distance-encoded parameter stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeStream {
    dtype: FloatDtype,
    param_count: u32,
    bitmap: Vec<u8>,
    bitmap_bits: u64,
    distinct: Vec<u8>,
}

impl DeStream {
    pub fn compress<F: DeFloat>(params: &[F]) -> Result<Self, DeError> {
        Self::compress_iter(F::DTYPE, params.len(), params.iter().map(|p| p.to_bits64()))
    }

    pub fn compress_bytes(bytes: &[u8], dtype: FloatDtype) -> Result<Self, DeError> {
        check_dtype(dtype)?;
        let w = dtype.byte_width();
        if !bytes.len().is_multiple_of(w) {
            return Err(DeError::RaggedInput { len: bytes.len(), dtype });
        }
        Self::compress_iter(dtype, bytes.len() / w, bytes.chunks_exact(w).map(read_le))
    }

    fn compress_iter(dtype: FloatDtype, count: usize, values: impl Iterator<Item = u64>) -> Result<Self, DeError> {
        let param_count = u32::try_from(count).map_err(|_| DeError::TooManyParams(count))?;
        let w = dtype.byte_width();
        let mut last_seen: HashMap<u64, u32> = HashMap::new();
        let mut bitmap = BitWriter::with_capacity_bits(count as u64);
        let mut distinct = Vec::new();
        for (i, v) in values.enumerate() {
            let i = i as u32;
            let pair = last_seen.insert(v, i).and_then(|prev| LengthDistance::new((i - prev) as u64));
            match pair {
                Some(ld) => {
                    bitmap.put(1, 1);
                    bitmap.put(ld.length_bits() as u64, LENGTH_FIELD_BITS);
                    bitmap.put(ld.distance(), ld.length_bits());
                }
                None => {
                    bitmap.put(0, 1);
                    distinct.extend_from_slice(&v.to_le_bytes()[..w]);
                }
            }
        }
        let bitmap_bits = bitmap.bit_len();
        Ok(DeStream { dtype, param_count, bitmap: bitmap.finish(), bitmap_bits, distinct })
    }

    pub fn dtype(&self) -> FloatDtype {
        self.dtype
    }

    pub fn param_count(&self) -> usize {
        self.param_count as usize
    }

    pub fn distinct_count(&self) -> usize {
        self.distinct.len() / self.dtype.byte_width()
    }

    pub fn duplicate_count(&self) -> usize {
        self.param_count() - self.distinct_count()
    }

    /// Raw little-endian values in first-emission order.
    pub fn distinct_bytes(&self) -> &[u8] {
        &self.distinct
    }

    pub fn bitmap_bytes(&self) -> &[u8] {
        &self.bitmap
    }

    pub fn bitmap_bit_len(&self) -> u64 {
        self.bitmap_bits
    }

    /// Logical payload size: bitmap bits plus distinct-array bits, excluding
    /// the fixed header and byte padding.
    pub fn payload_bits(&self) -> u64 {
        self.bitmap_bits + self.distinct.len() as u64 * 8
    }

    /// Walks the bitmap, yielding `None` for fresh values and the
    /// back-reference for repeats.
    fn decode_records(
        &self,
        mut on_record: impl FnMut(u64, Option<LengthDistance>) -> Result<(), DeError>,
    ) -> Result<(), DeError> {
        let mut reader = BitReader::with_bit_len(&self.bitmap, self.bitmap_bits)?;
        for i in 0..self.param_count as u64 {
            if !reader.read_bit()? {
                on_record(i, None)?;
                continue;
            }
            let length_bits = reader.read_bits(LENGTH_FIELD_BITS)? as u32;
            if length_bits == 0 {
                return Err(DeError::Corrupt { position: i, reason: "zero length field".into() });
            }
            let distance = reader.read_bits(length_bits)?;
            if bit_length(distance) != length_bits {
                return Err(DeError::Corrupt {
                    position: i,
                    reason: format!("distance {distance} not minimal for {length_bits} bits"),
                });
            }
            if distance > i {
                return Err(DeError::Corrupt {
                    position: i,
                    reason: format!("distance {distance} points before the stream start"),
                });
            }
            on_record(i, LengthDistance::new(distance))?;
        }
        if reader.remaining() != 0 {
            return Err(DeError::Corrupt {
                position: self.param_count as u64,
                reason: format!("{} unread bitmap bits", reader.remaining()),
            });
        }
        Ok(())
    }

    pub fn decompress_bits(&self) -> Result<Vec<u64>, DeError> {
        let w = self.dtype.byte_width();
        let mut out: Vec<u64> = Vec::with_capacity(self.param_count as usize);
        let mut fresh = self.distinct.chunks_exact(w);
        self.decode_records(|i, rec| {
            let v = match rec {
                None => read_le(
                    fresh
                        .next()
                        .ok_or_else(|| DeError::Corrupt { position: i, reason: "distinct array exhausted".into() })?,
                ),
                Some(ld) => out[(i - ld.distance()) as usize],
            };
            out.push(v);
            Ok(())
        })?;
        if fresh.next().is_some() {
            return Err(DeError::Corrupt {
                position: self.param_count as u64,
                reason: "distinct array longer than bitmap".into(),
            });
        }
        Ok(out)
    }

    pub fn decompress<F: DeFloat>(&self) -> Result<Vec<F>, DeError> {
        if F::DTYPE != self.dtype {
            return Err(DeError::DtypeMismatch { expected: F::DTYPE, actual: self.dtype });
        }
        Ok(self.decompress_bits()?.into_iter().map(F::from_bits64).collect())
    }

    pub fn decompress_to_bytes(&self) -> Result<Vec<u8>, DeError> {
        let w = self.dtype.byte_width();
        let mut out = Vec::with_capacity(self.param_count as usize * w);
        for b in self.decompress_bits()? {
            out.extend_from_slice(&b.to_le_bytes()[..w]);
        }
        Ok(out)
    }

    /// Serializes as: u32 param count, u64 bitmap bit length, bitmap bytes,
    /// distinct array.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bitmap.len() + self.distinct.len());
        out.extend_from_slice(&self.param_count.to_le_bytes());
        out.extend_from_slice(&self.bitmap_bits.to_le_bytes());
        out.extend_from_slice(&self.bitmap);
        out.extend_from_slice(&self.distinct);
        out
    }

    /// Parses and validates a serialized stream.
    pub fn from_bytes(bytes: &[u8], dtype: FloatDtype) -> Result<Self, DeError> {
        check_dtype(dtype)?;
        let mut cur = Cursor::new(bytes);
        let param_count = cur.u32()?;
        let bitmap_bits = cur.u64()?;
        let max_bits = param_count as u64 * (1 + LENGTH_FIELD_BITS as u64 + 31);
        if bitmap_bits < param_count as u64 || bitmap_bits > max_bits {
            return Err(DeError::Corrupt {
                position: 0,
                reason: format!("bitmap length {bitmap_bits} impossible for {param_count} parameters"),
            });
        }
        let bitmap = cur.take(bitmap_bits.div_ceil(8) as usize)?.to_vec();
        let distinct = cur.take(cur.remaining())?.to_vec();
        let stream = DeStream { dtype, param_count, bitmap, bitmap_bits, distinct };
        let mut fresh = 0usize;
        stream.decode_records(|_, rec| {
            fresh += rec.is_none() as usize;
            Ok(())
        })?;
        if fresh * dtype.byte_width() != stream.distinct.len() {
            return Err(DeError::Corrupt {
                position: param_count as u64,
                reason: format!("bitmap marks {fresh} distinct values, array holds {} bytes", stream.distinct.len()),
            });
        }
        Ok(stream)
    }
}

/// Storage saving of distance encoding with and without its metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeSavingReport {
    pub param_count: u64,
    pub duplicate_count: u64,
    pub original_bits: u64,
    /// Serialized payload bits (bitmap plus distinct array).
    pub practical_bits: u64,
    /// Bits left if repeats cost only their distance bits.
    pub theoretical_bits: u64,
    pub theoretical_saving_ratio: f64,
    pub practical_saving_ratio: f64,
}

impl DeSavingReport {
    pub fn from_stream(stream: &DeStream) -> Self {
        let n = stream.param_count() as u64;
        let w = stream.dtype.bits() as u64;
        let original_bits = n * w;
        let mut distance_bits = 0u64;
        stream
            .decode_records(|_, rec| {
                if let Some(ld) = rec {
                    distance_bits += ld.length_bits() as u64;
                }
                Ok(())
            })
            .expect("stream produced by the encoder is well formed");
        let dups = stream.duplicate_count() as u64;
        let theoretical_bits = original_bits - dups * w + distance_bits;
        let ratio = |bits: u64| {
            if original_bits == 0 {
                0.0
            } else {
                1.0 - bits as f64 / original_bits as f64
            }
        };
        DeSavingReport {
            param_count: n,
            duplicate_count: dups,
            original_bits,
            practical_bits: stream.payload_bits(),
            theoretical_bits,
            theoretical_saving_ratio: ratio(theoretical_bits),
            practical_saving_ratio: ratio(stream.payload_bits()),
        }
    }
}

pub fn de_saving_report<F: DeFloat>(params: &[F]) -> Result<DeSavingReport, DeError> {
    Ok(DeSavingReport::from_stream(&DeStream::compress(params)?))
}
