//! Parameter-level statistics and reconstruction error reports.

use std::collections::BTreeMap;

use hashbrown::HashMap;
use serde::Serialize;
use thiserror::Error;

use crate::float::{read_le, FloatDtype};
use crate::model::ModelFile;

/// Counts of parameters in `(-1, 0]`, `(0, 1)` and everything else.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ValueHistogram {
    pub non_positive: u64,
    pub positive: u64,
    pub out_of_range: u64,
}

impl ValueHistogram {
    pub fn total(&self) -> u64 {
        self.non_positive + self.positive + self.out_of_range
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        if v > -1.0 && v <= 0.0 {
            self.non_positive += 1;
        } else if v > 0.0 && v < 1.0 {
            self.positive += 1;
        } else {
            self.out_of_range += 1;
        }
    }

    pub fn merge(&mut self, other: &ValueHistogram) {
        self.non_positive += other.non_positive;
        self.positive += other.positive;
        self.out_of_range += other.out_of_range;
    }

    fn frac(&self, n: u64) -> f64 {
        match self.total() {
            0 => 0.0,
            t => n as f64 / t as f64,
        }
    }

    pub fn non_positive_fraction(&self) -> f64 {
        self.frac(self.non_positive)
    }

    pub fn positive_fraction(&self) -> f64 {
        self.frac(self.positive)
    }

    pub fn out_of_range_fraction(&self) -> f64 {
        self.frac(self.out_of_range)
    }
}

/// Classifies every element of a little-endian stream.
pub fn param_value_histogram(bytes: &[u8], dtype: FloatDtype) -> ValueHistogram {
    let mut h = ValueHistogram::default();
    for c in bytes.chunks_exact(dtype.byte_width()) {
        h.add(dtype.bits_to_f64(read_le(c)));
    }
    h
}

/// Value distribution of one model, per float dtype.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParamStats {
    pub per_dtype: BTreeMap<FloatDtype, ValueHistogram>,
    pub overall: ValueHistogram,
    pub duplication_ratio: f64,
}

pub fn model_param_stats(model: &ModelFile) -> ParamStats {
    let mut stats = ParamStats::default();
    for t in model.tensors() {
        if let Some(d) = t.dtype.float() {
            let h = param_value_histogram(model.tensor_bytes(t), d);
            stats.per_dtype.entry(d).or_default().merge(&h);
            stats.overall.merge(&h);
        }
    }
    stats.duplication_ratio = param_duplication_ratio(model);
    stats
}

/// Share of parameters whose bit pattern occurs at least twice, counting
/// every occurrence.
pub fn stream_duplication_ratio<'a>(streams: impl IntoIterator<Item = (&'a [u8], FloatDtype)>) -> f64 {
    let mut counts: HashMap<(FloatDtype, u64), u32> = HashMap::new();
    let mut total = 0u64;
    for (bytes, dtype) in streams {
        for c in bytes.chunks_exact(dtype.byte_width()) {
            *counts.entry((dtype, read_le(c))).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    let repeated: u64 = counts.values().filter(|&&n| n >= 2).map(|&n| n as u64).sum();
    repeated as f64 / total as f64
}

/// Duplication ratio over all float parameters of a model.
pub fn param_duplication_ratio(model: &ModelFile) -> f64 {
    stream_duplication_ratio(model.tensors().iter().filter_map(|t| t.dtype.float().map(|d| (model.tensor_bytes(t), d))))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("model `{model}`: {reason}")]
    ManifestMismatch { model: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDiff {
    Float { dtype: FloatDtype, count: u64, max_abs_error: f64, mean_abs_error: f64, exact_count: u64 },
    Exact { matches: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerError {
    pub name: String,
    pub diff: LayerDiff,
}

impl LayerError {
    /// True if the layer exceeds the exponent-less error bound of its dtype
    /// or, for non-float layers, differs at all.
    pub fn violates_bound(&self) -> bool {
        match &self.diff {
            LayerDiff::Float { dtype, max_abs_error, .. } => {
                max_abs_error.is_nan() || *max_abs_error > dtype.elf_error_bound()
            }
            LayerDiff::Exact { matches } => !matches,
        }
    }

    pub fn is_exact(&self) -> bool {
        match &self.diff {
            LayerDiff::Float { count, exact_count, .. } => count == exact_count,
            LayerDiff::Exact { matches } => *matches,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub model_id: String,
    pub layers: Vec<LayerError>,
}

impl ErrorReport {
    pub fn violations(&self) -> impl Iterator<Item = &LayerError> {
        self.layers.iter().filter(|l| l.violates_bound())
    }

    pub fn non_float_mismatches(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.diff, LayerDiff::Exact { matches: false })).count()
    }

    pub fn max_float_error(&self, dtype: FloatDtype) -> f64 {
        self.layers
            .iter()
            .filter_map(|l| match l.diff {
                LayerDiff::Float { dtype: d, max_abs_error, .. } if d == dtype => Some(max_abs_error),
                _ => None,
            })
            .fold(0.0, f64::max)
    }
}

fn float_diff(a: &[u8], b: &[u8], dtype: FloatDtype) -> LayerDiff {
    let w = dtype.byte_width();
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    let mut exact = 0u64;
    let mut count = 0u64;
    for (x, y) in a.chunks_exact(w).zip(b.chunks_exact(w)) {
        count += 1;
        let (xb, yb) = (read_le(x), read_le(y));
        let err = if xb == yb {
            exact += 1;
            0.0
        } else {
            let (xv, yv) = (dtype.bits_to_f64(xb), dtype.bits_to_f64(yb));
            if xv.is_finite() && yv.is_finite() {
                (xv - yv).abs()
            } else {
                f64::INFINITY
            }
        };
        max = max.max(err);
        sum += err;
    }
    let mean = if count == 0 { 0.0 } else { sum / count as f64 };
    LayerDiff::Float { dtype, count, max_abs_error: max, mean_abs_error: mean, exact_count: exact }
}

/// Compares every layer of two models with identical manifests.
pub fn error_report(original: &ModelFile, restored: &ModelFile) -> Result<ErrorReport, ReportError> {
    let mismatch = |reason: String| ReportError::ManifestMismatch { model: original.model_id().to_owned(), reason };
    if original.tensors().len() != restored.tensors().len() {
        return Err(mismatch(format!("{} tensors vs {}", original.tensors().len(), restored.tensors().len())));
    }
    let mut layers = Vec::with_capacity(original.tensors().len());
    for (a, b) in original.tensors().iter().zip(restored.tensors()) {
        if a.name != b.name || a.dtype != b.dtype || a.shape != b.shape {
            return Err(mismatch(format!(
                "tensor `{}` {} {:?} vs `{}` {} {:?}",
                a.name, a.dtype, a.shape, b.name, b.dtype, b.shape
            )));
        }
        let (x, y) = (original.tensor_bytes(a), restored.tensor_bytes(b));
        let diff = match a.dtype.float() {
            Some(d) => float_diff(x, y, d),
            None => LayerDiff::Exact { matches: x == y },
        };
        layers.push(LayerError { name: a.name.clone(), diff });
    }
    Ok(ErrorReport { model_id: original.model_id().to_owned(), layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elf::ElfBlock;
    use crate::float::to_le_bytes;
    use crate::model::{Dtype, ModelBuilder};

    fn f32s(v: &[f32]) -> Vec<u8> {
        to_le_bytes(v)
    }

    #[test]
    fn histogram_buckets() {
        let h = param_value_histogram(&f32s(&[-0.5, 0.3, 1.5]), FloatDtype::F32);
        assert_eq!((h.non_positive, h.positive, h.out_of_range), (1, 1, 1));
        assert!((h.non_positive_fraction() - 1.0 / 3.0).abs() < 1e-15);

        let zeros = param_value_histogram(&f32s(&[0.0, -0.0, 0.0]), FloatDtype::F32);
        assert_eq!(zeros.non_positive_fraction(), 1.0);

        let empty = param_value_histogram(&[], FloatDtype::F64);
        assert_eq!(empty.total(), 0);
        assert_eq!(empty.out_of_range_fraction(), 0.0);

        let edges = param_value_histogram(&f32s(&[-1.0, 1.0, f32::NAN, f32::INFINITY]), FloatDtype::F32);
        assert_eq!(edges.out_of_range, 4);
    }

    #[test]
    fn duplication_ratio() {
        let r = stream_duplication_ratio([(f32s(&[1.0, 2.0, 1.0, 3.0]).as_slice(), FloatDtype::F32)]);
        assert_eq!(r, 0.5);
        assert_eq!(stream_duplication_ratio([(f32s(&[1.0, 2.0]).as_slice(), FloatDtype::F32)]), 0.0);
        assert_eq!(stream_duplication_ratio([(f32s(&[7.0; 5]).as_slice(), FloatDtype::F32)]), 1.0);
        assert_eq!(stream_duplication_ratio(std::iter::empty()), 0.0);
        // -0.0 and 0.0 differ by bit pattern
        assert_eq!(stream_duplication_ratio([(f32s(&[0.0, -0.0]).as_slice(), FloatDtype::F32)]), 0.0);
    }

    #[test]
    fn identical_models_have_zero_error() {
        let m = ModelBuilder::new("m")
            .tensor("w", Dtype::F32, vec![3], f32s(&[0.1, 2.0, f32::NAN]))
            .tensor("i", Dtype::I64, vec![1], vec![5; 8])
            .build()
            .unwrap();
        let r = error_report(&m, &m.clone()).unwrap();
        assert_eq!(r.violations().count(), 0);
        assert!(r.layers.iter().all(LayerError::is_exact));
    }

    #[test]
    fn elf_roundtrip_within_bound() {
        let vals: Vec<f32> = (0..10_000).map(|i| ((i * 7919) % 20_000) as f32 / 10_000.0 - 1.0).collect();
        let restored = ElfBlock::compress(&vals).unwrap().decompress::<f32>().unwrap();
        let a = ModelBuilder::new("m").tensor("w", Dtype::F32, vec![10_000], f32s(&vals)).build().unwrap();
        let b = ModelBuilder::new("m").tensor("w", Dtype::F32, vec![10_000], f32s(&restored)).build().unwrap();
        let r = error_report(&a, &b).unwrap();
        assert_eq!(r.violations().count(), 0);
        assert!(r.max_float_error(FloatDtype::F32) <= 2f64.powi(-24));
        assert!(r.max_float_error(FloatDtype::F32) > 0.0);
    }

    #[test]
    fn mismatches() {
        let a = ModelBuilder::new("m").tensor("w", Dtype::U8, vec![2], vec![1, 2]).build().unwrap();
        let b = ModelBuilder::new("m").tensor("w", Dtype::U8, vec![1, 2], vec![1, 2]).build().unwrap();
        assert!(matches!(error_report(&a, &b), Err(ReportError::ManifestMismatch { .. })));
        let c = ModelBuilder::new("m").tensor("w", Dtype::U8, vec![2], vec![1, 3]).build().unwrap();
        let r = error_report(&a, &c).unwrap();
        assert_eq!(r.non_float_mismatches(), 1);
        assert_eq!(r.violations().count(), 1);

        let x = ModelBuilder::new("m").tensor("w", Dtype::F32, vec![1], f32s(&[0.5])).build().unwrap();
        let y = ModelBuilder::new("m").tensor("w", Dtype::F32, vec![1], f32s(&[f32::NAN])).build().unwrap();
        assert_eq!(error_report(&x, &y).unwrap().violations().count(), 1);
    }
}
