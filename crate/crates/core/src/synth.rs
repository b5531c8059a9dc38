//! Deterministic synthetic model corpora.
//!
//! Every model shares one architecture (layer names, dtypes and shapes are a
//! function of the seed and layer index only), so a corpus looks like a set of
//! fine-tunes of one base model. A layer is either fresh or copied from the
//! same layer of an earlier model. Each model is generated independently of
//! the others, so corpora of any size can be produced lazily.

use std::borrow::Cow;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveError, ModelSource};
use crate::float::FloatDtype;
use crate::model::{Dtype, ModelBuilder, ModelError, ModelFile};

/// Relative weights for choosing each layer's dtype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtypeMix {
    pub f16: f64,
    pub f32: f64,
    pub f64: f64,
    pub i64: f64,
    pub u8: f64,
    pub bool: f64,
}

impl Default for DtypeMix {
    fn default() -> Self {
        DtypeMix { f16: 0.0, f32: 1.0, f64: 0.0, i64: 0.0, u8: 0.0, bool: 0.0 }
    }
}

impl DtypeMix {
    pub fn only(dtype: Dtype) -> Self {
        let mut m = DtypeMix { f32: 0.0, ..Default::default() };
        match dtype {
            Dtype::F16 => m.f16 = 1.0,
            Dtype::F64 => m.f64 = 1.0,
            Dtype::I64 => m.i64 = 1.0,
            Dtype::U8 => m.u8 = 1.0,
            Dtype::Bool => m.bool = 1.0,
            _ => m.f32 = 1.0,
        }
        m
    }

    fn pick(&self, r: f64) -> Dtype {
        let table = [
            (self.f16, Dtype::F16),
            (self.f32, Dtype::F32),
            (self.f64, Dtype::F64),
            (self.i64, Dtype::I64),
            (self.u8, Dtype::U8),
            (self.bool, Dtype::Bool),
        ];
        let total: f64 = table.iter().map(|(w, _)| w.max(0.0)).sum();
        let mut acc = 0.0;
        for (w, d) in &table {
            acc += w.max(0.0) / total;
            if r < acc {
                return d.clone();
            }
        }
        table.iter().rev().find(|(w, _)| *w > 0.0).map_or(Dtype::F32, |(_, d)| d.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub models: usize,
    pub seed: u64,
    pub layers: usize,
    /// Inclusive range of parameters per layer.
    pub params_per_layer: [u64; 2],
    pub dtype_mix: DtypeMix,
    /// Probability that a fresh float parameter lies in (-1, 1).
    pub in_range_fraction: f64,
    /// Probability that a float parameter repeats an earlier one in its layer.
    pub param_dup_ratio: f64,
    /// Mean of the geometric back-distance of a repeated parameter.
    pub dup_distance_mean: f64,
    /// Probability that a layer of model `m > 0` is copied from an earlier model.
    pub layer_dup_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            models: 4,
            seed: 0,
            layers: 8,
            params_per_layer: [1024, 65_536],
            dtype_mix: DtypeMix::default(),
            in_range_fraction: 1.0,
            param_dup_ratio: 0.0,
            dup_distance_mean: 8.0,
            layer_dup_fraction: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        let spec: SynthSpec = serde_json::from_slice(bytes)?;
        spec.check().map_err(serde::de::Error::custom)?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must be within [0, 1], got {v}"))
            }
        };
        unit("in_range_fraction", self.in_range_fraction)?;
        unit("param_dup_ratio", self.param_dup_ratio)?;
        unit("layer_dup_fraction", self.layer_dup_fraction)?;
        if self.dup_distance_mean < 1.0 {
            return Err("dup_distance_mean must be at least 1".into());
        }
        if self.params_per_layer[0] > self.params_per_layer[1] {
            return Err("params_per_layer must be [min, max]".into());
        }
        let m = &self.dtype_mix;
        if [m.f16, m.f32, m.f64, m.i64, m.u8, m.bool].iter().all(|w| *w <= 0.0) {
            return Err("dtype_mix has no positive weight".into());
        }
        if self.layers >= 1 << 28 || self.models >= 1 << 32 {
            return Err("too many models or layers".into());
        }
        Ok(())
    }
}

const ARCH: u64 = 1;
const COPY: u64 = 2;
const DATA: u64 = 3;

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    spec: SynthSpec,
    arch: Vec<(Dtype, Vec<u64>)>,
}

impl SynthCorpus {
    pub fn new(spec: SynthSpec) -> Result<Self, String> {
        spec.check()?;
        let arch = (0..spec.layers)
            .map(|l| {
                let mut rng = spec.rng(ARCH, 0, l);
                let dtype = spec.dtype_mix.pick(rng.random());
                let [lo, hi] = spec.params_per_layer;
                let n = rng.random_range(lo..=hi);
                let shape = if n >= 64 && n % 64 == 0 { vec![64, n / 64] } else { vec![n] };
                (dtype, shape)
            })
            .collect();
        Ok(SynthCorpus { spec, arch })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn model_id(index: usize) -> String {
        format!("model-{index:04}.safetensors")
    }

    /// Model and layer whose content layer `layer` of model `model` carries.
    fn origin(&self, model: usize, layer: usize) -> usize {
        let mut m = model;
        while m > 0 {
            let mut rng = self.spec.rng(COPY, m, layer);
            if rng.random::<f64>() >= self.spec.layer_dup_fraction {
                break;
            }
            m = rng.random_range(0..m);
        }
        m
    }

    pub fn generate(&self, index: usize) -> Result<ModelFile, ModelError> {
        let mut b = ModelBuilder::new(Self::model_id(index)).metadata("format", "pt");
        for (l, (dtype, shape)) in self.arch.iter().enumerate() {
            let n: u64 = shape.iter().product();
            let mut rng = self.spec.rng(DATA, self.origin(index, l), l);
            let bytes = match dtype.float() {
                Some(f) => self.float_layer(&mut rng, f, n as usize),
                None => int_layer(&mut rng, dtype, n as usize),
            };
            b = b.tensor(format!("layers.{l}.weight"), dtype.clone(), shape.clone(), bytes);
        }
        b.build()
    }

    fn float_layer(&self, rng: &mut ChaCha8Rng, dtype: FloatDtype, n: usize) -> Vec<u8> {
        let s = &self.spec;
        let p = 1.0 / s.dup_distance_mean;
        let mut bits: Vec<u64> = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 && rng.random::<f64>() < s.param_dup_ratio {
                let d = geometric(rng.random(), p).min(i as u64) as usize;
                bits.push(bits[i - d]);
                continue;
            }
            let in_range = rng.random::<f64>() < s.in_range_fraction;
            bits.push(loop {
                let v = if in_range {
                    rng.random_range(-1.0..1.0)
                } else {
                    let m = rng.random_range(1.0..16.0);
                    if rng.random() {
                        -m
                    } else {
                        m
                    }
                };
                let b = encode(v, dtype);
                if (dtype.bits_to_f64(b).abs() < 1.0) == in_range {
                    break b;
                }
            });
        }
        let w = dtype.byte_width();
        let mut out = Vec::with_capacity(n * w);
        for b in bits {
            out.extend_from_slice(&b.to_le_bytes()[..w]);
        }
        out
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, ModelError> {
        std::fs::create_dir_all(dir)?;
        (0..self.spec.models)
            .map(|i| {
                let path = dir.join(Self::model_id(i));
                std::fs::write(&path, self.generate(i)?.as_bytes())?;
                Ok(path)
            })
            .collect()
    }

    pub fn total_bytes(&self) -> u64 {
        (0..self.spec.models).map(|i| self.generate(i).map_or(0, |m| m.len())).sum()
    }
}

impl SynthSpec {
    fn rng(&self, tag: u64, model: usize, layer: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tag << 60 | (model as u64) << 28 | layer as u64);
        rng
    }
}

fn geometric(u: f64, p: f64) -> u64 {
    if p >= 1.0 {
        return 1;
    }
    1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor() as u64
}

fn encode(v: f64, dtype: FloatDtype) -> u64 {
    match dtype {
        FloatDtype::F16 => half::f16::from_f64(v).to_bits() as u64,
        FloatDtype::F32 => (v as f32).to_bits() as u64,
        FloatDtype::F64 => v.to_bits(),
    }
}

fn int_layer(rng: &mut ChaCha8Rng, dtype: &Dtype, n: usize) -> Vec<u8> {
    match dtype {
        Dtype::I64 => (0..n).flat_map(|_| rng.random_range(0i64..50_000).to_le_bytes()).collect(),
        Dtype::Bool => (0..n).map(|_| rng.random_bool(0.5) as u8).collect(),
        _ => {
            let mut out = vec![0u8; n * dtype.byte_width() as usize];
            rng.fill(&mut out[..]);
            out
        }
    }
}

impl ModelSource for SynthCorpus {
    fn len(&self) -> usize {
        self.spec.models
    }

    fn load(&self, index: usize) -> Result<Cow<'_, ModelFile>, ArchiveError> {
        self.generate(index)
            .map(Cow::Owned)
            .map_err(|source| ArchiveError::Model { model: Self::model_id(index), source })
    }
}
