//! Whole-layer deduplication by SHA-256 fingerprint.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Dtype, ModelFile};

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("fingerprint {fingerprint} matches layers with different bytes (`{first}` and `{second}`)")]
    Collision { fingerprint: Fingerprint, first: String, second: String },
}

/// SHA-256 digest of a layer's raw bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn of(bytes: &[u8]) -> Self {
        Fingerprint(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Fingerprint(out))
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", self.to_hex())
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Fingerprint::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid fingerprint hex"))
    }
}

pub fn fingerprint_layer(bytes: &[u8]) -> Fingerprint {
    Fingerprint::of(bytes)
}

/// Where a layer's bytes live after the scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRef {
    /// First occurrence; stored under this id.
    Unique(usize),
    /// Repeat of an earlier layer with this fingerprint.
    Ref(Fingerprint),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: String,
    pub fingerprint: Fingerprint,
    pub layer: LayerRef,
}

/// Fingerprint table plus per-model layer references.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupIndex {
    stored: HashMap<Fingerprint, usize>,
    /// (model index, tensor index) of each stored layer, by id.
    origins: Vec<(usize, usize)>,
    models: Vec<Vec<LayerEntry>>,
    occurrences: HashMap<Fingerprint, usize>,
}

impl DedupIndex {
    pub fn stored_id(&self, fp: &Fingerprint) -> Option<usize> {
        self.stored.get(fp).copied()
    }

    /// Model and tensor index where stored layer `id` first appeared.
    pub fn origin(&self, id: usize) -> (usize, usize) {
        self.origins[id]
    }

    pub fn stored_count(&self) -> usize {
        self.origins.len()
    }

    pub fn model_layers(&self, model: usize) -> &[LayerEntry] {
        &self.models[model]
    }

    /// How many layers in the corpus share this fingerprint.
    pub fn occurrences(&self, fp: &Fingerprint) -> usize {
        self.occurrences.get(fp).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DedupOptions {
    /// Compare bytes on every fingerprint match instead of trusting the hash.
    pub paranoid: bool,
}

/// Fingerprints every layer of every model (in parallel) and records the
/// first occurrence of each fingerprint as unique, later ones as references.
/// The scan order is model order, then tensor order.
pub fn dedup_scan(models: &[ModelFile], opts: DedupOptions) -> Result<DedupIndex, DedupError> {
    let prints: Vec<Vec<Fingerprint>> = models
        .par_iter()
        .map(|m| m.tensors().par_iter().map(|t| fingerprint_layer(m.tensor_bytes(t))).collect())
        .collect();

    let mut index = DedupIndex::default();
    for (mi, (model, fps)) in models.iter().zip(&prints).enumerate() {
        let mut entries = Vec::with_capacity(fps.len());
        for (ti, (tensor, fp)) in model.tensors().iter().zip(fps).enumerate() {
            *index.occurrences.entry(*fp).or_default() += 1;
            let layer = match index.stored.get(fp) {
                Some(&id) => {
                    if opts.paranoid {
                        let (om, ot) = index.origins[id];
                        let orig = &models[om].tensors()[ot];
                        if models[om].tensor_bytes(orig) != model.tensor_bytes(tensor) {
                            return Err(DedupError::Collision {
                                fingerprint: *fp,
                                first: format!("{}/{}", models[om].model_id(), orig.name),
                                second: format!("{}/{}", model.model_id(), tensor.name),
                            });
                        }
                    }
                    LayerRef::Ref(*fp)
                }
                None => {
                    let id = index.origins.len();
                    index.origins.push((mi, ti));
                    index.stored.insert(*fp, id);
                    LayerRef::Unique(id)
                }
            };
            entries.push(LayerEntry { name: tensor.name.clone(), fingerprint: *fp, layer });
        }
        index.models.push(entries);
    }
    Ok(index)
}

/// One row of a duplication table.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DupRow {
    pub dtype: String,
    pub count: u64,
    pub dup_count: u64,
    pub total_bytes: u64,
    pub dup_bytes: u64,
}

impl DupRow {
    fn new(dtype: impl Into<String>) -> Self {
        DupRow { dtype: dtype.into(), ..Default::default() }
    }

    pub fn dup_count_pct(&self) -> f64 {
        pct(self.dup_count, self.count)
    }

    pub fn dup_bytes_pct(&self) -> f64 {
        pct(self.dup_bytes, self.total_bytes)
    }

    pub(crate) fn add(&mut self, bytes: u64, dup: bool) {
        self.count += 1;
        self.total_bytes += bytes;
        if dup {
            self.dup_count += 1;
            self.dup_bytes += bytes;
        }
    }

    fn merge(&mut self, other: &DupRow) {
        self.count += other.count;
        self.dup_count += other.dup_count;
        self.total_bytes += other.total_bytes;
        self.dup_bytes += other.dup_bytes;
    }
}

pub(crate) fn pct(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Per-dtype rows in dtype order followed by an overall row.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DupTable {
    pub rows: Vec<DupRow>,
    pub overall: DupRow,
}

impl DupTable {
    pub(crate) fn from_rows(rows: BTreeMap<Dtype, DupRow>) -> Self {
        let mut overall = DupRow::new("Overall");
        for r in rows.values() {
            overall.merge(r);
        }
        DupTable { rows: rows.into_values().collect(), overall }
    }

    pub fn row(&self, dtype: &str) -> Option<&DupRow> {
        self.rows.iter().find(|r| r.dtype == dtype)
    }

    pub(crate) fn entry<'a>(rows: &'a mut BTreeMap<Dtype, DupRow>, dtype: &Dtype) -> &'a mut DupRow {
        rows.entry(dtype.clone()).or_insert_with(|| DupRow::new(dtype.as_str()))
    }
}

/// Layer duplication per dtype: a layer counts as duplicate when it is a
/// reference to an earlier identical layer.
pub fn layer_dup_report(models: &[ModelFile]) -> DupTable {
    let index = dedup_scan(models, DedupOptions::default()).expect("non-paranoid scan cannot fail");
    let mut rows = BTreeMap::new();
    for (mi, model) in models.iter().enumerate() {
        for (t, entry) in model.tensors().iter().zip(index.model_layers(mi)) {
            DupTable::entry(&mut rows, &t.dtype).add(t.data_len, matches!(entry.layer, LayerRef::Ref(_)));
        }
    }
    DupTable::from_rows(rows)
}
