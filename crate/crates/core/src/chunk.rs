//! Chunk-level duplication and similarity analysis.
//!
//! Layers are cut either into fixed-size chunks or with FastCDC (gear hash,
//! normalized chunking level 2). Similarity uses a sampled signature: the
//! SHA-256 of every N-th element of a unit, so two units compare similar when
//! they agree at all sampled positions.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dedup::{DupTable, Fingerprint};
use crate::model::{Dtype, ModelFile};

/// Seed of the gear table ("chunk" in ASCII).
pub const GEAR_SEED: u64 = 0x6368756E6B;

/// Default sampling stride of the similarity signature.
pub const SAMPLE_STRIDE: usize = 32;

const fn splitmix64(state: u64) -> (u64, u64) {
    let state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (state, z ^ (z >> 31))
}

const fn gear_table(seed: u64) -> [u64; 256] {
    let mut table = [0u64; 256];
    let mut state = seed;
    let mut i = 0;
    while i < 256 {
        let (next, value) = splitmix64(state);
        state = next;
        table[i] = value;
        i += 1;
    }
    table
}

/// 256 SplitMix64 outputs seeded with [`GEAR_SEED`].
pub static GEAR: [u64; 256] = gear_table(GEAR_SEED);

// Spread-bit masks from the FastCDC reference implementation, indexed by the
// number of one bits.
const MASKS: [u64; 26] = [
    0,
    0,
    0,
    0,
    0,
    0x0000_0000_0180_4110,
    0x0000_0000_0180_3110,
    0x0000_0000_1803_5100,
    0x0000_0018_0003_5300,
    0x0000_0190_0035_3000,
    0x0000_5900_0353_0000,
    0x0000_d900_0353_0000,
    0x0000_d901_0353_0000,
    0x0000_d903_0353_0000,
    0x0000_d903_1353_0000,
    0x0000_d90f_0353_0000,
    0x0000_d903_0353_7000,
    0x0000_d907_0353_7000,
    0x0000_d907_0753_7000,
    0x0000_d917_0753_7000,
    0x0000_d917_4753_7000,
    0x0000_d917_6753_7000,
    0x0000_d937_6753_7000,
    0x0000_d937_7753_7000,
    0x0000_d937_7757_7000,
    0x0000_db37_7757_7000,
];

/// One chunk of a source buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRecord {
    pub source: usize,
    pub offset: u64,
    pub len: u64,
    pub fingerprint: Fingerprint,
}

fn records(source: usize, bytes: &[u8], cuts: impl IntoIterator<Item = (usize, usize)>) -> Vec<ChunkRecord> {
    cuts.into_iter()
        .map(|(offset, len)| ChunkRecord {
            source,
            offset: offset as u64,
            len: len as u64,
            fingerprint: Fingerprint::of(&bytes[offset..offset + len]),
        })
        .collect()
}

/// Fixed-size chunk extents `(offset, len)`; the last may be short.
pub fn fsc_extents(len: usize, chunk_size: usize) -> Vec<(usize, usize)> {
    assert!(chunk_size > 0, "chunk size must be positive");
    (0..len).step_by(chunk_size).map(|o| (o, chunk_size.min(len - o))).collect()
}

pub fn fsc_chunks(source: usize, bytes: &[u8], chunk_size: usize) -> Vec<ChunkRecord> {
    records(source, bytes, fsc_extents(bytes.len(), chunk_size))
}

/// FastCDC size bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CdcParams {
    pub min: usize,
    pub avg: usize,
    pub max: usize,
}

impl Default for CdcParams {
    fn default() -> Self {
        CdcParams { min: 128, avg: 4096, max: 128 * 1024 }
    }
}

impl CdcParams {
    fn masks(&self) -> (u64, u64) {
        assert!(self.min <= self.avg && self.avg <= self.max, "need min <= avg <= max");
        let bits = (self.avg.max(1) as f64).log2().round() as usize;
        let small = MASKS[(bits + 2).clamp(5, 25)];
        let large = MASKS[bits.saturating_sub(2).clamp(5, 25)];
        (small, large)
    }
}

/// Length of the next content-defined chunk at the start of `src`.
fn cut(src: &[u8], p: &CdcParams, mask_s: u64, mask_l: u64) -> usize {
    let n = src.len();
    if n <= p.min {
        return n;
    }
    let end = n.min(p.max);
    let center = end.min(p.avg);
    let mut hash = 0u64;
    let mut i = p.min;
    while i < center {
        hash = (hash << 1).wrapping_add(GEAR[src[i] as usize]);
        if hash & mask_s == 0 {
            return i + 1;
        }
        i += 1;
    }
    while i < end {
        hash = (hash << 1).wrapping_add(GEAR[src[i] as usize]);
        if hash & mask_l == 0 {
            return i + 1;
        }
        i += 1;
    }
    end
}

pub fn cdc_extents(bytes: &[u8], params: CdcParams) -> Vec<(usize, usize)> {
    let (mask_s, mask_l) = params.masks();
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let len = cut(&bytes[offset..], &params, mask_s, mask_l);
        out.push((offset, len));
        offset += len;
    }
    out
}

pub fn cdc_chunks(source: usize, bytes: &[u8], params: CdcParams) -> Vec<ChunkRecord> {
    records(source, bytes, cdc_extents(bytes, params))
}

/// Digest of the elements at indices `0, N, 2N, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimilaritySignature {
    pub digest: [u8; 32],
    pub stride: usize,
}

/// Samples whole `element_width`-byte elements at the given stride; a
/// trailing partial element is never sampled.
pub fn similarity_signature(bytes: &[u8], element_width: usize, stride: usize) -> SimilaritySignature {
    assert!(element_width > 0 && stride > 0);
    let count = bytes.len() / element_width;
    let mut h = Sha256::new();
    for i in (0..count).step_by(stride) {
        h.update(&bytes[i * element_width..(i + 1) * element_width]);
    }
    SimilaritySignature { digest: h.finalize().into(), stride }
}

/// Sampling element of a layer: one parameter for floats, one byte otherwise.
pub fn sample_width(dtype: &Dtype) -> usize {
    match dtype.float() {
        Some(f) => f.byte_width(),
        None => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chunking {
    Fixed(usize),
    Cdc(CdcParams),
}

impl Chunking {
    pub fn extents(&self, bytes: &[u8]) -> Vec<(usize, usize)> {
        match *self {
            Chunking::Fixed(size) => fsc_extents(bytes.len(), size),
            Chunking::Cdc(p) => cdc_extents(bytes, p),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Chunking::Fixed(s) => format!("fsc-{s}"),
            Chunking::Cdc(p) => format!("cdc-{}-{}-{}", p.min, p.avg, p.max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Layer,
    Fixed(usize),
}

impl Granularity {
    pub fn label(&self) -> String {
        match self {
            Granularity::Layer => "layer".into(),
            Granularity::Fixed(s) => format!("fsc-{s}"),
        }
    }
}

/// Every (dtype, unit bytes) pair of the corpus in scan order.
fn units<'a>(
    models: &'a [ModelFile],
    split: impl Fn(&'a [u8]) -> Vec<(usize, usize)> + Sync,
) -> Vec<(&'a Dtype, &'a [u8])> {
    let per_layer: Vec<Vec<(&Dtype, &[u8])>> = models
        .par_iter()
        .flat_map_iter(|m| m.tensors().iter().map(move |t| (&t.dtype, m.tensor_bytes(t))))
        .map(|(dtype, bytes)| split(bytes).into_iter().map(|(o, l)| (dtype, &bytes[o..o + l])).collect())
        .collect();
    per_layer.into_iter().flatten().collect()
}

/// Marks each unit whose key already appeared earlier in the scan.
fn tally<K: Eq + std::hash::Hash + Send>(
    units: &[(&Dtype, &[u8])],
    key: impl Fn(&Dtype, &[u8]) -> K + Sync,
) -> DupTable {
    let keys: Vec<K> = units.par_iter().map(|(d, b)| key(d, b)).collect();
    let mut seen = HashSet::with_capacity(keys.len());
    let mut rows = BTreeMap::new();
    for ((dtype, bytes), k) in units.iter().zip(keys) {
        let dup = !seen.insert(k);
        DupTable::entry(&mut rows, dtype).add(bytes.len() as u64, dup);
    }
    DupTable::from_rows(rows)
}

/// Chunk duplication per dtype: a chunk is duplicate when its fingerprint
/// occurred earlier anywhere in the corpus.
pub fn chunk_dup_report(models: &[ModelFile], chunking: Chunking) -> DupTable {
    let u = units(models, |b| chunking.extents(b));
    tally(&u, |_, b| Fingerprint::of(b))
}

/// Similar-unit share per dtype: a unit is similar when its signature
/// occurred earlier anywhere in the corpus.
pub fn similarity_report(models: &[ModelFile], granularity: Granularity, stride: usize) -> DupTable {
    let u = match granularity {
        Granularity::Layer => units(models, |b| vec![(0, b.len())]),
        Granularity::Fixed(size) => units(models, |b| fsc_extents(b.len(), size)),
    };
    tally(&u, |d, b| similarity_signature(b, sample_width(d), stride))
}
