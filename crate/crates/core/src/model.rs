//! Safetensors-compatible model files.
//!
//! Layout: a little-endian `u64` header length `N`, `N` bytes of JSON mapping
//! tensor names to `{dtype, shape, data_offsets}`, then raw little-endian
//! tensor data. Offsets in the header are relative to the start of the data
//! region. An optional `__metadata__` entry holds string pairs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::float::FloatDtype;

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("file is {0} bytes, too short for the header length prefix")]
    Truncated(usize),
    #[error("header claims {claimed} bytes but only {available} follow the prefix")]
    HeaderOutOfBounds { claimed: u64, available: u64 },
    #[error("header is not a valid JSON object: {0}")]
    InvalidJson(String),
    #[error("tensor `{name}`: {reason}")]
    InvalidEntry { name: String, reason: String },
    #[error("tensor `{name}`: unknown dtype `{dtype}` with no inferable element width")]
    UnknownDtype { name: String, dtype: String },
    #[error("tensor `{name}`: {len} bytes do not match shape {shape:?} of {dtype}")]
    LengthMismatch { name: String, dtype: String, shape: Vec<u64>, len: u64 },
    #[error("tensor `{name}` extent [{start}, {end}) exceeds the {data_len}-byte data region")]
    ExtentOutOfBounds { name: String, start: u64, end: u64, data_len: u64 },
    #[error("tensors `{first}` and `{second}` have overlapping extents")]
    OverlappingExtents { first: String, second: String },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("layer `{name}` has {actual} bytes, manifest expects {expected}")]
    LayerSize { name: String, expected: u64, actual: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Element type of a tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dtype {
    F16,
    F32,
    F64,
    U8,
    I64,
    Bool,
    /// A dtype string this crate does not interpret, with its element width.
    Other {
        name: String,
        width: u64,
    },
}

impl Dtype {
    fn known(name: &str) -> Option<Dtype> {
        Some(match name {
            "F16" => Dtype::F16,
            "F32" => Dtype::F32,
            "F64" => Dtype::F64,
            "U8" => Dtype::U8,
            "I64" => Dtype::I64,
            "BOOL" => Dtype::Bool,
            _ => return None,
        })
    }

    pub fn byte_width(&self) -> u64 {
        match self {
            Dtype::F16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
            Dtype::U8 | Dtype::Bool => 1,
            Dtype::Other { width, .. } => *width,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Dtype::F16 => "F16",
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
            Dtype::U8 => "U8",
            Dtype::I64 => "I64",
            Dtype::Bool => "BOOL",
            Dtype::Other { name, .. } => name,
        }
    }

    pub fn float(&self) -> Option<FloatDtype> {
        match self {
            Dtype::F16 => Some(FloatDtype::F16),
            Dtype::F32 => Some(FloatDtype::F32),
            Dtype::F64 => Some(FloatDtype::F64),
            _ => None,
        }
    }
}

impl From<FloatDtype> for Dtype {
    fn from(d: FloatDtype) -> Self {
        match d {
            FloatDtype::F16 => Dtype::F16,
            FloatDtype::F32 => Dtype::F32,
            FloatDtype::F64 => Dtype::F64,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
    /// Start of the tensor relative to the data region.
    pub data_offset: u64,
    pub data_len: u64,
}

impl TensorMeta {
    pub fn element_count(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn extent(&self) -> std::ops::Range<u64> {
        self.data_offset..self.data_offset + self.data_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelManifest {
    pub model_id: String,
    /// Tensors in header order.
    pub tensors: Vec<TensorMeta>,
    pub total_bytes: u64,
    pub metadata: BTreeMap<String, String>,
}

impl ModelManifest {
    pub fn tensor(&self, name: &str) -> Option<&TensorMeta> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// A loaded model file: manifest plus the complete file image.
#[derive(Debug, Clone)]
pub struct ModelFile {
    manifest: ModelManifest,
    bytes: Vec<u8>,
    data_start: usize,
}

impl ModelFile {
    pub fn load(path: impl AsRef<Path>, model_id: impl Into<String>) -> Result<Self, ModelError> {
        Self::from_bytes(model_id, fs::read(path)?)
    }

    pub fn from_bytes(model_id: impl Into<String>, bytes: Vec<u8>) -> Result<Self, ModelError> {
        if bytes.len() < 8 {
            return Err(ModelError::Truncated(bytes.len()));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let available = bytes.len() as u64 - 8;
        if header_len > available {
            return Err(ModelError::HeaderOutOfBounds { claimed: header_len, available });
        }
        let data_start = 8 + header_len as usize;
        let (tensors, metadata) = parse_header(&bytes[8..data_start], (bytes.len() - data_start) as u64)?;
        let manifest = ModelManifest { model_id: model_id.into(), tensors, total_bytes: bytes.len() as u64, metadata };
        Ok(ModelFile { manifest, bytes, data_start })
    }

    pub fn manifest(&self) -> &ModelManifest {
        &self.manifest
    }

    pub fn model_id(&self) -> &str {
        &self.manifest.model_id
    }

    pub fn tensors(&self) -> &[TensorMeta] {
        &self.manifest.tensors
    }

    /// The header JSON exactly as stored, padding included.
    pub fn header_bytes(&self) -> &[u8] {
        &self.bytes[8..self.data_start]
    }

    pub fn data_region(&self) -> &[u8] {
        &self.bytes[self.data_start..]
    }

    pub fn tensor_bytes(&self, meta: &TensorMeta) -> &[u8] {
        let r = meta.extent();
        &self.data_region()[r.start as usize..r.end as usize]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

fn invalid(name: &str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidEntry { name: name.to_owned(), reason: reason.into() }
}

fn parse_header(header: &[u8], data_len: u64) -> Result<(Vec<TensorMeta>, BTreeMap<String, String>), ModelError> {
    let map: Map<String, Value> = serde_json::from_slice(header).map_err(|e| ModelError::InvalidJson(e.to_string()))?;
    let mut tensors = Vec::with_capacity(map.len());
    let mut metadata = BTreeMap::new();
    for (name, entry) in &map {
        if name == METADATA_KEY {
            let obj = entry.as_object().ok_or_else(|| invalid(name, "metadata is not an object"))?;
            for (k, v) in obj {
                let v = v.as_str().ok_or_else(|| invalid(name, format!("metadata `{k}` is not a string")))?;
                metadata.insert(k.clone(), v.to_owned());
            }
            continue;
        }
        tensors.push(parse_entry(name, entry, data_len)?);
    }
    check_overlaps(&tensors)?;
    Ok((tensors, metadata))
}

fn parse_entry(name: &str, entry: &Value, data_len: u64) -> Result<TensorMeta, ModelError> {
    let obj = entry.as_object().ok_or_else(|| invalid(name, "entry is not an object"))?;
    let dtype_str = obj.get("dtype").and_then(Value::as_str).ok_or_else(|| invalid(name, "missing dtype string"))?;
    let shape = obj
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| invalid(name, "missing shape array"))?
        .iter()
        .map(|d| d.as_u64().ok_or_else(|| invalid(name, "shape entries must be non-negative integers")))
        .collect::<Result<Vec<u64>, _>>()?;
    let offsets = obj
        .get("data_offsets")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2)
        .ok_or_else(|| invalid(name, "data_offsets must be a two-element array"))?;
    let start = offsets[0].as_u64().ok_or_else(|| invalid(name, "bad start offset"))?;
    let end = offsets[1].as_u64().ok_or_else(|| invalid(name, "bad end offset"))?;
    if end < start {
        return Err(invalid(name, format!("end offset {end} before start {start}")));
    }
    if end > data_len {
        return Err(ModelError::ExtentOutOfBounds { name: name.to_owned(), start, end, data_len });
    }
    let len = end - start;
    let elements = shape
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| invalid(name, "shape element count overflows"))?;
    let dtype = match Dtype::known(dtype_str) {
        Some(d) => d,
        None if elements > 0 && len > 0 && len % elements == 0 => {
            Dtype::Other { name: dtype_str.to_owned(), width: len / elements }
        }
        None => return Err(ModelError::UnknownDtype { name: name.to_owned(), dtype: dtype_str.to_owned() }),
    };
    if elements.checked_mul(dtype.byte_width()) != Some(len) {
        return Err(ModelError::LengthMismatch { name: name.to_owned(), dtype: dtype_str.to_owned(), shape, len });
    }
    Ok(TensorMeta { name: name.to_owned(), dtype, shape, data_offset: start, data_len: len })
}

fn check_overlaps(tensors: &[TensorMeta]) -> Result<(), ModelError> {
    let mut spans: Vec<&TensorMeta> = tensors.iter().filter(|t| t.data_len > 0).collect();
    spans.sort_by_key(|t| t.data_offset);
    for pair in spans.windows(2) {
        if pair[1].data_offset < pair[0].extent().end {
            return Err(ModelError::OverlappingExtents { first: pair[0].name.clone(), second: pair[1].name.clone() });
        }
    }
    Ok(())
}

/// Renders the header JSON for `manifest`, in manifest order, padded with
/// spaces to a multiple of eight bytes.
pub fn render_header(manifest: &ModelManifest) -> Vec<u8> {
    let mut map = Map::new();
    if !manifest.metadata.is_empty() {
        let meta: Map<String, Value> =
            manifest.metadata.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        map.insert(METADATA_KEY.to_owned(), Value::Object(meta));
    }
    for t in &manifest.tensors {
        let mut entry = Map::new();
        entry.insert("dtype".into(), Value::String(t.dtype.as_str().to_owned()));
        entry.insert("shape".into(), Value::from(t.shape.clone()));
        entry.insert("data_offsets".into(), Value::from(vec![t.data_offset, t.extent().end]));
        map.insert(t.name.clone(), Value::Object(entry));
    }
    let mut out = serde_json::to_vec(&Value::Object(map)).expect("header serializes");
    while !out.len().is_multiple_of(8) {
        out.push(b' ');
    }
    out
}

/// Writes a model image from a manifest and one byte buffer per tensor, in
/// manifest order. Bytes of the data region not covered by any tensor are
/// zero.
pub fn write_model(manifest: &ModelManifest, layers: &[&[u8]]) -> Result<Vec<u8>, ModelError> {
    assert_eq!(layers.len(), manifest.tensors.len(), "one buffer per tensor");
    let mut names = std::collections::HashSet::new();
    for (t, layer) in manifest.tensors.iter().zip(layers) {
        if !names.insert(t.name.as_str()) {
            return Err(ModelError::DuplicateName(t.name.clone()));
        }
        if layer.len() as u64 != t.data_len {
            return Err(ModelError::LayerSize {
                name: t.name.clone(),
                expected: t.data_len,
                actual: layer.len() as u64,
            });
        }
    }
    check_overlaps(&manifest.tensors)?;
    let header = render_header(manifest);
    let data_len = manifest.tensors.iter().map(|t| t.extent().end).max().unwrap_or(0);
    let mut out = Vec::with_capacity(8 + header.len() + data_len as usize);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let base = out.len();
    out.resize(base + data_len as usize, 0);
    for (t, layer) in manifest.tensors.iter().zip(layers) {
        let start = base + t.data_offset as usize;
        out[start..start + layer.len()].copy_from_slice(layer);
    }
    Ok(out)
}

pub fn write_model_file(path: impl AsRef<Path>, manifest: &ModelManifest, layers: &[&[u8]]) -> Result<(), ModelError> {
    fs::write(path, write_model(manifest, layers)?)?;
    Ok(())
}

/// Assembles a model by appending tensors back to back.
#[derive(Debug, Default)]
pub struct ModelBuilder {
    model_id: String,
    tensors: Vec<TensorMeta>,
    data: Vec<Vec<u8>>,
    offset: u64,
    metadata: BTreeMap<String, String>,
}

impl ModelBuilder {
    pub fn new(model_id: impl Into<String>) -> Self {
        ModelBuilder { model_id: model_id.into(), ..Default::default() }
    }

    pub fn metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn tensor(mut self, name: impl Into<String>, dtype: Dtype, shape: Vec<u64>, bytes: Vec<u8>) -> Self {
        let data_len = bytes.len() as u64;
        self.tensors.push(TensorMeta { name: name.into(), dtype, shape, data_offset: self.offset, data_len });
        self.offset += data_len;
        self.data.push(bytes);
        self
    }

    pub fn build(self) -> Result<ModelFile, ModelError> {
        let manifest = ModelManifest {
            model_id: self.model_id.clone(),
            tensors: self.tensors,
            total_bytes: 0,
            metadata: self.metadata,
        };
        let layers: Vec<&[u8]> = self.data.iter().map(Vec::as_slice).collect();
        let bytes = write_model(&manifest, &layers)?;
        ModelFile::from_bytes(self.model_id, bytes)
    }
}

/// Position of one layer inside a flattened stream, in parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerExtent {
    pub name: String,
    pub start: u64,
    pub len: u64,
}

/// All layers of one float dtype concatenated in manifest order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatStream {
    pub dtype: FloatDtype,
    pub data: Vec<u8>,
    pub extents: Vec<LayerExtent>,
}

impl FlatStream {
    pub fn param_count(&self) -> u64 {
        (self.data.len() / self.dtype.byte_width()) as u64
    }

    /// Splits a stream of the same shape back into per-layer byte buffers.
    pub fn scatter<'a>(&self, data: &'a [u8]) -> Vec<(&str, &'a [u8])> {
        let w = self.dtype.byte_width() as u64;
        self.extents
            .iter()
            .map(|e| (e.name.as_str(), &data[(e.start * w) as usize..((e.start + e.len) * w) as usize]))
            .collect()
    }
}

/// One stream per floating dtype present, ordered F16, F32, F64.
pub fn flatten_float_layers(model: &ModelFile) -> Vec<FlatStream> {
    flatten_layers(model, |_| true)
}

/// Like [`flatten_float_layers`] but only over float tensors accepted by `keep`.
pub fn flatten_layers(model: &ModelFile, keep: impl Fn(&TensorMeta) -> bool) -> Vec<FlatStream> {
    let mut streams = Vec::new();
    for dtype in FloatDtype::ALL {
        let w = dtype.byte_width() as u64;
        let mut stream = FlatStream { dtype, data: Vec::new(), extents: Vec::new() };
        for t in model.tensors() {
            if t.dtype.float() != Some(dtype) || !keep(t) {
                continue;
            }
            stream.extents.push(LayerExtent {
                name: t.name.clone(),
                start: stream.data.len() as u64 / w,
                len: t.data_len / w,
            });
            stream.data.extend_from_slice(model.tensor_bytes(t));
        }
        if !stream.extents.is_empty() {
            streams.push(stream);
        }
    }
    streams
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_file(header: &str, data: &[u8]) -> Vec<u8> {
        let mut out = (header.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn single_tensor() {
        let bytes = raw_file(r#"{"w":{"dtype":"F32","shape":[2,3],"data_offsets":[0,24]}}"#, &[0; 24]);
        let m = ModelFile::from_bytes("m", bytes).unwrap();
        assert_eq!(m.tensors().len(), 1);
        assert_eq!(m.tensors()[0].data_len, 24);
        assert_eq!(m.tensors()[0].dtype, Dtype::F32);
    }

    #[test]
    fn zero_tensors() {
        let bytes = raw_file("{}      ", &[]);
        let m = ModelFile::from_bytes("m", bytes).unwrap();
        assert!(m.tensors().is_empty());
        assert_eq!(m.manifest().total_bytes, 16);
    }

    #[test]
    fn overlap_detected() {
        let h = r#"{"a":{"dtype":"U8","shape":[8],"data_offsets":[0,8]},"b":{"dtype":"U8","shape":[8],"data_offsets":[4,12]}}"#;
        let err = ModelFile::from_bytes("m", raw_file(h, &[0; 12])).unwrap_err();
        assert!(matches!(err, ModelError::OverlappingExtents { .. }), "{err}");
    }

    #[test]
    fn dtype_handling() {
        let h = r#"{"a":{"dtype":"BF16","shape":[4],"data_offsets":[0,8]}}"#;
        let m = ModelFile::from_bytes("m", raw_file(h, &[0; 8])).unwrap();
        assert_eq!(m.tensors()[0].dtype, Dtype::Other { name: "BF16".into(), width: 2 });

        let h = r#"{"a":{"dtype":"Q4","shape":[0],"data_offsets":[0,0]}}"#;
        assert!(matches!(ModelFile::from_bytes("m", raw_file(h, &[])), Err(ModelError::UnknownDtype { .. })));

        let h = r#"{"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}}"#;
        assert!(matches!(ModelFile::from_bytes("m", raw_file(h, &[0; 8])), Err(ModelError::LengthMismatch { .. })));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(ModelFile::from_bytes("m", vec![1, 2, 3]), Err(ModelError::Truncated(3))));
        assert!(matches!(ModelFile::from_bytes("m", raw_file("{", &[])), Err(ModelError::InvalidJson(_))));
        let mut huge = u64::MAX.to_le_bytes().to_vec();
        huge.extend_from_slice(b"{}");
        assert!(matches!(ModelFile::from_bytes("m", huge), Err(ModelError::HeaderOutOfBounds { .. })));
        let h = r#"{"a":{"dtype":"U8","shape":[8],"data_offsets":[0,8]}}"#;
        assert!(matches!(ModelFile::from_bytes("m", raw_file(h, &[0; 4])), Err(ModelError::ExtentOutOfBounds { .. })));
        let h = r#"{"a":{"dtype":"U8","shape":[-1],"data_offsets":[0,8]}}"#;
        assert!(matches!(ModelFile::from_bytes("m", raw_file(h, &[0; 8])), Err(ModelError::InvalidEntry { .. })));
    }

    #[test]
    fn metadata_and_zero_size_tensors() {
        let m = ModelBuilder::new("m")
            .metadata("format", "pt")
            .tensor("empty", Dtype::F32, vec![0, 5], vec![])
            .tensor("x", Dtype::I64, vec![1], 7i64.to_le_bytes().to_vec())
            .build()
            .unwrap();
        assert_eq!(m.manifest().metadata["format"], "pt");
        assert_eq!(m.tensors()[0].data_len, 0);
        let again = ModelFile::from_bytes("m", m.as_bytes().to_vec()).unwrap();
        assert_eq!(again.manifest(), m.manifest());
    }

    #[test]
    fn writer_follows_manifest_order() {
        let m = ModelBuilder::new("m")
            .tensor("a", Dtype::U8, vec![2], vec![1, 2])
            .tensor("b", Dtype::U8, vec![1], vec![3])
            .build()
            .unwrap();
        let mut manifest = m.manifest().clone();
        manifest.tensors.reverse();
        let layers: Vec<&[u8]> = manifest.tensors.iter().map(|t| m.tensor_bytes(t)).collect();
        let out = ModelFile::from_bytes("m", write_model(&manifest, &layers).unwrap()).unwrap();
        let names: Vec<&str> = out.tensors().iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(out.tensor_bytes(&out.tensors()[1]), &[1, 2]);
    }

    #[test]
    fn empty_model_roundtrips() {
        let m = ModelBuilder::new("e").build().unwrap();
        assert_eq!(m.as_bytes().len() % 8, 0);
        assert!(ModelFile::from_bytes("e", m.as_bytes().to_vec()).unwrap().tensors().is_empty());
    }

    #[test]
    fn flatten_by_dtype() {
        let f32s = |v: &[f32]| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
        let m = ModelBuilder::new("m")
            .tensor("A", Dtype::F32, vec![4], f32s(&[1.0, 2.0, 3.0, 4.0]))
            .tensor("B", Dtype::I64, vec![2], vec![0; 16])
            .tensor("C", Dtype::F32, vec![3], f32s(&[5.0, 6.0, 7.0]))
            .tensor("D", Dtype::F16, vec![2], vec![0, 0x3c, 0, 0xbc])
            .build()
            .unwrap();
        let streams = flatten_float_layers(&m);
        assert_eq!(streams.len(), 2);
        assert_eq!(streams[0].dtype, FloatDtype::F16);
        let s = &streams[1];
        assert_eq!(s.param_count(), 7);
        assert_eq!(
            s.extents,
            vec![
                LayerExtent { name: "A".into(), start: 0, len: 4 },
                LayerExtent { name: "C".into(), start: 4, len: 3 },
            ]
        );
        for (name, bytes) in s.scatter(&s.data) {
            assert_eq!(bytes, m.tensor_bytes(m.manifest().tensor(name).unwrap()));
        }

        let ints = ModelBuilder::new("i").tensor("x", Dtype::U8, vec![1], vec![9]).build().unwrap();
        assert!(flatten_float_layers(&ints).is_empty());
    }

    proptest! {
        #[test]
        fn corrupted_files_never_panic(cut in 0usize..200, flip in 0usize..200, byte: u8) {
            let m = ModelBuilder::new("m")
                .tensor("w", Dtype::F32, vec![2, 2], vec![7; 16])
                .tensor("i", Dtype::I64, vec![1], vec![1; 8])
                .build()
                .unwrap();
            let mut bytes = m.into_bytes();
            if flip < bytes.len() {
                bytes[flip] ^= byte;
            }
            bytes.truncate(cut.min(bytes.len()));
            if let Ok(f) = ModelFile::from_bytes("m", bytes) {
                for t in f.tensors() {
                    let _ = f.tensor_bytes(t);
                }
            }
        }

        #[test]
        fn write_load_roundtrip(layers in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 0..6)) {
            let mut b = ModelBuilder::new("m");
            for (i, l) in layers.iter().enumerate() {
                b = b.tensor(format!("t{i}"), Dtype::U8, vec![l.len() as u64], l.clone());
            }
            let m = b.build().unwrap();
            let again = ModelFile::from_bytes("m", m.as_bytes().to_vec()).unwrap();
            prop_assert_eq!(again.manifest(), m.manifest());
            for (t, l) in again.tensors().iter().zip(&layers) {
                prop_assert_eq!(again.tensor_bytes(t), l.as_slice());
            }
        }
    }
}
