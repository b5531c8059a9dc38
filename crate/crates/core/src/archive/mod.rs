//! Multi-model archive: layer deduplication, DE/ELF selection and a final
//! lossless backend.

pub mod backend;
pub mod container;
mod pipeline;

use std::borrow::Cow;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelFile};

pub use container::{ArchiveIndex, ElvesArchive, Locator, ModelRecord, Run, Selection};
pub use pipeline::{
    ablation_run, compress_corpus, compress_to_writer, decompress_corpus, decompress_each, AblationRow,
    CompressOptions, CompressStats, ModelStats,
};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model `{model}`: {source}")]
    Model { model: String, source: ModelError },
    #[error("unsupported backend id {0}")]
    UnsupportedBackend(u8),
    #[error("backend {backend} failed: {reason}")]
    Backend { backend: &'static str, reason: String },
    #[error("corrupt archive at {context}: {reason}")]
    Corrupt { context: String, reason: String },
    #[error("model `{model}` {stage}: {reason}")]
    Codec { model: String, stage: &'static str, reason: String },
    #[error("invalid options: {0}")]
    Options(String),
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Corruption,
    UnsupportedBackend,
    Other,
}

impl ArchiveError {
    pub(crate) fn corrupt(context: impl Into<String>, reason: impl Into<String>) -> Self {
        ArchiveError::Corrupt { context: context.into(), reason: reason.into() }
    }

    pub(crate) fn backend(backend: &'static str, reason: impl Into<String>) -> Self {
        ArchiveError::Backend { backend, reason: reason.into() }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            ArchiveError::Io(_) | ArchiveError::Model { source: ModelError::Io(_), .. } => ErrorClass::Io,
            ArchiveError::Corrupt { .. } => ErrorClass::Corruption,
            ArchiveError::UnsupportedBackend(_) => ErrorClass::UnsupportedBackend,
            _ => ErrorClass::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MethodTag {
    DedupRef,
    Elf,
    De,
    Raw,
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodTag::DedupRef => "DEDUP_REF",
            MethodTag::Elf => "ELF",
            MethodTag::De => "DE",
            MethodTag::Raw => "RAW",
        })
    }
}

/// Picks the smaller Stage-2 output. Ties go to ELF; RAW wins when every
/// available candidate is larger than the input.
pub fn select_stage2(de: Option<u64>, elf: Option<u64>, raw: u64) -> MethodTag {
    let best = match (de, elf) {
        (Some(d), Some(e)) if d < e => Some((MethodTag::De, d)),
        (_, Some(e)) => Some((MethodTag::Elf, e)),
        (Some(d), None) => Some((MethodTag::De, d)),
        (None, None) => None,
    };
    match best {
        Some((tag, size)) if size <= raw => tag,
        _ => MethodTag::Raw,
    }
}

/// Enabled pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stages {
    pub hd: bool,
    pub de: bool,
    pub elf: bool,
    pub final_stage: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { hd: true, de: true, elf: true, final_stage: true };
    pub const NONE: Stages = Stages { hd: false, de: false, elf: false, final_stage: false };

    pub fn bits(&self) -> u8 {
        self.hd as u8 | (self.de as u8) << 1 | (self.elf as u8) << 2 | (self.final_stage as u8) << 3
    }

    pub fn from_bits(b: u8) -> Option<Self> {
        (b < 16).then_some(Stages { hd: b & 1 != 0, de: b & 2 != 0, elf: b & 4 != 0, final_stage: b & 8 != 0 })
    }

    /// Parses a comma-separated list such as `hd,elf,final`. `all` and `none`
    /// are accepted as shorthands.
    pub fn parse(s: &str) -> Result<Self, ArchiveError> {
        let mut out = Stages::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "hd" => out.hd = true,
                "de" => out.de = true,
                "elf" => out.elf = true,
                "final" | "zstd" => out.final_stage = true,
                "all" => out = Stages::ALL,
                "none" => {}
                other => return Err(ArchiveError::Options(format!("unknown stage `{other}`"))),
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Stages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.hd, "hd"), (self.de, "de"), (self.elf, "elf"), (self.final_stage, "final")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

/// Random-access collection of models. Implementations may load lazily.
pub trait ModelSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn load(&self, index: usize) -> Result<Cow<'_, ModelFile>, ArchiveError>;
}

impl ModelSource for [ModelFile] {
    fn len(&self) -> usize {
        <[ModelFile]>::len(self)
    }

    fn load(&self, index: usize) -> Result<Cow<'_, ModelFile>, ArchiveError> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

impl ModelSource for Vec<ModelFile> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> Result<Cow<'_, ModelFile>, ArchiveError> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

/// Model files on disk, read on demand.
#[derive(Debug, Clone)]
pub struct PathCorpus {
    entries: Vec<(String, PathBuf)>,
}

impl PathCorpus {
    /// `entries` pairs a model id with its file path.
    pub fn new(entries: Vec<(String, PathBuf)>) -> Self {
        PathCorpus { entries }
    }

    pub fn entries(&self) -> &[(String, PathBuf)] {
        &self.entries
    }
}

impl ModelSource for PathCorpus {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn load(&self, index: usize) -> Result<Cow<'_, ModelFile>, ArchiveError> {
        let (id, path) = &self.entries[index];
        ModelFile::load(path, id.clone())
            .map(Cow::Owned)
            .map_err(|source| ArchiveError::Model { model: id.clone(), source })
    }
}
