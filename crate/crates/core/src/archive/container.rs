//! Archive byte layout.
//!
//! ```text
//! archive  := magic "ELVS" | version u16 | backend u8 | stages u8 | section* | index-section
//! section  := kind u8 | codec u8 | label_len u16 | label | raw_len u64 | stored_len u64
//!             | payload[stored_len] | crc32c u32
//! ```
//!
//! All integers are little-endian. The checksum covers every section byte
//! before it. `codec` is 0 when the payload is stored verbatim and 1 when it
//! went through the archive backend; the writer falls back to 0 whenever the
//! backend output is not smaller. The index is the last section and is JSON.

use serde::{Deserialize, Serialize};

use super::backend::{backend, Backend, STORE};
use super::{ArchiveError, MethodTag, Stages};
use crate::dedup::Fingerprint;
use crate::float::FloatDtype;
use crate::varint::Cursor;

pub const MAGIC: [u8; 4] = *b"ELVS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 8;

const CODEC_STORED: u8 = 0;
const CODEC_BACKEND: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SectionKind {
    Header = 1,
    Gaps = 2,
    DupLayer = 3,
    RawLayer = 4,
    ElfBlock = 5,
    DeChunk = 6,
    RawChunk = 7,
    Index = 8,
}

impl SectionKind {
    fn from_u8(v: u8) -> Option<Self> {
        use SectionKind::*;
        Some(match v {
            1 => Header,
            2 => Gaps,
            3 => DupLayer,
            4 => RawLayer,
            5 => ElfBlock,
            6 => DeChunk,
            7 => RawChunk,
            8 => Index,
            _ => return None,
        })
    }
}

pub fn encode_header(backend: u8, stages: Stages) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&MAGIC);
    h[4..6].copy_from_slice(&VERSION.to_le_bytes());
    h[6] = backend;
    h[7] = stages.bits();
    h
}

/// Frames one payload, running it through `backend` when that helps.
pub fn encode_section(
    kind: SectionKind,
    label: &str,
    raw: &[u8],
    backend: &dyn Backend,
) -> Result<Vec<u8>, ArchiveError> {
    let packed = if backend.id() == STORE { None } else { Some(backend.compress(raw)?) };
    let (codec, payload) = match &packed {
        Some(p) if p.len() < raw.len() => (CODEC_BACKEND, p.as_slice()),
        _ => (CODEC_STORED, raw),
    };
    let label = &label.as_bytes()[..label.len().min(u16::MAX as usize)];
    let mut out = Vec::with_capacity(payload.len() + label.len() + 26);
    out.push(kind as u8);
    out.push(codec);
    out.extend_from_slice(&(label.len() as u16).to_le_bytes());
    out.extend_from_slice(label);
    out.extend_from_slice(&(raw.len() as u64).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32c::crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// A checksummed section inside an archive buffer.
#[derive(Debug, Clone)]
pub struct SectionView<'a> {
    pub kind: SectionKind,
    pub label: String,
    pub offset: usize,
    pub framed_len: usize,
    raw_len: u64,
    codec: u8,
    payload: &'a [u8],
}

impl<'a> SectionView<'a> {
    pub fn raw_len(&self) -> u64 {
        self.raw_len
    }

    pub fn stored_len(&self) -> usize {
        self.payload.len()
    }

    pub fn decode(&self, backend: &dyn Backend) -> Result<Vec<u8>, ArchiveError> {
        let raw_len = usize::try_from(self.raw_len).map_err(|_| self.corrupt("length overflows memory"))?;
        match self.codec {
            CODEC_STORED if self.payload.len() == raw_len => Ok(self.payload.to_vec()),
            CODEC_STORED => Err(self.corrupt(format!("stored length {} != raw length {raw_len}", self.payload.len()))),
            _ => backend.decompress(self.payload, raw_len).map_err(|e| self.corrupt(e.to_string())),
        }
    }

    pub(crate) fn corrupt(&self, reason: impl Into<String>) -> ArchiveError {
        ArchiveError::corrupt(&self.label, reason)
    }
}

fn read_section<'a>(cur: &mut Cursor<'a>, bytes: &'a [u8], after: &str) -> Result<SectionView<'a>, ArchiveError> {
    let offset = cur.position();
    let truncated = |e: crate::varint::ReadError| {
        ArchiveError::corrupt(format!("section after {after}"), format!("truncated: {e}"))
    };
    let kind_byte = cur.u8().map_err(truncated)?;
    let codec = cur.u8().map_err(truncated)?;
    let label_len = cur.u16().map_err(truncated)? as usize;
    let label = String::from_utf8_lossy(cur.take(label_len).map_err(truncated)?).into_owned();
    let ctx = |reason: String| ArchiveError::corrupt(&label, reason);
    let raw_len = cur.u64().map_err(|e| ctx(format!("truncated: {e}")))?;
    let stored_len = cur.u64().map_err(|e| ctx(format!("truncated: {e}")))?;
    if stored_len > cur.remaining() as u64 {
        return Err(ctx(format!("truncated: payload of {stored_len} bytes, {} remain", cur.remaining())));
    }
    let payload = cur.take(stored_len as usize).map_err(|e| ctx(format!("truncated: {e}")))?;
    let body_end = cur.position();
    let crc = cur.u32().map_err(|e| ctx(format!("truncated checksum: {e}")))?;
    if crc32c::crc32c(&bytes[offset..body_end]) != crc {
        return Err(ctx("checksum mismatch".into()));
    }
    let kind = SectionKind::from_u8(kind_byte).ok_or_else(|| ctx(format!("unknown section kind {kind_byte}")))?;
    if codec > CODEC_BACKEND {
        return Err(ctx(format!("unknown codec flag {codec}")));
    }
    Ok(SectionView { kind, label, offset, framed_len: cur.position() - offset, raw_len, codec, payload })
}

/// Parsed archive: header fields, every section and the decoded index.
#[derive(Debug)]
pub struct ElvesArchive<'a> {
    pub version: u16,
    pub stages: Stages,
    pub index: ArchiveIndex,
    pub sections: Vec<SectionView<'a>>,
    backend: &'static dyn Backend,
}

impl std::fmt::Debug for dyn Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl<'a> ElvesArchive<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, ArchiveError> {
        if bytes.len() < HEADER_LEN {
            return Err(ArchiveError::corrupt("archive header", format!("{} bytes", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(ArchiveError::corrupt("archive header", "bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(ArchiveError::corrupt("archive header", format!("unsupported version {version}")));
        }
        let backend = backend(bytes[6])?;
        let stages = Stages::from_bits(bytes[7])
            .ok_or_else(|| ArchiveError::corrupt("archive header", format!("stage flags {:#04x}", bytes[7])))?;

        let mut cur = Cursor::new(bytes);
        cur.take(HEADER_LEN).expect("length checked");
        let mut sections: Vec<SectionView<'a>> = Vec::new();
        loop {
            if cur.remaining() == 0 {
                let after = sections.last().map_or("archive header", |s| s.label.as_str());
                return Err(ArchiveError::corrupt(after, "archive truncated, index section missing"));
            }
            let after = sections.last().map_or_else(|| "archive header".to_owned(), |s| format!("`{}`", s.label));
            let s = read_section(&mut cur, bytes, &after)?;
            let is_index = s.kind == SectionKind::Index;
            sections.push(s);
            if is_index {
                break;
            }
        }
        if cur.remaining() != 0 {
            return Err(ArchiveError::corrupt("index", format!("{} trailing bytes", cur.remaining())));
        }
        let index_section = sections.pop().expect("index present");
        let raw = index_section.decode(backend)?;
        let index: ArchiveIndex =
            serde_json::from_slice(&raw).map_err(|e| index_section.corrupt(format!("invalid index: {e}")))?;
        let archive = ElvesArchive { version, stages, index, sections, backend };
        archive.validate()?;
        Ok(archive)
    }

    pub fn backend(&self) -> &'static dyn Backend {
        self.backend
    }

    fn check_run(&self, run: Run, ctx: &str) -> Result<(), ArchiveError> {
        if run.end() as usize > self.sections.len() {
            return Err(ArchiveError::corrupt(
                ctx,
                format!("sections {}..{} out of {}", run.first, run.end(), self.sections.len()),
            ));
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ArchiveError> {
        for d in &self.index.dup_store {
            self.check_run(d.run, &format!("dedup store {}", d.fingerprint))?;
        }
        for m in &self.index.models {
            let ctx = format!("model `{}`", m.id);
            self.check_run(Run { first: m.header_section, count: 1 }, &ctx)?;
            if let Some(g) = m.gap_run {
                self.check_run(g, &ctx)?;
            }
            for s in &m.streams {
                self.check_run(s.run, &format!("{ctx} {} stream", s.dtype.name()))?;
                if s.blocks.len() != s.run.count as usize {
                    return Err(ArchiveError::corrupt(&ctx, "block index length mismatch"));
                }
            }
            for l in &m.layers {
                let lctx = format!("{ctx} layer `{}`", l.name);
                match l.loc {
                    Locator::Dup { store } if store as usize >= self.index.dup_store.len() => {
                        return Err(ArchiveError::corrupt(lctx, format!("dedup store entry {store} missing")));
                    }
                    Locator::Sections { run } => self.check_run(run, &lctx)?,
                    Locator::Stream { stream, .. } if stream as usize >= m.streams.len() => {
                        return Err(ArchiveError::corrupt(lctx, format!("stream {stream} missing")));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Decodes and concatenates a run of sections.
    pub fn read_run(&self, run: Run) -> Result<Vec<u8>, ArchiveError> {
        let mut out = Vec::new();
        for s in &self.sections[run.first as usize..run.end() as usize] {
            out.extend_from_slice(&s.decode(self.backend)?);
        }
        Ok(out)
    }

    pub fn section(&self, i: u32) -> &SectionView<'a> {
        &self.sections[i as usize]
    }

    /// Tag of every layer, in archive order.
    pub fn layer_tags(&self) -> impl Iterator<Item = (&str, &str, MethodTag)> {
        self.index.models.iter().flat_map(|m| m.layers.iter().map(move |l| (m.id.as_str(), l.name.as_str(), l.tag)))
    }
}

/// Consecutive sections `first..first + count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub first: u32,
    pub count: u32,
}

impl Run {
    pub fn end(&self) -> u64 {
        self.first as u64 + self.count as u64
    }

    pub(crate) fn shifted(self, base: u32) -> Run {
        Run { first: self.first + base, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveIndex {
    pub block_params: u64,
    pub models: Vec<ModelRecord>,
    pub dup_store: Vec<DupRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DupRecord {
    pub fingerprint: Fingerprint,
    pub len: u64,
    pub run: Run,
}

/// Stage-2 candidate sizes for the F32/F64 streams of one model, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub de: Option<u64>,
    pub elf: Option<u64>,
    pub raw: u64,
    pub tag: MethodTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub file_len: u64,
    pub header_section: u32,
    /// Data-region byte ranges not covered by any tensor.
    pub gaps: Vec<[u64; 2]>,
    pub gap_run: Option<Run>,
    pub selection: Option<Selection>,
    pub layers: Vec<LayerRecord>,
    pub streams: Vec<StreamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    /// Byte range within the data region.
    pub offset: u64,
    pub len: u64,
    pub tag: MethodTag,
    pub loc: Locator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locator {
    Dup {
        store: u32,
    },
    Sections {
        run: Run,
    },
    /// Parameter offset inside a flattened stream.
    Stream {
        stream: u32,
        start: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub dtype: FloatDtype,
    pub tag: MethodTag,
    pub params: u64,
    pub run: Run,
    /// Raw byte length of each section in `run`.
    pub blocks: Vec<u64>,
}
