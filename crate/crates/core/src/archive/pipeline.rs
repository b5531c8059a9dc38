use std::collections::{BTreeMap, HashSet};
use std::io::{self, Write};

use hashbrown::HashMap;
use rayon::prelude::*;

use super::backend::{backend, Backend, DEFAULT_BACKEND, STORE};
use super::container::{
    encode_header, encode_section, ArchiveIndex, DupRecord, ElvesArchive, LayerRecord, Locator, ModelRecord, Run,
    SectionKind, Selection, StreamRecord,
};
use super::{select_stage2, ArchiveError, MethodTag, ModelSource, Stages};
use crate::de::DeStream;
use crate::dedup::{fingerprint_layer, Fingerprint};
use crate::elf::{compress_blocks, ElfBlock, DEFAULT_BLOCK_PARAMS};
use crate::float::FloatDtype;
use crate::model::{flatten_layers, FlatStream, ModelFile};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressOptions {
    pub stages: Stages,
    /// Backend used when the final stage is enabled.
    pub backend: u8,
    /// ELF block size in parameters. DE and raw payloads are cut into
    /// sections of `4 * block_params` bytes.
    pub block_params: usize,
    pub workers: usize,
}

impl Default for CompressOptions {
    fn default() -> Self {
        CompressOptions {
            stages: Stages::ALL,
            backend: DEFAULT_BACKEND,
            block_params: DEFAULT_BLOCK_PARAMS,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl CompressOptions {
    pub fn effective_backend(&self) -> u8 {
        if self.stages.final_stage {
            self.backend
        } else {
            STORE
        }
    }

    fn chunk_bytes(&self) -> usize {
        self.block_params * 4
    }

    fn validate(&self) -> Result<(), ArchiveError> {
        if self.workers == 0 {
            return Err(ArchiveError::Options("worker count must be at least 1".into()));
        }
        if self.block_params == 0 || self.block_params > u32::MAX as usize {
            return Err(ArchiveError::Options(format!("block size {} out of range", self.block_params)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelStats {
    pub id: String,
    pub original_bytes: u64,
    /// Framed size of the sections owned by this model.
    pub archive_bytes: u64,
    pub selection: Option<Selection>,
    pub tags: BTreeMap<MethodTag, usize>,
}

impl ModelStats {
    pub fn compression_ratio(&self) -> f64 {
        self.original_bytes as f64 / self.archive_bytes.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressStats {
    pub original_bytes: u64,
    pub archive_bytes: u64,
    pub models: Vec<ModelStats>,
}

impl CompressStats {
    pub fn compression_ratio(&self) -> f64 {
        self.original_bytes as f64 / self.archive_bytes.max(1) as f64
    }

    pub fn tag_counts(&self) -> BTreeMap<MethodTag, usize> {
        let mut out = BTreeMap::new();
        for m in &self.models {
            for (t, n) in &m.tags {
                *out.entry(*t).or_default() += n;
            }
        }
        out
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, ArchiveError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ArchiveError::Options(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, Copy)]
struct DupSlot {
    store: u32,
    owner: bool,
}

/// Layers whose fingerprint occurs at least twice in the corpus.
#[derive(Debug, Default)]
struct DedupPlan {
    slots: Vec<Vec<Option<DupSlot>>>,
    groups: Vec<(Fingerprint, u64)>,
}

fn dedup_plan(source: &(impl ModelSource + ?Sized), batch: usize) -> Result<DedupPlan, ArchiveError> {
    let mut prints: Vec<Vec<(Fingerprint, u64)>> = Vec::with_capacity(source.len());
    let indices: Vec<usize> = (0..source.len()).collect();
    for chunk in indices.chunks(batch) {
        let part: Vec<Vec<(Fingerprint, u64)>> = chunk
            .par_iter()
            .map(|&i| {
                let m = source.load(i)?;
                Ok(m.tensors()
                    .par_iter()
                    .map(|t| {
                        let b = m.tensor_bytes(t);
                        (fingerprint_layer(b), b.len() as u64)
                    })
                    .collect())
            })
            .collect::<Result<_, ArchiveError>>()?;
        prints.extend(part);
    }

    let mut counts: HashMap<Fingerprint, u32> = HashMap::new();
    for (fp, _) in prints.iter().flatten() {
        *counts.entry(*fp).or_default() += 1;
    }
    let mut plan = DedupPlan::default();
    let mut assigned: HashMap<Fingerprint, u32> = HashMap::new();
    for layers in &prints {
        let mut row = Vec::with_capacity(layers.len());
        for &(fp, len) in layers {
            if counts[&fp] < 2 {
                row.push(None);
                continue;
            }
            let slot = match assigned.get(&fp) {
                Some(&store) => DupSlot { store, owner: false },
                None => {
                    let store = plan.groups.len() as u32;
                    plan.groups.push((fp, len));
                    assigned.insert(fp, store);
                    DupSlot { store, owner: true }
                }
            };
            row.push(Some(slot));
        }
        plan.slots.push(row);
    }
    Ok(plan)
}

struct PendingSection {
    kind: SectionKind,
    label: String,
    raw: Vec<u8>,
}

#[derive(Default)]
struct SectionList {
    items: Vec<PendingSection>,
}

impl SectionList {
    fn push(&mut self, kind: SectionKind, label: String, raw: Vec<u8>) -> u32 {
        self.items.push(PendingSection { kind, label, raw });
        (self.items.len() - 1) as u32
    }

    fn push_chunked(&mut self, kind: SectionKind, label: &str, data: &[u8], chunk: usize) -> (Run, Vec<u64>) {
        let first = self.items.len() as u32;
        let mut lens = Vec::new();
        for (i, c) in data.chunks(chunk).enumerate() {
            self.push(kind, format!("{label} chunk {i}"), c.to_vec());
            lens.push(c.len() as u64);
        }
        (Run { first, count: lens.len() as u32 }, lens)
    }
}

struct EncodedModel {
    record: ModelRecord,
    framed: Vec<Vec<u8>>,
    owned: Vec<(u32, Run)>,
    original_bytes: u64,
}

/// Data-region ranges not covered by any tensor, in ascending order.
fn gaps_of(model: &ModelFile) -> Vec<[u64; 2]> {
    let mut extents: Vec<_> = model.tensors().iter().map(|t| t.extent()).filter(|r| !r.is_empty()).collect();
    extents.sort_by_key(|r| r.start);
    let mut gaps = Vec::new();
    let mut pos = 0u64;
    for r in extents {
        if r.start > pos {
            gaps.push([pos, r.start - pos]);
        }
        pos = pos.max(r.end);
    }
    let end = model.data_region().len() as u64;
    if end > pos {
        gaps.push([pos, end - pos]);
    }
    gaps
}

struct Candidates {
    elf: Option<Vec<Vec<u8>>>,
    de: Option<Vec<u8>>,
}

impl Candidates {
    fn elf_size(&self) -> Option<u64> {
        self.elf.as_ref().map(|b| b.iter().map(|x| x.len() as u64).sum())
    }

    fn de_size(&self) -> Option<u64> {
        self.de.as_ref().map(|d| d.len() as u64)
    }
}

fn stage2_candidates(
    model_id: &str,
    stream: &FlatStream,
    stages: Stages,
    block_params: usize,
) -> Result<Candidates, ArchiveError> {
    let codec_err =
        |stage: &'static str, e: String| ArchiveError::Codec { model: model_id.to_owned(), stage, reason: e };
    let (elf, de) = rayon::join(
        || {
            stages
                .elf
                .then(|| {
                    compress_blocks(&stream.data, stream.dtype, block_params)
                        .map(|blocks| blocks.par_iter().map(ElfBlock::to_bytes).collect::<Vec<_>>())
                })
                .transpose()
        },
        || {
            (stages.de && stream.dtype != FloatDtype::F16)
                .then(|| DeStream::compress_bytes(&stream.data, stream.dtype).map(|s| s.to_bytes()))
                .transpose()
        },
    );
    Ok(Candidates {
        elf: elf.map_err(|e| codec_err("elf", e.to_string()))?,
        de: de.map_err(|e| codec_err("de", e.to_string()))?,
    })
}

fn encode_model(
    source: &(impl ModelSource + ?Sized),
    index: usize,
    plan: Option<&DedupPlan>,
    opts: &CompressOptions,
    backend: &dyn Backend,
) -> Result<EncodedModel, ArchiveError> {
    let model = source.load(index)?;
    let id = model.model_id().to_owned();
    let chunk = opts.chunk_bytes();
    let mut sections = SectionList::default();

    let header_section =
        sections.push(SectionKind::Header, format!("model `{id}` header"), model.header_bytes().to_vec());
    let gaps = gaps_of(&model);
    let gap_run = (!gaps.is_empty()).then(|| {
        let mut bytes = Vec::new();
        for &[start, len] in &gaps {
            bytes.extend_from_slice(&model.data_region()[start as usize..(start + len) as usize]);
        }
        sections.push_chunked(SectionKind::Gaps, &format!("model `{id}` gaps"), &bytes, chunk).0
    });

    let slots = plan.map(|p| &p.slots[index]);
    let slot = |i: usize| slots.and_then(|s| s[i]);
    let streamed = opts.stages.de || opts.stages.elf;

    let mut locs: Vec<Option<(MethodTag, Locator)>> = vec![None; model.tensors().len()];
    let mut owned = Vec::new();
    let mut stream_names = HashSet::new();
    for (i, t) in model.tensors().iter().enumerate() {
        let bytes = model.tensor_bytes(t);
        if let Some(s) = slot(i) {
            if s.owner {
                let label = format!("model `{id}` layer `{}` dedup store", t.name);
                let (run, _) = sections.push_chunked(SectionKind::DupLayer, &label, bytes, chunk);
                owned.push((s.store, run));
            }
            locs[i] = Some((MethodTag::DedupRef, Locator::Dup { store: s.store }));
        } else if streamed && t.dtype.float().is_some() {
            stream_names.insert(t.name.as_str());
        } else {
            let label = format!("model `{id}` layer `{}` raw", t.name);
            let (run, _) = sections.push_chunked(SectionKind::RawLayer, &label, bytes, chunk);
            locs[i] = Some((MethodTag::Raw, Locator::Sections { run }));
        }
    }

    let streams = if stream_names.is_empty() {
        Vec::new()
    } else {
        flatten_layers(&model, |t| stream_names.contains(t.name.as_str()))
    };
    let candidates: Vec<Candidates> = streams
        .par_iter()
        .map(|s| stage2_candidates(&id, s, opts.stages, opts.block_params))
        .collect::<Result<_, _>>()?;

    let wide = |s: &FlatStream| s.dtype != FloatDtype::F16;
    let selection = streams.iter().any(wide).then(|| {
        let pairs = || streams.iter().zip(&candidates).filter(|(s, _)| wide(s));
        let de = pairs().map(|(_, c)| c.de_size()).sum::<Option<u64>>();
        let elf = pairs().map(|(_, c)| c.elf_size()).sum::<Option<u64>>();
        let raw = pairs().map(|(s, _)| s.data.len() as u64).sum();
        Selection { de, elf, raw, tag: select_stage2(de, elf, raw) }
    });

    let mut stream_records = Vec::with_capacity(streams.len());
    let mut stream_pos: HashMap<&str, (u32, u64)> = HashMap::new();
    for (si, (stream, cand)) in streams.iter().zip(candidates).enumerate() {
        let tag = match &selection {
            Some(sel) if wide(stream) => sel.tag,
            _ => select_stage2(None, cand.elf_size(), stream.data.len() as u64),
        };
        let label = format!("model `{id}` {} stream", stream.dtype.name());
        let (run, blocks) = match tag {
            MethodTag::Elf => {
                let first = sections.items.len() as u32;
                let mut lens = Vec::new();
                for (k, block) in cand.elf.expect("elf candidate").into_iter().enumerate() {
                    let start = (k * opts.block_params) as u64;
                    let layer = stream.extents.iter().rev().find(|e| e.start <= start).map_or("", |e| e.name.as_str());
                    lens.push(block.len() as u64);
                    sections.push(SectionKind::ElfBlock, format!("{label} elf block {k} (layer `{layer}`)"), block);
                }
                (Run { first, count: lens.len() as u32 }, lens)
            }
            MethodTag::De => sections.push_chunked(
                SectionKind::DeChunk,
                &format!("{label} de"),
                &cand.de.expect("de candidate"),
                chunk,
            ),
            _ => sections.push_chunked(SectionKind::RawChunk, &format!("{label} raw"), &stream.data, chunk),
        };
        for e in &stream.extents {
            stream_pos.insert(e.name.as_str(), (si as u32, e.start));
        }
        stream_records.push(StreamRecord { dtype: stream.dtype, tag, params: stream.param_count(), run, blocks });
    }

    let mut layers = Vec::with_capacity(model.tensors().len());
    for (t, loc) in model.tensors().iter().zip(locs) {
        let (tag, loc) = match loc {
            Some(x) => x,
            None => {
                let (stream, start) = stream_pos[t.name.as_str()];
                (stream_records[stream as usize].tag, Locator::Stream { stream, start })
            }
        };
        layers.push(LayerRecord { name: t.name.clone(), offset: t.data_offset, len: t.data_len, tag, loc });
    }

    let framed: Vec<Vec<u8>> = sections
        .items
        .par_iter()
        .map(|s| encode_section(s.kind, &s.label, &s.raw, backend))
        .collect::<Result<_, _>>()?;

    Ok(EncodedModel {
        record: ModelRecord {
            id,
            file_len: model.len(),
            header_section,
            gaps,
            gap_run,
            selection,
            layers,
            streams: stream_records,
        },
        framed,
        owned,
        original_bytes: model.len(),
    })
}

fn rebase(record: &mut ModelRecord, base: u32) {
    record.header_section += base;
    record.gap_run = record.gap_run.map(|r| r.shifted(base));
    for s in &mut record.streams {
        s.run = s.run.shifted(base);
    }
    for l in &mut record.layers {
        if let Locator::Sections { run } = &mut l.loc {
            *run = run.shifted(base);
        }
    }
}

struct Counting<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Counting<W> {
    fn put(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.inner.write_all(bytes)?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Compresses every model of `source` into `out`. The output is identical
/// for any worker count.
pub fn compress_to_writer<W: Write>(
    source: &(impl ModelSource + ?Sized),
    opts: &CompressOptions,
    out: W,
) -> Result<CompressStats, ArchiveError> {
    opts.validate()?;
    let backend = backend(opts.effective_backend())?;
    let pool = thread_pool(opts.workers)?;
    {
        let plan = if opts.stages.hd { Some(pool.install(|| dedup_plan(source, opts.workers))?) } else { None };
        let mut w = Counting { inner: out, written: 0 };
        w.put(&encode_header(backend.id(), opts.stages))?;

        let mut index = ArchiveIndex {
            block_params: opts.block_params as u64,
            models: Vec::with_capacity(source.len()),
            dup_store: plan
                .iter()
                .flat_map(|p| &p.groups)
                .map(|&(fingerprint, len)| DupRecord { fingerprint, len, run: Run { first: 0, count: 0 } })
                .collect(),
        };
        let mut stats = CompressStats { original_bytes: 0, archive_bytes: 0, models: Vec::new() };
        let mut section_count = 0u32;
        let indices: Vec<usize> = (0..source.len()).collect();
        for batch in indices.chunks(opts.workers) {
            let encoded: Vec<EncodedModel> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| encode_model(source, i, plan.as_ref(), opts, backend))
                    .collect::<Result<_, _>>()
            })?;
            for mut e in encoded {
                let base = section_count;
                let mut bytes = 0u64;
                for s in &e.framed {
                    w.put(s)?;
                    bytes += s.len() as u64;
                }
                section_count = section_count
                    .checked_add(e.framed.len() as u32)
                    .ok_or_else(|| ArchiveError::Options("too many sections".into()))?;
                rebase(&mut e.record, base);
                for (store, run) in e.owned {
                    index.dup_store[store as usize].run = run.shifted(base);
                }
                let mut tags = BTreeMap::new();
                for l in &e.record.layers {
                    *tags.entry(l.tag).or_default() += 1;
                }
                stats.original_bytes += e.original_bytes;
                stats.models.push(ModelStats {
                    id: e.record.id.clone(),
                    original_bytes: e.original_bytes,
                    archive_bytes: bytes,
                    selection: e.record.selection,
                    tags,
                });
                index.models.push(e.record);
            }
        }
        let json = serde_json::to_vec(&index).expect("index serializes");
        w.put(&encode_section(SectionKind::Index, "index", &json, backend)?)?;
        w.inner.flush()?;
        stats.archive_bytes = w.written;
        Ok(stats)
    }
}

pub fn compress_corpus(
    source: &(impl ModelSource + ?Sized),
    opts: &CompressOptions,
) -> Result<(Vec<u8>, CompressStats), ArchiveError> {
    let mut out = Vec::new();
    let stats = compress_to_writer(source, opts, &mut out)?;
    Ok((out, stats))
}

fn read_kind(ar: &ElvesArchive<'_>, run: Run, kind: SectionKind) -> Result<Vec<u8>, ArchiveError> {
    for i in run.first..run.first + run.count {
        let s = ar.section(i);
        if s.kind != kind {
            return Err(s.corrupt(format!("expected {kind:?} section, found {:?}", s.kind)));
        }
    }
    ar.read_run(run)
}

fn restore_stream(ar: &ElvesArchive<'_>, ctx: &str, s: &StreamRecord) -> Result<Vec<u8>, ArchiveError> {
    for (k, &len) in s.blocks.iter().enumerate() {
        let sec = ar.section(s.run.first + k as u32);
        if sec.raw_len() != len {
            return Err(sec.corrupt(format!("block index says {len} bytes, section holds {}", sec.raw_len())));
        }
    }
    let bytes = match s.tag {
        MethodTag::Elf => {
            let parts: Vec<Vec<u8>> = (s.run.first..s.run.first + s.run.count)
                .into_par_iter()
                .map(|i| {
                    let sec = ar.section(i);
                    if sec.kind != SectionKind::ElfBlock {
                        return Err(sec.corrupt(format!("expected ElfBlock section, found {:?}", sec.kind)));
                    }
                    let raw = sec.decode(ar.backend())?;
                    ElfBlock::from_bytes(&raw, s.dtype)
                        .and_then(|b| b.decompress_to_bytes())
                        .map_err(|e| sec.corrupt(e.to_string()))
                })
                .collect::<Result<_, _>>()?;
            parts.concat()
        }
        MethodTag::De => {
            let raw = read_kind(ar, s.run, SectionKind::DeChunk)?;
            DeStream::from_bytes(&raw, s.dtype)
                .and_then(|d| d.decompress_to_bytes())
                .map_err(|e| ArchiveError::corrupt(format!("{ctx} {} stream", s.dtype.name()), e.to_string()))?
        }
        MethodTag::Raw => read_kind(ar, s.run, SectionKind::RawChunk)?,
        MethodTag::DedupRef => {
            return Err(ArchiveError::corrupt(format!("{ctx} {} stream", s.dtype.name()), "stream tagged DEDUP_REF"))
        }
    };
    let expect = s.params * s.dtype.byte_width() as u64;
    if bytes.len() as u64 != expect {
        return Err(ArchiveError::corrupt(
            format!("{ctx} {} stream", s.dtype.name()),
            format!("{} bytes decoded, expected {expect}", bytes.len()),
        ));
    }
    Ok(bytes)
}

fn restore_model(ar: &ElvesArchive<'_>, rec: &ModelRecord) -> Result<ModelFile, ArchiveError> {
    let ctx = format!("model `{}`", rec.id);
    let header = read_kind(ar, Run { first: rec.header_section, count: 1 }, SectionKind::Header)?;
    let data_start = 8 + header.len() as u64;
    if rec.file_len < data_start {
        return Err(ArchiveError::corrupt(&ctx, format!("file length {} below header end {data_start}", rec.file_len)));
    }
    let file_len = usize::try_from(rec.file_len).map_err(|_| ArchiveError::corrupt(&ctx, "file too large"))?;
    let mut out = vec![0u8; file_len];
    out[..8].copy_from_slice(&(header.len() as u64).to_le_bytes());
    out[8..data_start as usize].copy_from_slice(&header);
    let data = &mut out[data_start as usize..];
    let data_len = data.len() as u64;

    let place = |data: &mut [u8], what: &str, offset: u64, bytes: &[u8]| -> Result<(), ArchiveError> {
        match offset.checked_add(bytes.len() as u64) {
            Some(end) if end <= data_len => {
                data[offset as usize..end as usize].copy_from_slice(bytes);
                Ok(())
            }
            _ => Err(ArchiveError::corrupt(
                format!("{ctx} {what}"),
                format!("{} bytes at {offset} exceed data region of {data_len}", bytes.len()),
            )),
        }
    };

    match rec.gap_run {
        Some(run) => {
            let bytes = read_kind(ar, run, SectionKind::Gaps)?;
            let total: u64 = rec.gaps.iter().map(|g| g[1]).sum();
            if total != bytes.len() as u64 {
                return Err(ArchiveError::corrupt(format!("{ctx} gaps"), "length mismatch"));
            }
            let mut pos = 0usize;
            for &[start, len] in &rec.gaps {
                place(data, "gaps", start, &bytes[pos..pos + len as usize])?;
                pos += len as usize;
            }
        }
        None if !rec.gaps.is_empty() => return Err(ArchiveError::corrupt(format!("{ctx} gaps"), "missing gap data")),
        None => {}
    }

    let streams: Vec<Vec<u8>> =
        rec.streams.par_iter().map(|s| restore_stream(ar, &ctx, s)).collect::<Result<_, _>>()?;

    let mut dup_cache: HashMap<u32, Vec<u8>> = HashMap::new();
    for l in &rec.layers {
        let what = format!("layer `{}`", l.name);
        let lctx = || format!("{ctx} {what}");
        match l.loc {
            Locator::Dup { store } => {
                if !dup_cache.contains_key(&store) {
                    let d = &ar.index.dup_store[store as usize];
                    let bytes = read_kind(ar, d.run, SectionKind::DupLayer)?;
                    if Fingerprint::of(&bytes) != d.fingerprint {
                        return Err(ArchiveError::corrupt(lctx(), format!("dedup store {store} fingerprint mismatch")));
                    }
                    dup_cache.insert(store, bytes);
                }
                let bytes = &dup_cache[&store];
                if bytes.len() as u64 != l.len {
                    return Err(ArchiveError::corrupt(lctx(), "dedup store length mismatch"));
                }
                place(data, &what, l.offset, bytes)?;
            }
            Locator::Sections { run } => {
                let bytes = read_kind(ar, run, SectionKind::RawLayer)?;
                if bytes.len() as u64 != l.len {
                    return Err(ArchiveError::corrupt(lctx(), "raw length mismatch"));
                }
                place(data, &what, l.offset, &bytes)?;
            }
            Locator::Stream { stream, start } => {
                let s = &streams[stream as usize];
                let w = rec.streams[stream as usize].dtype.byte_width() as u64;
                let begin = start.checked_mul(w).filter(|b| b.checked_add(l.len).is_some_and(|e| e <= s.len() as u64));
                let Some(begin) = begin else {
                    return Err(ArchiveError::corrupt(lctx(), "stream range out of bounds"));
                };
                place(data, &what, l.offset, &s[begin as usize..(begin + l.len) as usize])?;
            }
        }
    }

    ModelFile::from_bytes(rec.id.clone(), out)
        .map_err(|e| ArchiveError::corrupt(&ctx, format!("reconstructed file invalid: {e}")))
}

/// Restores models in archive order, handing each to `sink` as soon as its
/// batch is done.
pub fn decompress_each(
    archive: &[u8],
    workers: usize,
    mut sink: impl FnMut(ModelFile) -> Result<(), ArchiveError>,
) -> Result<(), ArchiveError> {
    if workers == 0 {
        return Err(ArchiveError::Options("worker count must be at least 1".into()));
    }
    let ar = ElvesArchive::parse(archive)?;
    let pool = thread_pool(workers)?;
    for batch in ar.index.models.chunks(workers) {
        let restored: Vec<ModelFile> =
            pool.install(|| batch.par_iter().map(|m| restore_model(&ar, m)).collect::<Result<_, _>>())?;
        for m in restored {
            sink(m)?;
        }
    }
    Ok(())
}

pub fn decompress_corpus(archive: &[u8], workers: usize) -> Result<Vec<ModelFile>, ArchiveError> {
    let mut out = Vec::new();
    decompress_each(archive, workers, |m| {
        out.push(m);
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub stages: Stages,
    pub original_bytes: u64,
    pub archive_bytes: u64,
    pub compression_ratio: f64,
    pub per_model: Vec<(String, f64)>,
}

/// Archive size for one stage configuration. Nothing is kept in memory
/// beyond the batch being encoded.
pub fn ablation_run(
    source: &(impl ModelSource + ?Sized),
    stages: Stages,
    base: &CompressOptions,
) -> Result<AblationRow, ArchiveError> {
    let opts = CompressOptions { stages, ..base.clone() };
    let stats = compress_to_writer(source, &opts, io::sink())?;
    Ok(AblationRow {
        stages,
        original_bytes: stats.original_bytes,
        archive_bytes: stats.archive_bytes,
        compression_ratio: stats.compression_ratio(),
        per_model: stats.models.iter().map(|m| (m.id.clone(), m.compression_ratio())).collect(),
    })
}
