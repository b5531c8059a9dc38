//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr and then asserts. Tests hold a shared lock so that timings are not
//! disturbed by each other.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufWriter, Read, Write};
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use elves_core::analyzer::{error_report, model_param_stats, LayerDiff};
use elves_core::archive::backend::STORE;
use elves_core::archive::container::SectionKind;
use elves_core::archive::{
    compress_corpus, compress_to_writer, decompress_corpus, select_stage2, CompressOptions, ElvesArchive, MethodTag,
    PathCorpus, Stages,
};
use elves_core::bitstream::BitReader;
use elves_core::chunk::{chunk_dup_report, similarity_report, CdcParams, Chunking, Granularity};
use elves_core::de::{DeSavingReport, DeStream};
use elves_core::dedup::{layer_dup_report, DupTable};
use elves_core::elf::{compress_blocks, decompress_blocks, ElfBlock};
use elves_core::float::FloatDtype;
use elves_core::model::{Dtype, ModelBuilder, ModelFile};
use elves_core::synth::{DtypeMix, SynthCorpus, SynthSpec};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: impl std::fmt::Display) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2}: {status} {name}: {detail}");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn le_bytes(bits: &[u64], w: usize) -> Vec<u8> {
    bits.iter().flat_map(|b| b.to_le_bytes()[..w].to_vec()).collect()
}

fn read_bits(bytes: &[u8], w: usize) -> Vec<u64> {
    bytes
        .chunks_exact(w)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..w].copy_from_slice(c);
            u64::from_le_bytes(b)
        })
        .collect()
}

/// Value of an IEEE 754 binary16 pattern, decoded from its fields.
fn f16_value(bits: u64) -> f64 {
    let sign = if bits >> 15 & 1 == 1 { -1.0 } else { 1.0 };
    let exp = (bits >> 10 & 0x1f) as i32;
    let mant = (bits & 0x3ff) as f64;
    match exp {
        0 => sign * mant * 2f64.powi(-24),
        31 if mant == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        e => sign * (1.0 + mant / 1024.0) * 2f64.powi(e - 15),
    }
}

fn value(bits: u64, dtype: FloatDtype) -> f64 {
    match dtype {
        FloatDtype::F16 => f16_value(bits),
        FloatDtype::F32 => f32::from_bits(bits as u32) as f64,
        FloatDtype::F64 => f64::from_bits(bits),
    }
}

fn width(dtype: FloatDtype) -> usize {
    match dtype {
        FloatDtype::F16 => 2,
        FloatDtype::F32 => 4,
        FloatDtype::F64 => 8,
    }
}

fn bound(dtype: FloatDtype) -> f64 {
    match dtype {
        FloatDtype::F16 => 2f64.powi(-11),
        FloatDtype::F32 => 2f64.powi(-24),
        FloatDtype::F64 => 2f64.powi(-53),
    }
}

/// (bound violations, largest in-range error) of an ELF roundtrip.
fn elf_roundtrip_violations(bits: &[u64], dtype: FloatDtype) -> (usize, f64) {
    let w = width(dtype);
    let blocks = compress_blocks(&le_bytes(bits, w), dtype, 1 << 20).unwrap();
    let back = read_bits(&decompress_blocks(&blocks).unwrap(), w);
    assert_eq!(back.len(), bits.len());
    let mut violations = 0;
    let mut max = 0.0f64;
    for (&o, &r) in bits.iter().zip(&back) {
        let ov = value(o, dtype);
        if ov.abs() < 1.0 {
            let err = (value(r, dtype) - ov).abs();
            max = max.max(err);
            if err.is_nan() || err > bound(dtype) {
                violations += 1;
            }
        } else if o != r {
            violations += 1;
        }
    }
    (violations, max)
}

fn random_in_range(rng: &mut ChaCha8Rng, dtype: FloatDtype, n: usize) -> Vec<u64> {
    let one = match dtype {
        FloatDtype::F32 => 0x3f80_0000u64,
        _ => 0x3ff0_0000_0000_0000,
    };
    let sign = 1u64 << (width(dtype) * 8 - 1);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.8) {
                loop {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    let b = match dtype {
                        FloatDtype::F32 => (v as f32).to_bits() as u64,
                        _ => v.to_bits(),
                    };
                    if value(b, dtype).abs() < 1.0 {
                        break b;
                    }
                }
            } else {
                // arbitrary magnitude below one, subnormals included
                let mag = rng.random_range(0..one);
                if rng.random() {
                    mag | sign
                } else {
                    mag
                }
            }
        })
        .collect()
}

#[test]
fn criterion_01_elf_error_bound() {
    let _g = serial();
    let t0 = Instant::now();
    let all16: Vec<u64> = (0..=u16::MAX as u64).collect();
    let (v16, m16) = elf_roundtrip_violations(&all16, FloatDtype::F16);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10_000_000;
    let (v32, m32) = elf_roundtrip_violations(&random_in_range(&mut rng, FloatDtype::F32, n), FloatDtype::F32);
    let (v64, m64) = elf_roundtrip_violations(&random_in_range(&mut rng, FloatDtype::F64, n), FloatDtype::F64);
    let secs = t0.elapsed().as_secs_f64();
    let pass = v16 + v32 + v64 == 0 && secs < 60.0;
    verdict(
        1,
        "ELF error bound",
        pass,
        format!("violations f16={v16} f32={v32} f64={v64}; max error f16={m16:e} f32={m32:e} f64={m64:e}; {secs:.1}s"),
    );
}

#[test]
fn criterion_02_elf_size_law() {
    let _g = serial();
    let n = 1_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params: Vec<f32> = (0..n)
        .map(|_| loop {
            let v = rng.random_range(-1.0f32..1.0);
            if v.abs() < 1.0 {
                break v;
            }
        })
        .collect();
    let block = ElfBlock::compress(&params).unwrap();
    let packed = block.code_bytes().len();
    let expect = (24 * n).div_ceil(8);

    let spec = SynthSpec {
        models: 1,
        seed: 2,
        layers: 4,
        params_per_layer: [250_000, 250_000],
        dtype_mix: DtypeMix::only(Dtype::F32),
        in_range_fraction: 1.0,
        ..Default::default()
    };
    let corpus = SynthCorpus::new(spec).unwrap();
    let opts = CompressOptions { stages: Stages::parse("elf").unwrap(), workers: 1, ..Default::default() };
    let (bytes, stats) = compress_corpus(&corpus, &opts).unwrap();
    let all_elf = ElvesArchive::parse(&bytes).unwrap().layer_tags().all(|(_, _, t)| t == MethodTag::Elf);
    let cr = stats.compression_ratio();
    let rel = (cr / (32.0 / 24.0) - 1.0).abs();
    let pass = packed == expect && block.exceptions().is_empty() && all_elf && rel <= 0.01;
    verdict(
        2,
        "ELF size law",
        pass,
        format!("packed {packed} bytes (expected {expect}); ELF-only CR {cr:.5}, {:.3}% from 4/3", rel * 100.0),
    );
}

fn random_float_bits(rng: &mut ChaCha8Rng, dtype: FloatDtype) -> u64 {
    let w = width(dtype);
    let mask = if w == 8 { u64::MAX } else { (1u64 << (8 * w)) - 1 };
    let specials: [u64; 6] = match dtype {
        FloatDtype::F16 => [0, 0x8000, 0x3c00, 0xbc00, 0x7e00, 0x7c00],
        FloatDtype::F32 => [0, 0x8000_0000, 0x3f80_0000, 0xbf80_0000, 0x7fc0_0000, 0x7f80_0000],
        FloatDtype::F64 => [0, 1 << 63, 0x3ff0 << 48, 0xbff0 << 48, 0x7ff8 << 48, 0x7ff0 << 48],
    };
    match rng.random_range(0..10) {
        0 => specials[rng.random_range(0..specials.len())],
        1..=3 => rng.next_u64() & mask,
        _ => {
            let v: f64 = rng.random_range(-1.0..1.0);
            match dtype {
                FloatDtype::F16 => half::f16::from_f64(v).to_bits() as u64,
                FloatDtype::F32 => (v as f32).to_bits() as u64,
                FloatDtype::F64 => v.to_bits(),
            }
        }
    }
}

#[test]
fn criterion_03_elf_idempotence() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    let blocks = 100_000;
    for _ in 0..blocks {
        let dtype = FloatDtype::ALL[rng.random_range(0..3)];
        let n = rng.random_range(0..=64);
        let bits: Vec<u64> = (0..n).map(|_| random_float_bits(&mut rng, dtype)).collect();
        let w = width(dtype);
        let first = ElfBlock::compress_bytes(&le_bytes(&bits, w), dtype).unwrap();
        let restored = first.decompress_to_bytes().unwrap();
        let second = ElfBlock::compress_bytes(&restored, dtype).unwrap();
        if first.to_bytes() != second.to_bytes() {
            failures += 1;
        }
    }
    verdict(3, "ELF idempotence", failures == 0, format!("{failures} of {blocks} blocks differ"));
}

#[test]
fn criterion_04_de_lossless() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let streams = 100_000;
    let mut failures = 0;
    let mut long = 0;
    for s in 0..streams {
        let dtype = if rng.random() { FloatDtype::F32 } else { FloatDtype::F64 };
        let w = width(dtype);
        let pool: Vec<u64> = match dtype {
            FloatDtype::F32 => vec![0, 0x8000_0000, 0x7fc0_0000, 0x7fc0_0001, 0xffc0_0000, 0x7f80_0000, 0x3f00_0000],
            _ => vec![0, 1 << 63, 0x7ff8 << 48, (0x7ff8 << 48) | 1, 0xfff8 << 48, 0x7ff0 << 48, 0x3fe0 << 48],
        };
        let bits: Vec<u64> = if s % 2000 == 0 {
            // long-distance repeats across a large stream
            long += 1;
            let n = 150_000;
            let mut v: Vec<u64> = (0..n).map(|_| rng.next_u64() >> (64 - 8 * w as u32)).collect();
            for _ in 0..20 {
                let i = rng.random_range(1..n);
                let j = rng.random_range(0..i);
                v[i] = v[j];
            }
            v[n - 1] = v[0];
            v
        } else {
            let n = rng.random_range(0..300);
            (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        pool[rng.random_range(0..pool.len())]
                    } else {
                        rng.next_u64() >> (64 - 8 * w as u32)
                    }
                })
                .collect()
        };
        let stream = DeStream::compress_bytes(&le_bytes(&bits, w), dtype).unwrap();
        let parsed = DeStream::from_bytes(&stream.to_bytes(), dtype).unwrap();
        if parsed.decompress_bits().unwrap() != bits {
            failures += 1;
        }
    }
    verdict(
        4,
        "DE losslessness",
        failures == 0,
        format!("{failures} of {streams} streams differ ({long} long-distance streams)"),
    );
}

#[test]
fn criterion_05_de_golden_vector() {
    let _g = serial();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/de_long_distance.bin.gz");
    let mut golden = Vec::new();
    flate2::read::GzDecoder::new(std::fs::File::open(path).unwrap()).read_to_end(&mut golden).unwrap();

    let mut params: Vec<f32> = (0..1_000_000u32).map(|i| f32::from_bits(0x3C00_0000 + i)).collect();
    params.push(params[0]);
    let stream = DeStream::compress(&params).unwrap();
    let bytes_equal = stream.to_bytes() == golden;

    let mut r = BitReader::with_bit_len(stream.bitmap_bytes(), stream.bitmap_bit_len()).unwrap();
    let mut zeros = true;
    for _ in 0..1_000_000 {
        zeros &= !r.read_bit().unwrap();
    }
    let flag = r.read_bits(1).unwrap();
    let l = r.read_bits(5).unwrap();
    let d = r.read_bits(l as u32).unwrap();
    let pass = bytes_equal && zeros && flag == 1 && l == 20 && d == 1_000_000 && r.remaining() == 0;
    verdict(
        5,
        "DE long-distance golden vector",
        pass,
        format!("golden bytes equal: {bytes_equal}; last record flag={flag} L={l} D={d}"),
    );
}

#[test]
fn criterion_06_de_high_duplication_saving() {
    let _g = serial();
    let spec = SynthSpec {
        models: 1,
        seed: 6,
        layers: 1,
        params_per_layer: [1_000_000, 1_000_000],
        dtype_mix: DtypeMix::only(Dtype::F32),
        in_range_fraction: 1.0,
        param_dup_ratio: 0.995,
        dup_distance_mean: 256.0,
        ..Default::default()
    };
    let corpus = SynthCorpus::new(spec).unwrap();
    let model = corpus.generate(0).unwrap();
    let layer = model.tensor_bytes(&model.tensors()[0]);
    let report = DeSavingReport::from_stream(&DeStream::compress_bytes(layer, FloatDtype::F32).unwrap());
    let dup = report.duplicate_count as f64 / report.param_count as f64;

    let (bytes, _) = compress_corpus(&corpus, &CompressOptions { workers: 1, ..Default::default() }).unwrap();
    let tag = ElvesArchive::parse(&bytes).unwrap().layer_tags().next().unwrap().2;
    let pass = report.practical_saving_ratio >= 0.30 && dup >= 0.99 && tag == MethodTag::De;
    verdict(
        6,
        "DE high-duplication saving",
        pass,
        format!(
            "duplicates {:.3}%, practical saving {:.2}%, theoretical {:.2}%, pipeline tag {tag}",
            dup * 100.0,
            report.practical_saving_ratio * 100.0,
            report.theoretical_saving_ratio * 100.0
        ),
    );
}

#[test]
fn criterion_07_dedup_correctness() {
    let _g = serial();
    let spec = SynthSpec {
        models: 1,
        seed: 7,
        layers: 8,
        params_per_layer: [1000, 30_000],
        dtype_mix: DtypeMix { f16: 1.0, f32: 3.0, f64: 1.0, i64: 1.0, u8: 1.0, bool: 1.0 },
        in_range_fraction: 0.99,
        ..Default::default()
    };
    let base = SynthCorpus::new(spec).unwrap().generate(0).unwrap();
    let k = 5;
    let corpus: Vec<ModelFile> =
        (0..k).map(|i| ModelFile::from_bytes(format!("copy-{i}"), base.as_bytes().to_vec()).unwrap()).collect();

    let table = layer_dup_report(&corpus);
    let expect_pct = 100.0 * (k - 1) as f64 / k as f64;
    let count_pct = table.overall.dup_count_pct();
    let bytes_pct = table.overall.dup_bytes_pct();

    let opts =
        CompressOptions { stages: Stages::parse("hd").unwrap(), backend: STORE, workers: 2, ..Default::default() };
    let (bytes, stats) = compress_corpus(&corpus, &opts).unwrap();
    let ar = ElvesArchive::parse(&bytes).unwrap();
    let stored: u64 = ar.index.dup_store.iter().map(|d| d.len).sum();
    let data_bytes = base.data_region().len() as u64;
    let layer_sections: Vec<_> =
        ar.sections.iter().filter(|s| !matches!(s.kind, SectionKind::Header | SectionKind::Index)).collect();
    let payload: u64 = layer_sections.iter().map(|s| s.stored_len() as u64).sum();
    let framing: u64 = layer_sections.iter().map(|s| s.framed_len as u64).sum::<u64>() - payload;
    let payload_ok = stored == data_bytes && payload == data_bytes && stats.archive_bytes < 2 * base.len();
    let back = decompress_corpus(&bytes, 2).unwrap();
    let exact = back.iter().zip(&corpus).all(|(a, b)| a.as_bytes() == b.as_bytes());
    let pass = (count_pct - expect_pct).abs() <= 0.1 && (bytes_pct - expect_pct).abs() <= 0.1 && payload_ok && exact;
    verdict(
        7,
        "dedup correctness",
        pass,
        format!(
            "k={k}: dup layers {count_pct:.3}% / bytes {bytes_pct:.3}% (expected {expect_pct:.3}%); \
             stored {stored} of {data_bytes} data bytes, layer payload {payload} plus {framing} framing bytes in {} sections; \
             archive {} bytes for a {} byte model; byte-exact: {exact}",
            layer_sections.len(),
            stats.archive_bytes,
            base.len()
        ),
    );
}

fn mixed_corpus() -> Vec<ModelFile> {
    let mix = DtypeMix { f16: 1.0, f32: 4.0, f64: 1.0, i64: 0.5, u8: 0.5, bool: 0.5 };
    let low = SynthSpec {
        models: 50,
        seed: 81,
        layers: 6,
        params_per_layer: [2000, 20_000],
        dtype_mix: mix.clone(),
        in_range_fraction: 0.97,
        param_dup_ratio: 0.05,
        layer_dup_fraction: 0.3,
        ..Default::default()
    };
    let high =
        SynthSpec { seed: 82, param_dup_ratio: 0.95, dup_distance_mean: 16.0, layer_dup_fraction: 0.1, ..low.clone() };
    let mut out = Vec::new();
    for (tag, spec) in [("low", low), ("high", high)] {
        let c = SynthCorpus::new(spec).unwrap();
        for i in 0..c.spec().models {
            let m = c.generate(i).unwrap();
            out.push(ModelFile::from_bytes(format!("{tag}-{i:03}"), m.into_bytes()).unwrap());
        }
    }
    out
}

#[test]
fn criterion_08_end_to_end() {
    let _g = serial();
    let t0 = Instant::now();
    let corpus = mixed_corpus();
    let opts = |workers| CompressOptions { block_params: 1 << 16, workers, ..Default::default() };
    let (one, stats) = compress_corpus(&corpus, &opts(1)).unwrap();
    let (eight, _) = compress_corpus(&corpus, &opts(8)).unwrap();
    let identical = one == eight;

    let ar = ElvesArchive::parse(&one).unwrap();
    let tags: BTreeMap<(String, String), MethodTag> =
        ar.layer_tags().map(|(m, l, t)| ((m.to_owned(), l.to_owned()), t)).collect();
    let back = decompress_corpus(&eight, 8).unwrap();
    let mut non_float = 0;
    let mut violations = 0;
    let mut inexact_lossless = 0;
    for (orig, rest) in corpus.iter().zip(&back) {
        let r = error_report(orig, rest).unwrap();
        non_float += r.non_float_mismatches();
        violations += r.violations().count();
        for l in &r.layers {
            let tag = tags[&(r.model_id.clone(), l.name.clone())];
            if tag != MethodTag::Elf && !l.is_exact() {
                inexact_lossless += 1;
            }
        }
    }
    let counts = stats.tag_counts();
    let all_tags =
        [MethodTag::DedupRef, MethodTag::Elf, MethodTag::De, MethodTag::Raw].iter().all(|t| counts.contains_key(t));
    let secs = t0.elapsed().as_secs_f64();
    let pass = identical
        && back.len() == 100
        && non_float == 0
        && violations == 0
        && inexact_lossless == 0
        && all_tags
        && secs < 300.0;
    verdict(
        8,
        "end-to-end pipeline",
        pass,
        format!(
            "{} models, CR {:.3}, tags {counts:?}; 1 vs 8 workers identical: {identical}; \
             non-float mismatches {non_float}, bound violations {violations}, inexact lossless layers {inexact_lossless}; {secs:.1}s",
            back.len(),
            stats.compression_ratio()
        ),
    );
}

fn uleb_len(mut v: u64) -> u64 {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

/// Serialized ELF size of one block, from the field definitions.
fn elf_size_oracle(bits: &[u64], dtype: FloatDtype) -> u64 {
    let code_bits = match dtype {
        FloatDtype::F16 => 11,
        FloatDtype::F32 => 24,
        FloatDtype::F64 => 53,
    };
    let exc: Vec<usize> =
        (0..bits.len()).filter(|&i| value(bits[i], dtype).is_nan() || value(bits[i], dtype).abs() >= 1.0).collect();
    let deltas: u64 =
        exc.iter().enumerate().map(|(k, &p)| uleb_len((if k == 0 { p } else { p - exc[k - 1] }) as u64)).sum();
    16 + deltas + (exc.len() * width(dtype)) as u64 + ((bits.len() - exc.len()) as u64 * code_bits).div_ceil(8)
}

/// Serialized DE size by scanning back for the most recent equal pattern.
fn de_size_oracle(bits: &[u64], dtype: FloatDtype) -> u64 {
    let mut flag_bits = 0u64;
    let mut distinct = 0u64;
    for i in 0..bits.len() {
        match (0..i).rev().find(|&j| bits[j] == bits[i]) {
            Some(j) => flag_bits += 1 + 5 + (64 - ((i - j) as u64).leading_zeros()) as u64,
            None => {
                flag_bits += 1;
                distinct += 1;
            }
        }
    }
    12 + flag_bits.div_ceil(8) + distinct * width(dtype) as u64
}

fn three_way_min(de: u64, elf: u64, raw: u64) -> MethodTag {
    let mut c = [(elf, 0, MethodTag::Elf), (de, 1, MethodTag::De), (raw, 2, MethodTag::Raw)];
    c.sort();
    c[0].2
}

fn float_layer(name: &str, dtype: FloatDtype, bits: &[u64]) -> (String, Dtype, Vec<u8>) {
    let d = match dtype {
        FloatDtype::F16 => Dtype::F16,
        FloatDtype::F32 => Dtype::F32,
        FloatDtype::F64 => Dtype::F64,
    };
    (name.to_owned(), d, le_bytes(bits, width(dtype)))
}

#[test]
fn criterion_09_selection_rule() {
    let _g = serial();
    let opts = CompressOptions {
        stages: Stages::parse("de,elf").unwrap(),
        workers: 1,
        block_params: 1 << 16,
        ..Default::default()
    };
    let n = 10_000;
    let constructed = [
        // one repeated value: DE needs about 7 bits per parameter, ELF 24
        ("repetitive", vec![0x3e80_0000u64; n], MethodTag::De),
        // distinct in-range values: DE needs 33 bits, ELF 24
        ("distinct", (0..n as u64).map(|i| 0x3e00_0000 + i * 37).collect(), MethodTag::Elf),
        // distinct values above one: both codecs exceed the raw 32 bits
        ("large", (0..n as u64).map(|i| 0x4100_0000 + i * 37).collect(), MethodTag::Raw),
    ];
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut check = |id: &str, layers: Vec<(String, Dtype, Vec<u8>)>, expected: Option<MethodTag>| {
        let mut b = ModelBuilder::new(id);
        let mut streams: BTreeMap<u8, (FloatDtype, Vec<u64>)> = BTreeMap::new();
        for (name, dtype, bytes) in layers {
            let f = dtype.float().unwrap();
            let key = width(f) as u8;
            streams.entry(key).or_insert((f, Vec::new())).1.extend(read_bits(&bytes, width(f)));
            b = b.tensor(name, dtype, vec![(bytes.len() / width(f)) as u64], bytes);
        }
        let model = b.build().unwrap();
        let (de, elf, raw) = streams.values().fold((0, 0, 0), |(d, e, r), (f, bits)| {
            (d + de_size_oracle(bits, *f), e + elf_size_oracle(bits, *f), r + (bits.len() * width(*f)) as u64)
        });
        let oracle = three_way_min(de, elf, raw);
        let (bytes, _) = compress_corpus(&vec![model], &opts).unwrap();
        let sel = ElvesArchive::parse(&bytes).unwrap().index.models[0].selection.unwrap();
        checked += 1;
        let ok = sel.de == Some(de)
            && sel.elf == Some(elf)
            && sel.raw == raw
            && sel.tag == oracle
            && select_stage2(Some(de), Some(elf), raw) == oracle
            && expected.is_none_or(|e| e == oracle);
        if !ok {
            failures.push(format!("{id}: oracle de={de} elf={elf} raw={raw} -> {oracle}, got {sel:?}"));
        }
    };
    for (name, bits, expected) in &constructed {
        check(name, vec![float_layer("w", FloatDtype::F32, bits)], Some(*expected));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..300 {
        let layers = (0..rng.random_range(1..4))
            .map(|l| {
                let dtype = if rng.random_bool(0.7) { FloatDtype::F32 } else { FloatDtype::F64 };
                let n = rng.random_range(1..1500);
                let dup = rng.random_range(0.0..1.0);
                let mut bits: Vec<u64> = Vec::with_capacity(n);
                for k in 0..n {
                    if k > 0 && rng.random_bool(dup) {
                        let d = rng.random_range(1..=k.min(64));
                        bits.push(bits[k - d]);
                    } else {
                        bits.push(random_float_bits(&mut rng, dtype));
                    }
                }
                float_layer(&format!("l{l}"), dtype, &bits)
            })
            .collect();
        check(&format!("random-{i}"), layers, None);
    }
    verdict(
        9,
        "selection rule",
        failures.is_empty(),
        format!("{checked} models checked against size oracles, {} mismatches {:?}", failures.len(), failures.first()),
    );
}

#[test]
fn criterion_10_throughput_scaling() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        models: 64,
        seed: 10,
        layers: 8,
        params_per_layer: [450_000, 550_000],
        dtype_mix: DtypeMix { f16: 1.0, f32: 6.0, f64: 1.0, i64: 0.3, u8: 0.2, bool: 0.1 },
        in_range_fraction: 0.99,
        param_dup_ratio: 0.2,
        layer_dup_fraction: 0.2,
        ..Default::default()
    };
    let paths = SynthCorpus::new(spec).unwrap().write_to_dir(&dir.path().join("corpus")).unwrap();
    let input_bytes: u64 = paths.iter().map(|p| std::fs::metadata(p).unwrap().len()).sum();
    assert!(input_bytes >= 1 << 30, "corpus is only {input_bytes} bytes");
    let corpus = PathCorpus::new(
        paths.iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p.clone())).collect(),
    );

    let rate = |workers: usize| {
        let out = std::fs::File::create(dir.path().join(format!("out-{workers}.elvs"))).unwrap();
        let t0 = Instant::now();
        let mut w = BufWriter::new(out);
        compress_to_writer(&corpus, &CompressOptions { workers, ..Default::default() }, &mut w).unwrap();
        w.into_inner().unwrap().sync_all().unwrap();
        input_bytes as f64 / 1e6 / t0.elapsed().as_secs_f64()
    };
    let single = rate(1);
    let eight = rate(8);
    let ratio = eight / single;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    verdict(
        10,
        "throughput scaling",
        ratio >= 4.0,
        format!(
            "{:.2} GB corpus: 1 worker {single:.1} MB/s, 8 workers {eight:.1} MB/s, speedup {ratio:.2}x \
             (need 4x; {cores} core(s) available)",
            input_bytes as f64 / 1e9
        ),
    );
}

// Independent analyzer oracles.

fn dtype_name(d: &Dtype) -> String {
    d.to_string()
}

type Rows = BTreeMap<String, [u64; 4]>;

/// (dtype, unit bytes, comparison key)
type Unit = (String, Vec<u8>, Vec<u8>);

/// (offset, length) pairs
type Extents = Vec<(usize, usize)>;

fn rows_of(t: &DupTable) -> (Rows, [u64; 4]) {
    let rows = t.rows.iter().map(|r| (r.dtype.clone(), [r.count, r.dup_count, r.total_bytes, r.dup_bytes])).collect();
    let o = &t.overall;
    (rows, [o.count, o.dup_count, o.total_bytes, o.dup_bytes])
}

/// Counts units whose key was seen earlier in corpus order, grouped by dtype.
fn seen_before_oracle(units: Vec<Unit>) -> (Rows, [u64; 4]) {
    let mut seen: Vec<Vec<u8>> = Vec::new();
    let mut rows = Rows::new();
    let mut overall = [0u64; 4];
    for (dtype, bytes, key) in units {
        let dup = seen.contains(&key);
        if !dup {
            seen.push(key);
        }
        let len = bytes.len() as u64;
        for r in [rows.entry(dtype).or_default(), &mut overall] {
            r[0] += 1;
            r[2] += len;
            if dup {
                r[1] += 1;
                r[3] += len;
            }
        }
    }
    (rows, overall)
}

fn oracle_splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const REFERENCE_MASKS: [u64; 26] = [
    0,
    0,
    0,
    0,
    0,
    0x0000000001804110,
    0x0000000001803110,
    0x0000000018035100,
    0x0000001800035300,
    0x0000019000353000,
    0x0000590003530000,
    0x0000d90003530000,
    0x0000d90103530000,
    0x0000d90303530000,
    0x0000d90313530000,
    0x0000d90f03530000,
    0x0000d90303537000,
    0x0000d90703537000,
    0x0000d90707537000,
    0x0000d91707537000,
    0x0000d91747537000,
    0x0000d91767537000,
    0x0000d93767537000,
    0x0000d93777537000,
    0x0000d93777577000,
    0x0000db3777577000,
];

/// FastCDC boundaries with the gear hash recomputed from scratch at every
/// candidate position.
fn cdc_oracle(bytes: &[u8], p: CdcParams) -> Extents {
    let mut state = 0x6368756E6Bu64;
    let gear: Vec<u64> = (0..256).map(|_| oracle_splitmix(&mut state)).collect();
    let bits = (p.avg as f64).log2().round() as usize;
    let mask_s = REFERENCE_MASKS[(bits + 2).clamp(5, 25)];
    let mask_l = REFERENCE_MASKS[bits.saturating_sub(2).clamp(5, 25)];
    let mut out = Vec::new();
    let mut start = 0;
    while start < bytes.len() {
        let rest = &bytes[start..];
        let mut len = rest.len();
        if rest.len() > p.min {
            let end = rest.len().min(p.max);
            len = end;
            for i in p.min..end {
                let mut h = 0u64;
                for j in p.min..=i {
                    if i - j < 64 {
                        h = h.wrapping_add(gear[rest[j] as usize] << (i - j));
                    }
                }
                let mask = if i < end.min(p.avg) { mask_s } else { mask_l };
                if h & mask == 0 {
                    len = i + 1;
                    break;
                }
            }
        }
        out.push((start, len));
        start += len;
    }
    out
}

fn random_corpus(rng: &mut ChaCha8Rng, id: usize) -> Vec<ModelFile> {
    let dtypes = [Dtype::F16, Dtype::F32, Dtype::F64, Dtype::I64, Dtype::U8, Dtype::Bool];
    let mut pool: Vec<(Dtype, Vec<u8>)> = Vec::new();
    (0..rng.random_range(1..=4))
        .map(|m| {
            let mut b = ModelBuilder::new(format!("c{id}-m{m}"));
            for l in 0..rng.random_range(1..=5) {
                let (dtype, bytes) = if !pool.is_empty() && rng.random_bool(0.25) {
                    pool[rng.random_range(0..pool.len())].clone()
                } else {
                    let dtype = dtypes[rng.random_range(0..dtypes.len())].clone();
                    let w = dtype.byte_width() as usize;
                    let n = rng.random_range(0..700);
                    let mut bytes = Vec::with_capacity(n * w);
                    let block = rng.random_range(1..80) * w;
                    for k in 0..n {
                        let elem: Vec<u8> = match dtype.float() {
                            Some(f) => {
                                let bits = if rng.random_bool(0.3) && k > 0 {
                                    read_bits(&bytes[(k - 1) * w..k * w], w)[0]
                                } else {
                                    random_float_bits(rng, f)
                                };
                                bits.to_le_bytes()[..w].to_vec()
                            }
                            None if dtype == Dtype::Bool => vec![rng.random_bool(0.5) as u8],
                            None => (0..w).map(|_| rng.random_range(0..4u8)).collect(),
                        };
                        bytes.extend(elem);
                    }
                    // repeat an earlier run so chunk-level duplicates exist inside layers
                    if bytes.len() > 2 * block && rng.random_bool(0.5) {
                        let src = bytes[..block].to_vec();
                        let at = bytes.len() - block;
                        bytes[at..].copy_from_slice(&src);
                    }
                    pool.push((dtype.clone(), bytes.clone()));
                    (dtype, bytes)
                };
                let n = bytes.len() as u64 / dtype.byte_width();
                b = b.tensor(format!("l{l}"), dtype, vec![n], bytes);
            }
            b.build().unwrap()
        })
        .collect()
}

#[test]
fn criterion_11_analyzer_oracles() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let corpora = 1000;
    let mut checks = 0u64;
    let mut failures: Vec<String> = Vec::new();
    let small_cdc = CdcParams { min: 16, avg: 64, max: 256 };
    for c in 0..corpora {
        let models = random_corpus(&mut rng, c);
        let mut fail = |what: &str| failures.push(format!("corpus {c}: {what}"));

        for m in &models {
            let stats = model_param_stats(m);
            let mut counts: BTreeMap<FloatDtype, [u64; 3]> = BTreeMap::new();
            let mut patterns: Vec<(u8, u64)> = Vec::new();
            for t in m.tensors() {
                let Some(f) = t.dtype.float() else { continue };
                let entry = counts.entry(f).or_default();
                for b in read_bits(m.tensor_bytes(t), width(f)) {
                    let v = value(b, f);
                    let bucket = if v > -1.0 && v <= 0.0 {
                        0
                    } else if v > 0.0 && v < 1.0 {
                        1
                    } else {
                        2
                    };
                    entry[bucket] += 1;
                    patterns.push((width(f) as u8, b));
                }
            }
            for (f, h) in &stats.per_dtype {
                if counts.get(f) != Some(&[h.non_positive, h.positive, h.out_of_range]) {
                    fail("histogram");
                }
                let sum = h.non_positive_fraction() + h.positive_fraction() + h.out_of_range_fraction();
                if h.total() > 0 && (sum - 1.0).abs() > 1e-12 {
                    fail("histogram fractions");
                }
            }
            if counts.len() != stats.per_dtype.len() {
                fail("histogram dtypes");
            }
            patterns.sort_unstable();
            let mut repeated = 0u64;
            let mut i = 0;
            while i < patterns.len() {
                let j = (i..patterns.len()).find(|&j| patterns[j] != patterns[i]).unwrap_or(patterns.len());
                if j - i >= 2 {
                    repeated += (j - i) as u64;
                }
                i = j;
            }
            let expect = if patterns.is_empty() { 0.0 } else { repeated as f64 / patterns.len() as f64 };
            if stats.duplication_ratio != expect {
                fail("duplication ratio");
            }
            checks += 2;
        }

        let layers: Vec<(String, usize, &[u8])> = models
            .iter()
            .flat_map(|m| {
                m.tensors().iter().map(move |t| {
                    let w = t.dtype.float().map_or(1, width);
                    (dtype_name(&t.dtype), w, m.tensor_bytes(t))
                })
            })
            .collect();
        let chunked = |split: &dyn Fn(&[u8]) -> Extents| -> Vec<Unit> {
            layers
                .iter()
                .flat_map(|(d, _, b)| {
                    split(b).into_iter().map(move |(o, l)| (d.clone(), b[o..o + l].to_vec(), b[o..o + l].to_vec()))
                })
                .collect()
        };
        let fsc = |size: usize| {
            move |b: &[u8]| -> Extents { (0..b.len()).step_by(size).map(|o| (o, size.min(b.len() - o))).collect() }
        };

        for size in [512usize, 64] {
            if rows_of(&chunk_dup_report(&models, Chunking::Fixed(size))) != seen_before_oracle(chunked(&fsc(size))) {
                fail(&format!("fsc {size}"));
            }
            checks += 1;
        }
        for p in [small_cdc, CdcParams::default()] {
            if rows_of(&chunk_dup_report(&models, Chunking::Cdc(p)))
                != seen_before_oracle(chunked(&|b| cdc_oracle(b, p)))
            {
                fail(&format!("cdc {p:?}"));
            }
            checks += 1;
        }
        for (g, stride) in [
            (Granularity::Layer, 32),
            (Granularity::Layer, 4),
            (Granularity::Fixed(512), 32),
            (Granularity::Fixed(64), 4),
        ] {
            let units: Vec<Unit> = layers
                .iter()
                .flat_map(|(d, w, b)| {
                    let extents = match g {
                        Granularity::Layer => vec![(0, b.len())],
                        Granularity::Fixed(s) => fsc(s)(b),
                    };
                    extents.into_iter().map(move |(o, l)| {
                        let unit = &b[o..o + l];
                        let sampled: Vec<u8> = (0..unit.len() / w)
                            .filter(|i| i % stride == 0)
                            .flat_map(|i| unit[i * w..(i + 1) * w].to_vec())
                            .collect();
                        (d.clone(), unit.to_vec(), sampled)
                    })
                })
                .collect();
            if rows_of(&similarity_report(&models, g, stride)) != seen_before_oracle(units) {
                fail(&format!("similarity {g:?} stride {stride}"));
            }
            checks += 1;
        }

        let dup = rows_of(&layer_dup_report(&models));
        let oracle = seen_before_oracle(layers.iter().map(|(d, _, b)| (d.clone(), b.to_vec(), b.to_vec())).collect());
        if dup != oracle {
            fail("layer dup");
        }
        checks += 1;
    }
    let distinct: HashSet<&str> = failures.iter().map(|f| f.split(": ").nth(1).unwrap_or("")).collect();
    verdict(
        11,
        "analyzer oracles",
        failures.is_empty(),
        format!("{corpora} corpora, {checks} report comparisons, {} mismatches {distinct:?}", failures.len()),
    );
}

#[test]
fn layer_diff_is_reported_per_layer() {
    // guards the tag-aware exactness check used by criterion 8
    let m = ModelBuilder::new("m").tensor("w", Dtype::F32, vec![1], 0.5f32.to_le_bytes().to_vec()).build().unwrap();
    let r = error_report(&m, &m).unwrap();
    assert!(matches!(r.layers[0].diff, LayerDiff::Float { exact_count: 1, .. }));
}
