mod corpus;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use elves_core::analyzer::{error_report, model_param_stats, ErrorReport};
use elves_core::archive::backend::backend_by_name;
use elves_core::archive::{
    ablation_run, compress_to_writer, decompress_each, ArchiveError, CompressOptions, ErrorClass, ModelSource, Stages,
};
use elves_core::chunk::{chunk_dup_report, similarity_report, CdcParams, Chunking, Granularity, SAMPLE_STRIDE};
use elves_core::de::DeSavingReport;
use elves_core::dedup::layer_dup_report;
use elves_core::elf::DEFAULT_BLOCK_PARAMS;
use elves_core::model::{ModelError, ModelFile};
use elves_core::report::{self, Format, Table};
use elves_core::synth::{SynthCorpus, SynthSpec};

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_CORRUPT: u8 = 4;
const EXIT_BACKEND: u8 = 5;
const EXIT_VERIFY: u8 = 6;

/// Compress collections of pre-trained model files.
#[derive(Debug, Parser)]
#[command(name = "elves", version)]
struct Cli {
    /// Worker threads [default: available cores]
    #[arg(long, short = 'j', global = true, env = "ELVES_WORKERS", value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compress model files or directories into one archive.
    Compress {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Restore every model of an archive into a directory.
    Decompress {
        archive: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print corpus statistics.
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Parameter value distribution and duplication ratio
        #[arg(long)]
        histogram: bool,
        /// Whole-layer duplication per dtype
        #[arg(long)]
        layer_dup: bool,
        /// Chunk duplication: `fsc:<bytes>` or `cdc`
        #[arg(long, value_parser = parse_chunking)]
        chunk_dup: Vec<Chunking>,
        /// Sampled similarity: `layer` or a chunk size in bytes
        #[arg(long, value_parser = parse_granularity)]
        similarity: Vec<Granularity>,
        #[arg(long, default_value_t = SAMPLE_STRIDE)]
        stride: usize,
        /// DE saving per model and float dtype
        #[arg(long)]
        de_saving: bool,
        #[command(flatten)]
        out: ReportArgs,
    },
    /// Compare two model trees layer by layer.
    Verify {
        original: PathBuf,
        restored: PathBuf,
        #[command(flatten)]
        out: ReportArgs,
    },
    /// Measure compression throughput, file I/O included.
    Bench {
        inputs: Vec<PathBuf>,
        /// Generate the corpus from a JSON spec instead of reading inputs
        #[arg(long)]
        synth: Option<PathBuf>,
        /// Worker counts to measure, e.g. `1,8` [default: --workers]
        #[arg(long, value_delimiter = ',')]
        compare: Vec<usize>,
        /// Also report the archive size under each stage combination
        #[arg(long)]
        ablation: bool,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        out: ReportArgs,
    },
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Comma-separated subset of hd,de,elf,final
    #[arg(long, default_value = "all", value_parser = |s: &str| Stages::parse(s).map_err(|e| e.to_string()))]
    stages: Stages,
    /// Final-stage backend: zstd or store
    #[arg(long, default_value = "zstd")]
    backend: String,
    /// ELF block size in parameters (power of two, at least 65536)
    #[arg(long, default_value_t = DEFAULT_BLOCK_PARAMS, value_parser = parse_block_size)]
    block_size: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_block_size(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if !v.is_power_of_two() || v < 1 << 16 {
        return Err(format!("{v} is not a power of two of at least 65536"));
    }
    Ok(v)
}

fn parse_chunking(s: &str) -> Result<Chunking, String> {
    match s.split_once(':') {
        _ if s == "cdc" => Ok(Chunking::Cdc(CdcParams::default())),
        Some(("fsc", n)) => match n.parse() {
            Ok(n) if n > 0 => Ok(Chunking::Fixed(n)),
            _ => Err(format!("bad chunk size `{n}`")),
        },
        _ => Err(format!("expected `fsc:<bytes>` or `cdc`, got `{s}`")),
    }
}

fn parse_granularity(s: &str) -> Result<Granularity, String> {
    if s == "layer" {
        return Ok(Granularity::Layer);
    }
    match s.parse() {
        Ok(n) if n > 0 => Ok(Granularity::Fixed(n)),
        _ => Err(format!("expected `layer` or a chunk size, got `{s}`")),
    }
}

enum Outcome {
    Ok,
    VerifyFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerifyFailed) => ExitCode::from(EXIT_VERIFY),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Invalid arguments or inputs that clap cannot check on its own.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if let Some(a) = cause.downcast_ref::<ArchiveError>() {
            return match a.class() {
                ErrorClass::Io => EXIT_IO,
                ErrorClass::Corruption => EXIT_CORRUPT,
                ErrorClass::UnsupportedBackend => EXIT_BACKEND,
                ErrorClass::Other => EXIT_OTHER,
            };
        }
        if cause.is::<std::io::Error>() || matches!(cause.downcast_ref::<ModelError>(), Some(ModelError::Io(_))) {
            return EXIT_IO;
        }
        if cause.is::<walkdir::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_OTHER
}

fn run(cli: Cli) -> Result<Outcome> {
    let workers =
        cli.workers.map(|w| w as usize).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match cli.command {
        Command::Compress { inputs, output, pipeline } => {
            let corpus = corpus::discover(&inputs)?;
            let opts = pipeline.options(workers)?;
            let stats = write_atomic(&output, |w| Ok(compress_to_writer(&corpus, &opts, w)?))?;
            println!(
                "{} models, {} -> {} bytes, ratio {:.4}",
                stats.models.len(),
                stats.original_bytes,
                stats.archive_bytes,
                stats.compression_ratio()
            );
            for (tag, n) in stats.tag_counts() {
                println!("  {tag}: {n} layers");
            }
        }
        Command::Decompress { archive, output } => {
            let n = decompress_dir(&archive, &output, workers)?;
            println!("{n} models restored to {}", output.display());
        }
        Command::Analyze { inputs, mut histogram, mut layer_dup, chunk_dup, similarity, stride, de_saving, out } => {
            if !(histogram || layer_dup || de_saving) && chunk_dup.is_empty() && similarity.is_empty() {
                histogram = true;
                layer_dup = true;
            }
            if stride == 0 {
                return Err(usage("--stride must be positive"));
            }
            let corpus = corpus::discover(&inputs)?;
            let models: Vec<ModelFile> =
                (0..corpus.len()).map(|i| corpus.load(i).map(|m| m.into_owned())).collect::<Result<_, _>>()?;
            let mut tables = Vec::new();
            if histogram {
                let stats: Vec<_> = models.iter().map(|m| (m.model_id().to_owned(), model_param_stats(m))).collect();
                tables.push(report::param_stats(&stats));
            }
            if layer_dup {
                tables.push(report::dup_table("layer duplication", &layer_dup_report(&models)));
            }
            for c in &chunk_dup {
                tables.push(report::dup_table(
                    &format!("chunk duplication {}", c.label()),
                    &chunk_dup_report(&models, *c),
                ));
            }
            for g in &similarity {
                let t = similarity_report(&models, *g, stride);
                tables.push(report::dup_table(&format!("similarity {} stride {stride}", g.label()), &t));
            }
            if de_saving {
                tables.push(de_saving_table(&models)?);
            }
            emit(&tables, &out)?;
        }
        Command::Verify { original, restored, out } => return verify(&original, &restored, &out),
        Command::Bench { inputs, synth, compare, ablation, pipeline, out } => {
            let opts = pipeline.options(workers)?;
            let tables = bench(&inputs, synth.as_deref(), &compare, ablation, &opts)?;
            emit(&tables, &out)?;
        }
    }
    Ok(Outcome::Ok)
}

impl PipelineArgs {
    fn options(&self, workers: usize) -> Result<CompressOptions> {
        Ok(CompressOptions {
            stages: self.stages,
            backend: backend_by_name(&self.backend)?.id(),
            block_params: self.block_size,
            workers,
        })
    }
}

/// Writes through a temporary file next to `path` and renames it into place.
fn write_atomic<T>(path: &Path, f: impl FnOnce(&mut BufWriter<&File>) -> Result<T>) -> Result<T> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    let value = {
        let mut w = BufWriter::new(tmp.as_file());
        let v = f(&mut w)?;
        w.flush()?;
        v
    };
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error).with_context(|| format!("writing {}", path.display()))?;
    Ok(value)
}

fn decompress_dir(archive: &Path, output: &Path, workers: usize) -> Result<usize> {
    let bytes = fs::read(archive).with_context(|| format!("reading {}", archive.display()))?;
    let mut n = 0;
    decompress_each(&bytes, workers, |m| {
        let path = corpus::output_path(output, m.model_id()).ok_or_else(|| ArchiveError::Corrupt {
            context: format!("model `{}`", m.model_id()),
            reason: "model id is not a relative path".into(),
        })?;
        write_atomic(&path, |w| Ok(w.write_all(m.as_bytes())?)).map_err(|e| match e.downcast::<std::io::Error>() {
            Ok(io) => ArchiveError::Io(io),
            Err(e) => ArchiveError::Io(std::io::Error::other(format!("{e:#}"))),
        })?;
        n += 1;
        Ok(())
    })?;
    Ok(n)
}

fn emit(tables: &[Table], args: &ReportArgs) -> Result<()> {
    let text = report::render(tables, args.format);
    match &args.out {
        Some(path) => write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn de_saving_table(models: &[ModelFile]) -> Result<Table> {
    use elves_core::de::DeStream;
    use elves_core::float::FloatDtype;
    use elves_core::model::flatten_float_layers;

    let mut t =
        Table::new("de saving", &["model", "dtype", "params", "duplicates", "theoretical_saving", "practical_saving"]);
    for m in models {
        for s in flatten_float_layers(m).into_iter().filter(|s| s.dtype != FloatDtype::F16) {
            let stream =
                DeStream::compress_bytes(&s.data, s.dtype).with_context(|| format!("model `{}`", m.model_id()))?;
            let r = DeSavingReport::from_stream(&stream);
            t.push(vec![
                m.model_id().to_owned(),
                s.dtype.name().to_owned(),
                r.param_count.to_string(),
                r.duplicate_count.to_string(),
                format!("{:.4}", r.theoretical_saving_ratio),
                format!("{:.4}", r.practical_saving_ratio),
            ]);
        }
    }
    Ok(t)
}

fn verify(original: &Path, restored: &Path, out: &ReportArgs) -> Result<Outcome> {
    let a = corpus::discover(&[original.to_path_buf()])?;
    let b = corpus::discover(&[restored.to_path_buf()])?;
    let ids_a: Vec<&str> = a.entries().iter().map(|(id, _)| id.as_str()).collect();
    let ids_b: Vec<&str> = b.entries().iter().map(|(id, _)| id.as_str()).collect();
    let mut failed = false;
    for id in ids_a.iter().filter(|id| !ids_b.contains(id)) {
        eprintln!("missing from {}: {id}", restored.display());
        failed = true;
    }
    for id in ids_b.iter().filter(|id| !ids_a.contains(id)) {
        eprintln!("unexpected in {}: {id}", restored.display());
        failed = true;
    }
    let mut reports: Vec<ErrorReport> = Vec::new();
    for (i, id) in ids_a.iter().enumerate() {
        let Some(j) = ids_b.iter().position(|x| x == id) else { continue };
        let (ma, mb) = (a.load(i)?, b.load(j)?);
        match error_report(&ma, &mb) {
            Ok(r) => reports.push(r),
            Err(e) => {
                eprintln!("{e}");
                failed = true;
            }
        }
    }
    let violations: usize = reports.iter().map(|r| r.violations().count()).sum();
    emit(&[report::error_report(&reports)], out)?;
    eprintln!("{} models compared, {violations} layers out of bounds", reports.len());
    if failed || violations > 0 {
        return Ok(Outcome::VerifyFailed);
    }
    Ok(Outcome::Ok)
}

fn bench(
    inputs: &[PathBuf],
    synth: Option<&Path>,
    compare: &[usize],
    ablation: bool,
    opts: &CompressOptions,
) -> Result<Vec<Table>> {
    let scratch = tempfile::tempdir()?;
    let corpus = match synth {
        Some(spec_path) => {
            if !inputs.is_empty() {
                return Err(usage("--synth and input paths are mutually exclusive"));
            }
            let spec = SynthSpec::from_json(&fs::read(spec_path)?)
                .map_err(|e| usage(format!("parsing {}: {e}", spec_path.display())))?;
            let dir = scratch.path().join("corpus");
            SynthCorpus::new(spec).map_err(usage)?.write_to_dir(&dir)?;
            corpus::discover(&[dir])?
        }
        None if inputs.is_empty() => return Err(usage("give input paths or --synth")),
        None => corpus::discover(inputs)?,
    };

    let counts = if compare.is_empty() { vec![opts.workers] } else { compare.to_vec() };
    if counts.contains(&0) {
        return Err(usage("worker counts must be at least 1"));
    }
    let mut table = Table::new(
        "throughput",
        &[
            "workers",
            "input_bytes",
            "archive_bytes",
            "cr",
            "compress_s",
            "compress_mb_s",
            "decompress_s",
            "decompress_mb_s",
        ],
    );
    let archive = scratch.path().join("bench.elvs");
    for &workers in &counts {
        let run = CompressOptions { workers, ..opts.clone() };
        let t0 = Instant::now();
        let stats = write_atomic(&archive, |w| Ok(compress_to_writer(&corpus, &run, w)?))?;
        let c = t0.elapsed().as_secs_f64();
        let restore_dir = scratch.path().join(format!("restored-{workers}"));
        let t1 = Instant::now();
        decompress_dir(&archive, &restore_dir, workers)?;
        let d = t1.elapsed().as_secs_f64();
        fs::remove_dir_all(&restore_dir)?;
        let mb = stats.original_bytes as f64 / 1e6;
        table.push(vec![
            workers.to_string(),
            stats.original_bytes.to_string(),
            stats.archive_bytes.to_string(),
            format!("{:.4}", stats.compression_ratio()),
            format!("{c:.3}"),
            format!("{:.2}", mb / c),
            format!("{d:.3}"),
            format!("{:.2}", mb / d),
        ]);
    }
    let mut tables = vec![table];
    if ablation {
        let configs = ["hd", "hd,de", "hd,elf", "hd,de,elf", "hd,de,elf,final"];
        let rows =
            configs.iter().map(|s| Ok(ablation_run(&corpus, Stages::parse(s)?, opts)?)).collect::<Result<Vec<_>>>()?;
        tables.push(report::ablation(&rows));
    }
    Ok(tables)
}
