//! Command-line interface.

pub mod config;

use crate::codec::container::{read_stream, write_stream, Mode, TimesMode};
use crate::codec::pipeline::{compress, decompress, CompressOptions};
use crate::codec::CodecError;
use crate::data::{gen_synthetic, ingest_csv, write_frames, SequenceDataset, SyntheticKind};
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::model::{train, IterationLog, Model, ObsKind};
use crate::rd::{rd_sweep, sequence_seed, RdRow};
use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_MODEL_MISMATCH: i32 = 3;
pub const EXIT_SELFTEST: i32 = 4;

const EXIT_HELP: &str = "Exit codes:
  0  success
  1  usage, configuration or input data error
  2  file I/O error or damaged container
  3  container was written with a different model
  4  selftest failure";

#[derive(Debug, Parser)]
#[command(name = "ctsq", version, about = "Continuous-time sequence compression", after_help = EXIT_HELP)]
pub struct Cli {
    /// TOML file with [model], [train] and [codec] sections
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of every random stream
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as CSV
    Gen(GenArgs),
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Compress every sequence of a CSV dataset
    Compress(CompressArgs),
    /// Decode a compressed file to CSV
    Decompress(DecompressArgs),
    /// Rate-distortion sweep over quantizer precisions
    RdSweep(SweepArgs),
    /// Run the built-in invariant checks
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// sinusoid-mix, bounce-2d or piecewise-erratic
    #[arg(long, default_value = "sinusoid-mix")]
    pub kind: SyntheticKind,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Frames per sequence (default: from the config)
    #[arg(long)]
    pub frames: Option<usize>,
    /// Channels per frame (default: from the config)
    #[arg(long)]
    pub channels: Option<usize>,
    /// Scale each channel to integers in 0..=255
    #[arg(long)]
    pub bytes: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration CSV log (default: next to the checkpoint)
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub lambda_frac: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Keep knots at every frame (fixed-grid baseline)
    #[arg(long)]
    pub full_discretization: bool,
}

#[derive(Debug, Args)]
pub struct CodecArgs {
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub precision: Option<usize>,
    /// How the time set is stored: raw, astar or frames
    #[arg(long)]
    pub times_coding: Option<TimesMode>,
    /// Code every latent dimension in full
    #[arg(long)]
    pub no_prune: bool,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-sequence bit accounting as CSV
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub codec: CodecArgs,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Decode at times a, a+step, …, b instead of the frame times
    #[arg(long, value_parser = parse_times)]
    pub times: Option<QueryTimes>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "16,64,256,1024,4096")]
    pub precisions: Vec<usize>,
    #[command(flatten)]
    pub codec: CodecArgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryTimes(pub Vec<f64>);

/// Parses `a:b:step`. When `a` and `b` are multiples of `step` the times are
/// `k·step`, so halving the step adds midpoints without moving the others.
pub fn parse_times(s: &str) -> std::result::Result<QueryTimes, String> {
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number"))).collect::<std::result::Result<_, _>>()?;
    let [a, b, step] = parts[..] else {
        return Err("expected a:b:step".into());
    };
    if !(a.is_finite() && b.is_finite() && step > 0.0 && b >= a && a >= 0.0) {
        return Err("need 0 <= a <= b and step > 0".into());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    if n > 10_000_000 {
        return Err("too many query times".into());
    }
    let k0 = (a / step).round();
    let times = if (a / step - k0).abs() < 1e-9 {
        (0..=n).map(|i| (k0 + i as f64) * step).collect()
    } else {
        (0..=n).map(|i| a + i as f64 * step).collect()
    };
    Ok(QueryTimes(times))
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Codec(CodecError::ModelMismatch { .. }) => EXIT_MODEL_MISMATCH,
        Error::Codec(CodecError::BadMagic | CodecError::UnsupportedVersion(_) | CodecError::Truncated | CodecError::Corrupt(_)) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Command::Selftest = cli.command {
        return if crate::selftest::run_all(true) { EXIT_OK } else { EXIT_SELFTEST };
    }
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.codec.seed = s;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(&cfg, a, cli.seed.unwrap_or(0)),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Compress(a) => cmd_compress(cfg, a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::RdSweep(a) => cmd_sweep(cfg, a),
        Command::Selftest => unreachable!("handled before dispatch"),
    }
}

fn apply_codec_flags(cfg: &mut RunConfig, a: &CodecArgs) -> CompressOptions {
    let c = &mut cfg.codec;
    if let Some(m) = a.mode {
        c.mode = m;
    }
    if let Some(p) = a.precision {
        c.precision = p;
    }
    if let Some(t) = a.times_coding {
        c.times = t;
    }
    if a.no_prune {
        c.prune = false;
    }
    CompressOptions { mode: c.mode, precision: c.precision, times: c.times, prune: c.prune, seed: c.seed }
}

fn load_model(path: &Path) -> Result<Model> {
    Model::read(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Reads a dataset for `model` and returns (model inputs, original values).
fn load_for_model(model: &Model, path: &Path) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let c = &model.config;
    let mut d = ingest_csv(path, c.frames, c.frame_dt)?;
    if d.channels != c.channels {
        return Err(Error::Config(format!("data has {} channels, model expects {}", d.channels, c.channels)));
    }
    let raw = d.sequences.clone();
    if let Some(n) = &model.normalization {
        d.normalize_with(n)?;
    }
    Ok((d.sequences, raw))
}

fn cmd_gen(cfg: &RunConfig, a: GenArgs, seed: u64) -> Result<()> {
    let m = &cfg.model;
    let mut d = gen_synthetic(a.kind, a.n, a.frames.unwrap_or(m.frames), a.channels.unwrap_or(m.channels), m.frame_dt, seed)?;
    if a.bytes {
        d.to_bytes();
    }
    d.write_csv(&a.out)?;
    log::info!("wrote {} sequences of {}×{} to {}", d.sequences.len(), d.frames, d.channels, a.out.display());
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(f) = a.lambda_frac {
        cfg.model.lambda_frac = f;
    }
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
    }
    cfg.train.full_discretization |= a.full_discretization;
    let mut data: SequenceDataset = ingest_csv(&a.data, cfg.model.frames, cfg.model.frame_dt)?;
    cfg.model.channels = data.channels;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    if cfg.model.obs == ObsKind::Gaussian {
        model.normalization = Some(data.normalize()?);
    }
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("train.csv"));
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    writeln!(log, "{}", IterationLog::HEADER)?;
    let mut io_err = None;
    let every = (cfg.train.iterations / 20).max(1);
    let res = train(&mut model, &data.sequences, &cfg.train, Execution::default(), |l| {
        if let Err(e) = writeln!(log, "{}", l.csv_row()) {
            io_err.get_or_insert(e);
        }
        if l.iteration % every == 0 {
            log::info!("iter {} stage {} loss {:.3} M {:.1} global dims {}", l.iteration, l.stage, l.loss, l.mean_points, l.global_dims);
        }
    });
    log.flush()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    res?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    model.write(&mut out)?;
    out.flush()?;
    log::info!("model {:016x} written to {}", model.hash(), a.out.display());
    Ok(())
}

fn cmd_compress(mut cfg: RunConfig, a: CompressArgs) -> Result<()> {
    let opts = apply_codec_flags(&mut cfg, &a.codec);
    let model = load_model(&a.model)?;
    let (inputs, _) = load_for_model(&model, &a.data)?;
    let results = map_range(Execution::default(), inputs.len(), |i| compress(&model, &inputs[i], &CompressOptions { seed: sequence_seed(opts.seed, i), ..opts }));
    let (containers, reports): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    std::fs::write(&a.out, write_stream(&containers))?;
    if let Some(p) = &a.report {
        let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
        writeln!(w, "sequence,points,bits_total,bits_latents,bits_times_stored,bits_times_estimate,initial_bits,pruned_dims,times_coding")?;
        for (i, r) in reports.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{},{}",
                r.points,
                r.bits_total(),
                r.bits_latents,
                r.bits_times_stored,
                r.bits_times_estimate,
                r.initial_bits,
                r.pruned_dims,
                r.times_mode.name()
            )?;
        }
        w.flush()?;
    }
    let total: f64 = reports.iter().map(|r| r.bits_total()).sum();
    log::info!("{} sequences, {:.1} bits per sequence", reports.len(), total / reports.len().max(1) as f64);
    Ok(())
}

fn cmd_decompress(a: DecompressArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let containers = read_stream(&std::fs::read(&a.input)?)?;
    let query = a.times.as_ref().map(|q| &q.0[..]);
    let decoded = map_range(Execution::default(), containers.len(), |i| {
        let c = &containers[i];
        let mut x = decompress(&model, c, query)?;
        if let (Mode::Lossy, Some(n)) = (c.mode, &model.normalization) {
            n.invert(&mut x);
        }
        Ok(x)
    });
    let decoded = decoded.into_iter().collect::<Result<Vec<_>>>()?;
    write_frames(&a.out, model.config.channels, decoded.iter().map(|v| &v[..]))
}

fn cmd_sweep(mut cfg: RunConfig, a: SweepArgs) -> Result<()> {
    let mut opts = apply_codec_flags(&mut cfg, &a.codec);
    opts.mode = Mode::Lossy;
    let model = load_model(&a.model)?;
    let (inputs, raw) = load_for_model(&model, &a.data)?;
    let rows: Vec<RdRow> = rd_sweep(&model, &inputs, &raw, &a.precisions, &opts, Execution::default())?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    writeln!(w, "{}", RdRow::HEADER)?;
    for r in &rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}
