mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scalefuse::harness::ReportFormat;

use crate::failure::Failure;

/// Multi-scale feature fusion experiments and dataset-bias statistics.
#[derive(Debug, Parser)]
#[command(name = "scalefuse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Patch counts for a set of scales.
    Scales(ScalesArgs),
    /// Top-left patch offsets for one scale.
    Grid(GridArgs),
    /// Write synthetic feature dumps for a synthetic-dataset config.
    ExtractSynth(ExtractSynthArgs),
    /// Max-pool every image of a dump at one scale.
    Pool(PoolArgs),
    /// One row per (scale, extractor).
    Sweep(ExperimentArgs),
    /// All ordered scale pairs for two extractors, plus single-scale rows.
    Dual(DualArgs),
    /// Evaluate one splice point, or search all of them.
    Splice(SpliceArgs),
    /// Both full architectures side by side.
    DoubleFull(ExperimentArgs),
    /// Discriminability and redundancy per (scale, extractor).
    Metrics(MetricsArgs),
    /// Object size and objects-per-image histograms.
    Stats(StatsArgs),
    /// Write probe crops for frequent object categories.
    Variants(VariantsArgs),
    /// Re-render a result table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Text => ReportFormat::Text,
        }
    }
}

#[derive(Debug, Args)]
struct GeometryArgs {
    #[arg(long, default_value_t = scalefuse::pyramid::DEFAULT_PATCH_SIDE)]
    patch_side: u32,
    #[arg(long, default_value_t = scalefuse::pyramid::DEFAULT_STRIDE)]
    stride: u32,
}

#[derive(Debug, Args)]
struct ScalesArgs {
    /// Comma-separated image sides; defaults to the seven standard scales.
    #[arg(long, value_delimiter = ',')]
    sides: Vec<u32>,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    side: u32,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Debug, Args)]
struct ExtractSynthArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving one `<extractor>.msfd` per profile.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct PoolArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    side: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct DualArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// First extractor; defaults to the configured scene extractor.
    #[arg(long)]
    a: Option<String>,
    /// Second extractor; defaults to the configured object extractor.
    #[arg(long)]
    b: Option<String>,
}

#[derive(Debug, Args)]
struct SpliceArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Evaluate this splice point on the test split; searches when absent.
    #[arg(long)]
    point: Option<usize>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = scalefuse::metrics::DEFAULT_BINS)]
    bins: usize,
    /// Estimate redundancy from this many sampled dimension pairs.
    #[arg(long)]
    pair_sample: Option<usize>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Receives `object_sizes.csv` and `objects_per_image.csv`.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = scalefuse::datastats::DEFAULT_SIZE_BINS)]
    size_bins: usize,
    #[arg(long, default_value_t = scalefuse::datastats::DEFAULT_COUNT_CAP)]
    count_cap: usize,
}

#[derive(Debug, Args)]
struct VariantsArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Directory holding `<image id>.png` or `.jpg` files.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 75)]
    top_k: usize,
    #[arg(long, default_value_t = scalefuse::variants::DEFAULT_MIN_PROBE_SIZE)]
    min_size: f64,
    /// Canonical object sizes as fractions of the crop side.
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.8,0.6,0.4,0.2,0.1")]
    pcts: Vec<f64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Result table CSV produced by another subcommand.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Print only the row with the best class-averaged accuracy.
    #[arg(long)]
    best: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    commands::configure_threads()?;
    match cli.command {
        Command::Scales(a) => commands::scales(&a.sides, &a.geometry),
        Command::Grid(a) => commands::grid(a.side, &a.geometry),
        Command::ExtractSynth(a) => commands::extract_synth(&a),
        Command::Pool(a) => commands::pool(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Dual(a) => commands::dual(&a),
        Command::Splice(a) => commands::splice(&a),
        Command::DoubleFull(a) => commands::double_full(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Variants(a) => commands::variants(&a),
        Command::Report(a) => commands::report(&a),
    }
}
