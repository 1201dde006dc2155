//! `phaseid` command-line front end.

mod artifact;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phaseid::pipeline::grid_range;
use phaseid::Linkage;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "phaseid", version, about = "Smart-meter phase identification from voltage correlation")]
struct Cli {
    /// Worker threads for parallel stages (0 = all cores). Results do not
    /// depend on this setting.
    #[arg(long, global = true, env = "PHASEID_WORKERS", default_value_t = 0)]
    workers: usize,

    /// Directory for cached distance matrices, reused across runs.
    #[arg(long, global = true, env = "PHASEID_CACHE_DIR")]
    cache_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic feeder and secondary-circuit Monte Carlo tables.
    Simulate(SimulateArgs),
    /// Identify phases at one segmentation setting using recorded labels.
    Identify(IdentifyArgs),
    /// Sweep accuracy over a (C, T_dur, k) grid using recorded labels.
    Sweep(SweepArgs),
    /// Consensus clustering over a segmentation grid; needs no labels.
    Ensemble(EnsembleArgs),
    /// Score an assignment or cluster CSV against reference phases.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args, Serialize)]
struct InputArgs {
    /// Meter CSV: meter_id,timestamp,kw,volts[,phase][,service_voltage]
    #[arg(long, short)]
    input: PathBuf,
    /// TOML ingest configuration (column names, interval, missing limit).
    #[arg(long)]
    ingest_config: Option<PathBuf>,
    /// Drop meters missing more than this fraction of samples [default: 0.8]
    #[arg(long)]
    max_missing: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct AnalysisArgs {
    /// Minimum selected points per pair before falling back to all
    /// jointly present samples.
    #[arg(long, default_value_t = phaseid::segmentation::DEFAULT_MIN_POINTS)]
    min_points: usize,
    #[arg(long, value_enum, default_value_t = LinkageArg::Average)]
    linkage: LinkageArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LinkageArg {
    Single,
    Complete,
    Average,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Complete => Linkage::Complete,
            LinkageArg::Average => Linkage::Average,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// TOML file with synthetic feeder settings; omitted keys keep defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the load scale from the config file.
    #[arg(long)]
    load_scale: Option<f64>,
    /// Secondary connection type for the Monte Carlo table (1, 2 or 3).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    connection: u8,
    /// Shared service-drop resistance (ohm).
    #[arg(long, default_value_t = 0.01)]
    r_shared: f64,
    /// Branch resistance to the first load (ohm).
    #[arg(long, default_value_t = 0.05)]
    r_i: f64,
    /// Branch resistance to the second load (ohm).
    #[arg(long, default_value_t = 0.05)]
    r_j: f64,
    /// Transformer-voltage band widths (V), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,1,2,5")]
    bands: Vec<f64>,
    #[arg(long, default_value_t = phaseid::circuit::DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, default_value_t = 42)]
    mc_seed: u64,
    /// Use one load level for both loads in each draw.
    #[arg(long)]
    tied_loads: bool,
    /// Skip the Monte Carlo table.
    #[arg(long)]
    no_mc: bool,
    #[arg(long, short)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct LabelArgs {
    /// Recorded phases: CSV with meter_id,phase columns.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Reference phases to score against [default: the recorded labels].
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct IdentifyArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    labels: LabelArgs,
    /// Low-power threshold C in kW ("inf" keeps every sample).
    #[arg(long = "c", default_value_t = 1.0)]
    c_kw: f64,
    /// Minimum low-power run duration in hours.
    #[arg(long, default_value_t = 0.5)]
    t_dur: f64,
    /// Fixed cluster count; otherwise the best of k = 3, 6, ..., 3 * n_max.
    #[arg(long, short)]
    k: Option<usize>,
    #[arg(long, default_value_t = 12)]
    n_max: usize,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Also write segments.json with the selected runs of every pair.
    #[arg(long)]
    dump_segments: bool,
    #[arg(long, short)]
    #[serde(skip)]
    out: PathBuf,
}

/// Parameter grid given as `lo:hi:step` or a comma list.
#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
struct Grid(Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err("expected lo:hi:step".into());
        }
        grid_range(num(parts[0])?, num(parts[1])?, num(parts[2])?)
            .map(Grid)
            .map_err(|e| e.to_string())
    } else {
        s.split(',').map(num).collect::<Result<_, _>>().map(Grid)
    }
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    labels: LabelArgs,
    /// C grid in kW, as lo:hi:step or a comma list.
    #[arg(long, value_parser = parse_grid, default_value = "0:2:0.1")]
    c_grid: Grid,
    /// T_dur grid in hours, as lo:hi:step or a comma list.
    #[arg(long, value_parser = parse_grid, default_value = "0:3:0.5")]
    t_grid: Grid,
    /// Evaluate k = 3, 6, ..., 3 * n_max.
    #[arg(long, default_value_t = 12)]
    n_max: usize,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[arg(long, short)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Consensus {
    Cts,
    CoAssociation,
}

#[derive(Debug, Args, Serialize)]
struct EnsembleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_parser = parse_grid, default_value = "0.4:0.8:0.1")]
    c_grid: Grid,
    #[arg(long, value_parser = parse_grid, default_value = "2.5,3")]
    t_grid: Grid,
    /// Clusters per member and in the result are 3 * n_star
    /// [default: 12, or fewer on feeders under 36 meters].
    #[arg(long)]
    n_star: Option<usize>,
    /// Decay factor dc in [0, 1] for indirect cluster similarity.
    #[arg(long, default_value_t = phaseid::ensemble::DEFAULT_DECAY)]
    dc: f64,
    #[arg(long, value_enum, default_value_t = Consensus::Cts)]
    consensus: Consensus,
    /// Reference phases; when given, clusters are scored by majority vote.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[arg(long, short)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// CSV with meter_id and predicted_phase, or meter_id and cluster.
    #[arg(long)]
    assignment: PathBuf,
    /// Reference phases: CSV with meter_id,phase columns.
    #[arg(long)]
    truth: PathBuf,
    /// Field-confirmed phases credited as corrections when they match a
    /// prediction that disagrees with the reference.
    #[arg(long)]
    corrections: Option<PathBuf>,
    #[arg(long, short)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
        eprintln!("warning: worker pool already initialized: {e}");
    }
    let cache = match &cli.cache_dir {
        Some(dir) => phaseid::DistanceCache::with_dir(dir),
        None => Ok(phaseid::DistanceCache::in_memory()),
    };
    let result = cache.and_then(|cache| match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Identify(a) => commands::identify(a, &cache),
        Command::Sweep(a) => commands::sweep(a, &cache),
        Command::Ensemble(a) => commands::ensemble(a, &cache),
        Command::Evaluate(a) => commands::evaluate(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
