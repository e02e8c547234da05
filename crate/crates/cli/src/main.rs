use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qmf_core::harness::{meta_path, run_experiment, ExperimentConfig, ExperimentKind};
use qmf_core::QamConstellation;

/// Simulation and analysis tools for quantize-map-forward relaying.
#[derive(Parser)]
#[command(name = "qmf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo BER of the joint decoder over an SNR sweep.
    BerSweep(RunArgs),
    /// Density-evolution decoding threshold of a profile pair.
    DeThreshold(RunArgs),
    /// QMF, DF, AF and no-cooperation rates over an SNR grid.
    RateCurves(RunArgs),
    /// Degree-profile search for a target rate.
    ProfileSearch(RunArgs),
    /// Writes the points and Gray labels of a QAM constellation.
    DumpConstellation(DumpArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; a `.meta` sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DumpArgs {
    /// Modulation index n of the 2^(2n)-QAM constellation.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let (kind, args) = match cli.command {
        Command::BerSweep(a) => (ExperimentKind::BerSweep, a),
        Command::DeThreshold(a) => (ExperimentKind::DeThreshold, a),
        Command::RateCurves(a) => (ExperimentKind::RateCurves, a),
        Command::ProfileSearch(a) => (ExperimentKind::ProfileSearch, a),
        Command::DumpConstellation(a) => return dump_constellation(&a),
    };
    let mut cfg = load_config(kind, args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.output.as_ref().map(|p| cfg.base_dir.join(p)))
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cfg.id)));
    cfg.output = Some(out.clone());

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            bail!("--threads must be positive");
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("building the worker pool")?;
    let rows = pool.install(|| run_experiment(&cfg, &out))?;
    eprintln!(
        "wrote {rows} row(s) to {} (metadata in {})",
        out.display(),
        meta_path(&out).display()
    );
    Ok(())
}

/// Reads the config, taking the experiment kind from the subcommand.
fn load_config(kind: ExperimentKind, path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::new(kind));
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    let kind_value = toml::Value::try_from(kind).context("encoding experiment kind")?;
    table.insert("kind".into(), kind_value);
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    ExperimentConfig::from_toml_str(&table.to_string(), dir).with_context(|| format!("in {}", path.display()))
}

fn dump_constellation(args: &DumpArgs) -> Result<()> {
    let cnst = QamConstellation::new(args.n)?;
    match &args.out {
        Some(p) => cnst.save_csv(p)?,
        None => cnst.write_csv(io::stdout().lock())?,
    }
    Ok(())
}
