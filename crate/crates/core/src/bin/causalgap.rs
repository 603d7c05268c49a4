use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use causalgap::pipeline::{run_pipeline, Config, Stage};

#[derive(Parser)]
#[command(name = "causalgap", version, about = "Causal estimates of a salary gap from observational records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Comma-separated stages, e.g. `ingest,ps,match,report`.
    #[arg(long)]
    stages: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known effects.
    Simulate(Common),
    /// Run the configured (or full) analysis.
    Analyze(Common),
    /// Propensity model, matching and balance diagnostics.
    Balance(Common),
    /// Omitted-variable sensitivity of the adjusted regression.
    Sensitivity(Common),
    /// Assemble the summary table from stored estimates.
    Report(Common),
}

fn data_stages(cfg: &Config) -> Vec<Stage> {
    let mut s = Vec::new();
    if cfg.input.path.is_none() {
        s.push(Stage::Simulate);
    }
    s.extend([Stage::Ingest, Stage::Impute]);
    s
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (common, defaults): (Common, fn(&Config) -> Vec<Stage>) = match cli.command {
        Command::Simulate(c) => (c, |_| vec![Stage::Simulate]),
        Command::Analyze(c) => (c, |cfg| cfg.effective_stages()),
        Command::Balance(c) => (c, |cfg| [data_stages(cfg), vec![Stage::Ps, Stage::Match, Stage::Balance]].concat()),
        Command::Sensitivity(c) => (c, |cfg| [data_stages(cfg), vec![Stage::Sensitivity]].concat()),
        Command::Report(c) => (c, |_| vec![Stage::Report]),
    };
    let mut cfg = match &common.config {
        Some(p) => Config::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    cfg.run.stages = match &common.stages {
        Some(list) => Stage::parse_list(list)?,
        None => defaults(&cfg),
    };
    let summary = run_pipeline(&cfg, &common.out_dir)?;
    if let Some(table) = &summary.summary {
        print!("{}", table.to_text());
    }
    println!("wrote {} artifacts to {} (config sha256 {})", summary.artifacts.len(), summary.out_dir.display(), summary.config_sha256);
    Ok(())
}
