use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsi_cli::{
    cmd_calibrate, cmd_coherence, cmd_costmodel, cmd_report, cmd_sweep, CliError, ExperimentConfig, ModeKind,
    Overrides, Workspace,
};

#[derive(Parser)]
#[command(name = "gsi", version, about = "Gated subspace inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Workspace root; every path in the config is relative to it.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    /// Experiment config, relative to the root.
    #[arg(long, short, global = true, default_value = "gsi.toml")]
    config: PathBuf,
    #[arg(long, global = true, env = "GSI_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "GSI_WORKERS")]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Basis ranks, comma-separated.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Gate thresholds, comma-separated.
    #[arg(long, global = true, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    /// Execution modes, comma-separated.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_mode)]
    modes: Option<Vec<ModeKind>>,
    #[arg(long, global = true)]
    cascade: Option<bool>,
    #[arg(long, global = true)]
    eta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build bases and cached images for every rank and store them.
    Calibrate,
    /// Evaluate every (k, epsilon, mode) point against the dense model.
    Sweep,
    /// Layer-to-layer subspace overlap from stored bases.
    Coherence,
    /// End-to-end cost model and roofline tables.
    Costmodel,
    /// Render stored tables as Markdown.
    Report,
}

fn parse_mode(s: &str) -> Result<ModeKind, String> {
    match s {
        "baseline" => Ok(ModeKind::Baseline),
        "gated" => Ok(ModeKind::Gated),
        "static_projection" | "static" => Ok(ModeKind::StaticProjection),
        other => Err(format!("unknown mode `{other}` (baseline, gated, static_projection)")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = cli.common;
    let ws = Workspace::new(c.root);
    let mut cfg = ExperimentConfig::load(&ws.resolve(&c.config))?;
    cfg.apply(&Overrides {
        output_dir: c.output_dir,
        workers: c.workers,
        seed: c.seed,
        k: c.k,
        epsilon: c.epsilon,
        modes: c.modes,
        cascade: c.cascade,
        eta: c.eta,
    })?;
    match cli.command {
        Command::Calibrate => {
            let out = cmd_calibrate(&ws, &cfg)?;
            for p in &out.artifacts {
                println!("wrote {}", p.display());
            }
            print!("{}", out.table.to_markdown());
        }
        Command::Sweep => print!("{}", cmd_sweep(&ws, &cfg)?.table.to_markdown()),
        Command::Coherence => print!("{}", cmd_coherence(&ws, &cfg)?.to_markdown()),
        Command::Costmodel => {
            let out = cmd_costmodel(&ws, &cfg)?;
            print!("{}\n{}", out.breakdown.to_markdown(), out.roofline.to_markdown());
            if let Some(p) = out.projected {
                print!("\n{}", p.to_markdown());
            }
        }
        Command::Report => print!("{}", cmd_report(&ws, &cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gsi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
