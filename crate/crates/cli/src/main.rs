use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use playstyle_cli::{exit_code, PipelineConfig, Stage, Workspace};

#[derive(Parser)]
#[command(name = "playstyle", version, about = "Playing-style embeddings from player tracking data")]
struct Cli {
    /// TOML config; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Work directory, overriding `paths.work`.
    #[arg(long, global = true)]
    work: Option<PathBuf>,
    /// Root seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic league into raw/.
    Synth,
    /// Validate raw tracking and events and cut matches into phases.
    Ingest,
    /// Assign roles per phase and label player-role entities.
    Roles,
    /// Build single-phase location and direction heatmaps.
    Heatmaps,
    /// Split phases into train/validation/test and accumulate combinations.
    Augment,
    /// Train the embedding network.
    Train,
    /// Embed the training and test heatmaps.
    Embed,
    /// Run the identification conditions.
    Identify,
    /// Render the summary table.
    Report,
    /// Run every stage from `from` (default: synth) to report.
    Run {
        #[arg(long, default_value = "synth")]
        from: String,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn stage_named(name: &str) -> Option<Stage> {
    Stage::ALL.into_iter().find(|s| s.name() == name)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(work) = cli.work {
        cfg.paths.work = work;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    if let Command::Config = cli.command {
        cfg.validate()?;
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let ws = Workspace::new(cfg)?;
    let stage = match cli.command {
        Command::Synth => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::Roles => Stage::Roles,
        Command::Heatmaps => Stage::Heatmaps,
        Command::Augment => Stage::Augment,
        Command::Train => Stage::Train,
        Command::Embed => Stage::Embed,
        Command::Identify => Stage::Identify,
        Command::Report => Stage::Report,
        Command::Run { from } => {
            let from = stage_named(&from).ok_or_else(|| playstyle_cli::Failure::Config(format!("unknown stage `{from}`")))?;
            ws.run_from(from)?;
            print!("{}", std::fs::read_to_string(ws.path("report/table.txt"))?);
            return Ok(());
        }
        Command::Config => unreachable!("handled above"),
    };
    ws.run(stage)?;
    if stage == Stage::Report {
        print!("{}", std::fs::read_to_string(ws.path("report/table.txt"))?);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error[E{code:03}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
