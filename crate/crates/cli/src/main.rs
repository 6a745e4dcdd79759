//! Batch driver for Gaussian rough path experiments. Every subcommand reads
//! one config file, runs a seeded batch, and leaves CSV artifacts plus a
//! `manifest.json` in the output directory.

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "roughsko", version, about = "Gaussian rough path batch experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (`key = value` with [section] headers)
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the sample loop (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw Gaussian sample paths and write them out
    Sample(CommonArgs),
    /// Lift sampled paths to level-2 rough paths
    Lift(CommonArgs),
    /// Solve the configured differential equation along each sample
    Solve(CommonArgs),
    /// Evaluate every term of the integral conversion formula
    Convert(CommonArgs),
    /// Track the compensated second-level sum across coarse grids
    #[command(name = "second-level")]
    SecondLevel(CommonArgs),
    /// Compare the Skorohod sum variance against the isometry prediction
    Isometry(CommonArgs),
    /// Evaluate Cameron-Martin norms and embedding ratios
    #[command(name = "cm-norm")]
    CmNorm(CommonArgs),
    /// Aggregate conversion tables into a convergence summary
    Report(CommonArgs),
}

impl Command {
    fn split(&self) -> (&'static str, &CommonArgs) {
        match self {
            Command::Sample(a) => ("sample", a),
            Command::Lift(a) => ("lift", a),
            Command::Solve(a) => ("solve", a),
            Command::Convert(a) => ("convert", a),
            Command::SecondLevel(a) => ("second-level", a),
            Command::Isometry(a) => ("isometry", a),
            Command::CmNorm(a) => ("cm-norm", a),
            Command::Report(a) => ("report", a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = cli.command.split();

    if let Some(threads) = args.threads {
        // Ignore the error from double initialization (e.g. in-process tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }

    let raw = match config::RawConfig::load(&args.config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cfg = match config::ExperimentConfig::from_raw(raw, name, args.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    match run(name, args, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(name: &'static str, args: &CommonArgs, cfg: &config::ExperimentConfig) -> anyhow::Result<()> {
    let model = cfg.build_model()?;
    let stamp = output::RunStamp {
        experiment: name.to_string(),
        config_hash: cfg.hash(args.seed),
        seed: cfg.seed,
    };
    let mut ctx = commands::RunContext {
        out: args.out.clone().unwrap_or_else(|| cfg.out_dir.clone()),
        stamp,
        guard_events: Vec::new(),
        outputs: Vec::new(),
    };

    let started = Instant::now();
    let summary = match name {
        "sample" => commands::run_sample(cfg, &model, &mut ctx)?,
        "lift" => commands::run_lift(cfg, &model, &mut ctx)?,
        "solve" => commands::run_solve(cfg, &model, &mut ctx)?,
        "convert" => commands::run_convert(cfg, &model, &mut ctx)?,
        "second-level" => commands::run_second_level(cfg, &model, &mut ctx)?,
        "isometry" => commands::run_isometry(cfg, &model, &mut ctx)?,
        "cm-norm" => commands::run_cm_norm(cfg, &model, &mut ctx)?,
        "report" => commands::run_report(cfg, &model, &mut ctx)?,
        _ => unreachable!("subcommand list is fixed"),
    };
    let elapsed_ms = started.elapsed().as_millis() as u64;

    let manifest = output::RunManifest {
        artifact_version: output::ARTIFACT_VERSION.to_string(),
        experiment: name.to_string(),
        config_path: args.config.display().to_string(),
        config_hash: ctx.stamp.config_hash.clone(),
        config: cfg.raw.echo(),
        seed: cfg.seed,
        samples: cfg.samples,
        elapsed_ms,
        guard_events: ctx.guard_events,
        outputs: ctx.outputs,
        summary,
    };
    manifest.write(&ctx.out)?;

    let n_guards = manifest.guard_events.len();
    if n_guards > 0 {
        eprintln!("{name}: finished with {n_guards} guard event(s); see manifest.json");
    }
    println!(
        "{name}: wrote {} artifact(s) to {} in {elapsed_ms} ms",
        manifest.outputs.len() + 1,
        ctx.out.display()
    );
    Ok(())
}
