use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pinode::cli::{self, EVAL_FILE};
use pinode::config::RunConfig;
use pinode::trainer::TrainStatus;

#[derive(Parser)]
#[command(
    name = "pinode",
    version,
    about = "Knowledge-constrained neural ODE training for the double pendulum"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training and test trajectory datasets.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root (overrides data.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Train one run per seed.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run root (overrides run.out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Evaluate trained runs, a single checkpoint, or the reference model.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run root (overrides run.out), or the report file with --checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        overwrite: bool,
    },
}

fn load(config: Option<PathBuf>) -> Result<RunConfig> {
    match config {
        Some(path) => Ok(RunConfig::load(&path)?),
        None => Ok(RunConfig::default()),
    }
}

fn refuse_existing(path: &std::path::Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        bail!(
            "{} already exists; pass --overwrite to replace it",
            path.display()
        );
    }
    Ok(())
}

fn run(args: Args) -> Result<bool> {
    match args.command {
        Command::GenData {
            config,
            out,
            overwrite,
        } => {
            let cfg = load(config)?;
            for dir in cli::gen_data(&cfg, out.as_deref(), overwrite)? {
                println!("wrote {}", dir.display());
            }
            Ok(true)
        }
        Command::Train {
            config,
            out,
            seed,
            overwrite,
        } => {
            let cfg = load(config)?;
            let seeds = (!seed.is_empty()).then_some(seed.as_slice());
            let mut ok = true;
            for s in cli::train_runs(&cfg, seeds, out.as_deref(), overwrite)? {
                let e = &s.evaluation;
                println!(
                    "{} seed {}: {} steps, test loss {:.6e}, rollout error {:.6e}{}",
                    s.label,
                    s.seed,
                    s.steps,
                    e.test_loss,
                    e.rollout_error,
                    e.constraint_loss
                        .map(|c| format!(", constraint loss {c:.3e}"))
                        .unwrap_or_default()
                );
                if s.inner_cap_hits > 0 {
                    eprintln!(
                        "warning: {} inner loop(s) hit the step cap",
                        s.inner_cap_hits
                    );
                }
                match &s.status {
                    TrainStatus::OuterCapHit { constraint_loss, .. } => eprintln!(
                        "warning: outer iteration cap reached with constraint loss {constraint_loss:.3e}"
                    ),
                    TrainStatus::Aborted { step, reason } => {
                        eprintln!("error: training aborted at step {step}: {reason}");
                        ok = false;
                    }
                    _ => {}
                }
            }
            Ok(ok)
        }
        Command::Eval {
            config,
            checkpoint,
            out,
            seed,
            overwrite,
        } => {
            let mut cfg = load(config)?;
            if checkpoint.is_some() || cfg.model.kind == pinode::vectorfield::ModelKind::Reference {
                let s = seed.first().copied().unwrap_or(0);
                let report = cli::eval(&cfg, checkpoint.as_deref(), s)?;
                let json = serde_json::to_string_pretty(&report)?;
                if let Some(path) = out {
                    refuse_existing(&path, overwrite)?;
                    cli::write_report(&report, &path)?;
                }
                println!("{json}");
                return Ok(true);
            }
            if let Some(out) = out {
                cfg.run.out = out;
            }
            if !seed.is_empty() {
                cfg.run.seeds = seed;
            }
            let mut losses = Vec::new();
            for &s in &cfg.run.seeds {
                let dir = cfg.run_dir(s);
                let ckpt = dir.join(cli::CHECKPOINT_FILE);
                let report = cli::eval(&cfg, Some(&ckpt), s)
                    .with_context(|| format!("evaluating {}", ckpt.display()))?;
                let path = dir.join(EVAL_FILE);
                refuse_existing(&path, overwrite)?;
                cli::write_report(&report, &path)?;
                println!(
                    "{} seed {s}: test loss {:.6e}, rollout error {:.6e}",
                    cfg.label(),
                    report.evaluation.test_loss,
                    report.evaluation.rollout_error
                );
                losses.push(report.evaluation.test_loss);
            }
            println!(
                "{}: geometric-mean test loss {:.6e}",
                cfg.label(),
                cli::geometric_mean(&losses)
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
