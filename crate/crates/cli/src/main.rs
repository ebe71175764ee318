use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use etmarl_core::harness::{self, Overrides, RunConfig};
use etmarl_core::{Error, TriggerKind};

#[derive(Parser)]
#[command(name = "etmarl", version, about = "Self-triggered state sharing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the arena width.
    #[arg(long)]
    arena: Option<u32>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of simulated games.
    #[arg(long)]
    games: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve or learn the game and store the Q table and greedy policy.
    Train(Common),
    /// Draw and label surrogate samples; every configured alpha by default.
    Surrogate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Fit the regressor and its risk bounds; every configured alpha by default.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Recompute risk bounds from stored artifacts and check them.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Play games under a trigger and write episode and summary CSVs.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
        /// full-comm, exact, svr or never.
        #[arg(long, default_value = "exact")]
        trigger: String,
    },
    /// Collect all results into markdown and CSV tables.
    Report(Common),
    /// Every stage in order.
    Pipeline(Common),
    /// Print a profile configuration (desk or full).
    Profile { name: String },
}

fn load(c: &Common) -> Result<RunConfig, Error> {
    RunConfig::load(&c.config)?.apply(&Overrides {
        arena: c.arena,
        seed: c.seed,
        games: c.games,
    })
}

fn alphas(cfg: &RunConfig, alpha: Option<f64>) -> Vec<f64> {
    alpha.map_or_else(|| cfg.alphas.clone(), |a| vec![a])
}

fn emit(v: serde_json::Value) {
    println!("{v}");
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(c) => {
            let meta = harness::cmd_train(&load(&c)?)?;
            emit(serde_json::json!({ "stage": "train", "meta": meta }));
        }
        Command::Surrogate { common, alpha } => {
            let cfg = load(&common)?;
            for a in alphas(&cfg, alpha) {
                let p = harness::cmd_surrogate(&cfg, a)?;
                emit(serde_json::json!({ "stage": "surrogate", "alpha": a, "path": p }));
            }
        }
        Command::Fit { common, alpha } => {
            let cfg = load(&common)?;
            let mut failed = None;
            for (a, r) in harness::cmd_fit_many(&cfg, &alphas(&cfg, alpha))? {
                match r {
                    Ok(fit) => emit(serde_json::json!({ "stage": "fit", "alpha": a, "fit": fit })),
                    Err(e) => {
                        emit(serde_json::json!({ "stage": "fit", "alpha": a, "error": e.to_string(), "kind": e.kind() }));
                        failed = Some(e);
                    }
                }
            }
            if let Some(e) = failed {
                return Err(e);
            }
        }
        Command::Bounds { common, alpha } => {
            let cfg = load(&common)?;
            for a in alphas(&cfg, alpha) {
                let b = harness::cmd_bounds(&cfg, a)?;
                emit(serde_json::json!({ "stage": "bounds", "alpha": a, "bounds": b }));
            }
        }
        Command::Simulate { common, alpha, trigger } => {
            let cfg = load(&common)?;
            let kind: TriggerKind = trigger.parse()?;
            let list = match (kind, alpha) {
                (TriggerKind::FullComm | TriggerKind::Never, None) => vec![0.0],
                _ => alphas(&cfg, alpha),
            };
            for a in list {
                let out = harness::cmd_simulate(&cfg, a, kind)?;
                emit(serde_json::json!({ "stage": "simulate", "trigger": kind, "summary": out.row }));
            }
        }
        Command::Report(c) => {
            let files = harness::cmd_report(&load(&c)?)?;
            emit(serde_json::json!({ "stage": "report", "markdown": files.markdown }));
        }
        Command::Pipeline(c) => {
            let (files, failures) = harness::run_pipeline(&load(&c)?)?;
            for (a, e) in &failures {
                emit(serde_json::json!({ "stage": "fit", "alpha": a, "error": e.to_string(), "kind": e.kind() }));
            }
            emit(serde_json::json!({ "stage": "report", "markdown": files.markdown }));
        }
        Command::Profile { name } => {
            let cfg = match name.as_str() {
                "desk" => RunConfig::desk(),
                "full" => RunConfig::full(),
                other => return Err(Error::InvalidInput(format!("unknown profile {other}"))),
            };
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
