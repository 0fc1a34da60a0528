//! `apam`: train, simulate staleness, audit and evaluate bounds for
//! asynchronous-parallel AMSGrad runs described by a config file.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use apam_core::metrics::SuppliedInputs;
use apam_core::{DelayModel, Mode};
use clap::{Parser, Subcommand};

use config::{parse_config, parse_config_str, ExperimentConfig};

const DEFAULT_CONFIG: &str = include_str!("../configs/default.cfg");

#[derive(Parser)]
#[command(name = "apam", version, about = "Asynchronous-parallel AMSGrad experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its trace.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Trace path; overrides `output.trace`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `run.mode` (sim, threads or wire).
        #[arg(long)]
        mode: Option<Mode>,
        /// Overrides `run.workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Repeat a simulated run for each fixed staleness value.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated staleness values, e.g. `0,8,32`.
        #[arg(long, default_value = "0,8,32")]
        tau: String,
        /// Directory for the traces; defaults to that of `output.trace`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Admission threshold; defaults to the larger of the config value
        /// and the largest staleness simulated.
        #[arg(long)]
        tau_max: Option<u64>,
    },
    /// Audit per-step invariants across seeds; exits non-zero on a violation.
    Verify {
        /// Defaults to a built-in small delayed logistic regression run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// May be repeated; defaults to the built-in config.
        #[arg(long)]
        config: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        points: u64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Print the config with every default filled in.
    Show {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Estimate bound inputs from a run and evaluate the convergence bounds.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Smoothness constant; overrides `bounds.L`.
        #[arg(long = "L")]
        l: Option<f64>,
        /// Bound on |F|; overrides `bounds.C_F`.
        #[arg(long = "C-F")]
        c_f: Option<f64>,
        /// Box diameter; overrides `bounds.D_inf`.
        #[arg(long = "D-inf")]
        d_inf: Option<f64>,
    },
}

/// `APAM_SEED`, when set, replaces `run.seed`.
fn apply_env(mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    if let Ok(v) = std::env::var("APAM_SEED") {
        cfg.run.master_seed = v.trim().parse().with_context(|| format!("APAM_SEED = {v:?} is not an integer"))?;
    }
    Ok(cfg)
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    apply_env(parse_config(path)?)
}

fn load_or_default(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => load(p),
        None => apply_env(parse_config_str(DEFAULT_CONFIG).context("built-in config")?),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, mode, workers } => {
            let mut cfg = load(&config)?;
            if let Some(out) = out {
                cfg.output = out;
            }
            if let Some(mode) = mode {
                cfg.run.mode = mode;
            }
            if let Some(w) = workers {
                if let DelayModel::PerWorkerFixed(d) = &cfg.run.delay_model {
                    if d.len() != w {
                        bail!("--workers {w} does not match the {} per-worker delays in the config", d.len());
                    }
                }
                cfg.run.workers = w;
            }
            commands::train(&cfg)
        }
        Command::Simulate { config, tau, out_dir, tau_max } => {
            let taus = commands::parse_tau_list(&tau)?;
            commands::simulate(&load(&config)?, &taus, out_dir.as_deref(), tau_max)
        }
        Command::Verify { config, seeds } => {
            if seeds == 0 {
                bail!("--seeds must be positive");
            }
            commands::verify(&load_or_default(config.as_deref())?, seeds)
        }
        Command::Gradcheck { config, points, step, tol } => {
            let mut all_ok = true;
            if config.is_empty() {
                all_ok &= commands::gradcheck(&load_or_default(None)?, "built-in", points, step, tol)?;
            }
            for path in &config {
                all_ok &= commands::gradcheck(&load(path)?, &path.display().to_string(), points, step, tol)?;
            }
            if !all_ok {
                bail!("gradient check failed");
            }
            Ok(())
        }
        Command::Show { config } => {
            print!("{}", load_or_default(config.as_deref())?.to_config_string());
            Ok(())
        }
        Command::Bounds { config, out, l, c_f, d_inf } => {
            let mut cfg = load(&config)?;
            if let Some(out) = out {
                cfg.output = out;
            }
            commands::bounds(&cfg, SuppliedInputs { l, c_f, d_inf })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
