//! `fssl` command-line driver.
//!
//! Exit status is 2 when the configuration is unreadable or invalid and 1 on
//! any other failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fssl_core::config::ExperimentConfig;
use fssl_core::metrics::{evaluate, MetricsReport};
use fssl_core::nn::ParamVector;
use fssl_core::orchestrator::{final_metrics, Schedule, Setup};
use fssl_core::results::{final_checkpoint_path, run_to_dir, RunOptions};
use fssl_core::sweep::{parse_mk_pairs, sweep_cost, sweep_unlabeled_ratio};
use log::info;

#[derive(Parser)]
#[command(name = "fssl", version, about = "Federated semi-supervised learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write results.csv plus checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Train clients one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
        /// Fill the wall_ms column (breaks byte-identical reruns).
        #[arg(long)]
        record_wall_time: bool,
    },
    /// RSCFed against FedConsist over unlabeled-client ratios.
    SweepRatio {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.4,0.6,0.7,0.8,0.9")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value = "out/summary.csv")]
        out: PathBuf,
    },
    /// RSCFed over sub-sampling budgets M x K.
    SweepCost {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "3x5,5x3,2x7,4x4")]
        mk: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value = "out/summary.csv")]
        out: PathBuf,
    },
    /// Write the client partition a config produces.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dump: PathBuf,
    },
    /// Evaluate a checkpoint on the config's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

/// Failure class that decides the exit status.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<fssl_core::Error>() {
            Some(core) if core.is_config_error() => Failure::Config(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path)
        .and_then(|c| c.validate().map(|_| c))
        .map_err(|e| Failure::Config(anyhow::Error::new(e)))
}

fn print_report(m: &MetricsReport) {
    println!("accuracy        {:.4}", m.accuracy);
    println!("auc_macro_ovr   {:.4}", m.auc_macro_ovr);
    println!("precision_macro {:.4}", m.precision_macro);
    println!("recall_macro    {:.4}", m.recall_macro);
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            config,
            out,
            sequential,
            record_wall_time,
        } => {
            let cfg = load_config(&config)?;
            let opts = RunOptions {
                schedule: if sequential { Schedule::Sequential } else { Schedule::Parallel },
                record_wall_time,
            };
            let records = run_to_dir(&cfg, &out, opts)
                .with_context(|| format!("running {}", config.display()))?;
            info!("wrote {}", out.join("results.csv").display());
            info!("wrote {}", final_checkpoint_path(&out).display());
            if let Some(m) = final_metrics(&records) {
                print_report(&m);
            }
        }
        Command::SweepRatio {
            config,
            ratios,
            seeds,
            out,
        } => {
            let cfg = load_config(&config)?;
            let summary = sweep_unlabeled_ratio(&cfg, &ratios, seeds)?;
            summary.write(&out)?;
            print!("{}", summary.to_csv());
        }
        Command::SweepCost {
            config,
            mk,
            seeds,
            out,
        } => {
            let cfg = load_config(&config)?;
            let pairs = parse_mk_pairs(&mk)?;
            let summary = sweep_cost(&cfg, &pairs, seeds)?;
            summary.write(&out)?;
            print!("{}", summary.to_csv());
        }
        Command::Partition { config, dump } => {
            let cfg = load_config(&config)?;
            let setup = Setup::from_config(&cfg)?;
            setup.plan.save(&dump)?;
            println!(
                "{} clients, {} training samples -> {}",
                setup.plan.num_clients(),
                setup.plan.total_samples(),
                dump.display()
            );
        }
        Command::Eval { checkpoint, config } => {
            let cfg = load_config(&config)?;
            let params = ParamVector::load(&checkpoint)?;
            let setup = Setup::from_config(&cfg)?;
            print_report(&evaluate(&params, &setup.test)?);
        }
    }
    Ok(())
}

impl From<fssl_core::Error> for Failure {
    fn from(e: fssl_core::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
