//! `bads`: reproducible experiment runner for meta-set-guided data point
//! selection on synthetic scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bads_cli::config::{preset, RunConfig};
use bads_cli::error::{CliError, Result};
use bads_cli::runner::{export_plots, read_log, read_params, run_experiment};
use bads_cli::sweep::sweep;
use bads_core::data::save_scenario;
use bads_core::posterior::{reference_micro_model, verify_posterior};
use bads_core::trainer::evaluate;

#[derive(Parser)]
#[command(name = "bads", about = "Joint SGLD training of a backbone and per-example data weights", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// Path to a run config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in hyperparameter row: mnist, cifar, or webnlg.
    #[arg(long)]
    preset: Option<String>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigSource {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => RunConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => {
                return Err(CliError::Validation(
                    "provide --config PATH or --preset NAME".into(),
                ))
            }
            (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
        };
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and write its CSV bundle.
    GenData {
        #[command(flatten)]
        source: ConfigSource,
        /// Output directory for the CSV bundle.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per the config and write run artifacts.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        /// Run output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved parameters on a scenario split.
    Evaluate {
        /// params_final.json from a run.
        #[arg(long)]
        params: PathBuf,
        /// Directory holding a scenario CSV bundle.
        #[arg(long)]
        data: PathBuf,
        /// Split to evaluate: train, meta, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run one experiment per value of a hyperparameter axis.
    Sweep {
        #[command(flatten)]
        source: ConfigSource,
        /// Axis name (an SGLD field, or n_meta_per_class).
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render the SVG charts from an existing log.csv.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the sampler against the exact grid posterior of the
    /// micro-model and write posterior_report.json.
    VerifyPosterior {
        #[arg(long)]
        out: PathBuf,
        /// Steps per chain.
        #[arg(long, default_value_t = 200_000)]
        steps: usize,
        /// Comma-separated step sizes, swept largest to smallest.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1e-2, 3e-3, 1e-3])]
        etas: Vec<f64>,
        /// Independent chains pooled per step size.
        #[arg(long, default_value_t = 16)]
        chains: usize,
        /// Grid resolution per axis.
        #[arg(long, default_value_t = 96)]
        resolution: usize,
        /// Keep every thin-th post-burn-in iterate.
        #[arg(long, default_value_t = 5)]
        thin: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { source, out } => {
            let cfg = source.load()?;
            let scenario = cfg.scenario.resolve(cfg.run.seed)?;
            save_scenario(&scenario, &out)?;
            println!(
                "wrote scenario to {} (train {}, meta {}, test {})",
                out.display(),
                scenario.train.len(),
                scenario.meta.len(),
                scenario.test.len()
            );
        }
        Command::Train { source, out } => {
            let cfg = source.load()?;
            let artifacts = run_experiment(&cfg, &out)?;
            let test = evaluate(
                &artifacts.outcome.params,
                &artifacts.scenario.test.features,
                &artifacts.scenario.test.labels,
            )?;
            println!(
                "done in {:.2}s; test accuracy {:.4}; artifacts in {}",
                artifacts.outcome.log.wall_clock_s,
                test.accuracy,
                out.display()
            );
        }
        Command::Evaluate { params, data, split } => {
            let model = read_params(&params)?;
            let scenario = bads_core::data::load_scenario(&data)?;
            let part = match split.as_str() {
                "train" => &scenario.train,
                "meta" => &scenario.meta,
                "test" => &scenario.test,
                other => {
                    return Err(CliError::Validation(format!(
                        "unknown split `{other}` (expected train, meta, or test)"
                    )))
                }
            };
            let m = evaluate(&model, &part.features, &part.labels)?;
            println!("split: {split}");
            println!("accuracy: {}", m.accuracy);
            println!("mean_loss: {}", m.mean_loss);
        }
        Command::Sweep {
            source,
            axis,
            values,
            out,
        } => {
            let cfg = source.load()?;
            sweep(&cfg, &axis, &values, &out)?;
            println!("sweep complete; summary at {}", out.join("summary.csv").display());
        }
        Command::Plot { log, out } => {
            let parsed = read_log(&log)?;
            std::fs::create_dir_all(&out)?;
            export_plots(&parsed, &out)?;
            println!("wrote plots to {}", out.display());
        }
        Command::VerifyPosterior {
            out,
            steps,
            etas,
            chains,
            resolution,
            thin,
            seed,
        } => {
            let model = reference_micro_model();
            let report = verify_posterior(&model, &etas, steps, chains, resolution, thin, seed)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("posterior_report.json"), report.to_json())?;
            for entry in &report.sweep {
                println!(
                    "eta {:>8}: tv theta {:.4}, w1 {:.4}, w2 {:.4} (max {:.4}, {} samples)",
                    entry.eta, entry.tv_theta, entry.tv_w1, entry.tv_w2, entry.max_tv, entry.n_samples
                );
            }
            println!("report at {}", out.join("posterior_report.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
