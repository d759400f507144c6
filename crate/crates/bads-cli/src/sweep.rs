//! Parameter sweeps: one run per value of a named axis, with a summary CSV
//! of final metrics. The scenario seed stays fixed across the sweep so runs
//! differ only in the swept value (and in their derived training seed).

use std::fs;
use std::path::Path;

use bads_core::rng::Rng;
use bads_core::trainer::evaluate;

use crate::config::{RunConfig, ScenarioSpec};
use crate::error::{CliError, Result};
use crate::runner::run_experiment;

pub const SWEEP_AXES: [&str; 11] = [
    "eta",
    "eta_w",
    "sigma",
    "beta",
    "rho_theta_t",
    "rho_theta_m",
    "rho_w_t",
    "weight_decay",
    "noise_scale",
    "sgd_lr",
    "n_meta_per_class",
];

fn apply_axis(config: &mut RunConfig, axis: &str, value: f64) -> Result<()> {
    match axis {
        "eta" => config.sgld.eta = value,
        "eta_w" => config.sgld.eta_w = value,
        "sigma" => config.sgld.sigma = value,
        "beta" => config.sgld.beta = value,
        "rho_theta_t" => config.sgld.rho_theta_t = value,
        "rho_theta_m" => config.sgld.rho_theta_m = value,
        "rho_w_t" => config.sgld.rho_w_t = value,
        "weight_decay" => config.sgld.weight_decay = value,
        "noise_scale" => config.sgld.noise_scale = value,
        "sgd_lr" => config.sgld.sgd_lr = value,
        "n_meta_per_class" => match &mut config.scenario {
            ScenarioSpec::Imbalanced { n_meta_per_class, .. } => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(CliError::Validation(
                        "n_meta_per_class values must be positive integers".into(),
                    ));
                }
                *n_meta_per_class = value as usize;
            }
            _ => {
                return Err(CliError::Validation(
                    "n_meta_per_class only applies to the imbalanced scenario".into(),
                ))
            }
        },
        other => {
            return Err(CliError::Validation(format!(
                "unknown sweep axis `{other}`; valid axes: {}",
                SWEEP_AXES.join(", ")
            )))
        }
    }
    Ok(())
}

/// Runs the sweep and writes `summary.csv` plus one run directory per value.
pub fn sweep(template: &RunConfig, axis: &str, values: &[f64], out_dir: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(CliError::Validation("sweep needs at least one value".into()));
    }
    // Validate the axis before doing any work.
    apply_axis(&mut template.clone(), axis, values[0])?;

    fs::create_dir_all(out_dir)?;
    let base_seed = template.run.seed;
    let scenario_seed = scenario_seed_of(template);
    let mut summary = String::from("axis,value,seed,test_accuracy,test_loss,meta_loss,tag_weight_means\n");
    for (i, &value) in values.iter().enumerate() {
        let mut config = template.clone();
        apply_axis(&mut config, axis, value)?;
        // Keep the data fixed; derive the training seed per value.
        set_scenario_seed(&mut config, scenario_seed);
        config.run.seed = Rng::new(base_seed).substream(i as u64).seed();

        let run_dir = out_dir.join(format!("{axis}_{i}"));
        let artifacts = run_experiment(&config, &run_dir)?;
        let test = evaluate(
            &artifacts.outcome.params,
            &artifacts.scenario.test.features,
            &artifacts.scenario.test.labels,
        )?;
        let meta = evaluate(
            &artifacts.outcome.params,
            &artifacts.scenario.meta.features,
            &artifacts.scenario.meta.labels,
        )?;
        let tag_means = match &artifacts.outcome.final_weights {
            Some(w) => {
                let s = &artifacts.scenario;
                let mut parts = Vec::new();
                for (t, name) in s.tag_legend.iter().enumerate() {
                    let (mut sum, mut n) = (0.0, 0usize);
                    for k in 0..s.train.len() {
                        if s.train.tags[k] == t {
                            sum += w[k];
                            n += 1;
                        }
                    }
                    if n > 0 {
                        parts.push(format!("{name}={}", sum / n as f64));
                    }
                }
                parts.join(";")
            }
            None => String::new(),
        };
        summary.push_str(&format!(
            "{axis},{value},{},{},{},{},{tag_means}\n",
            config.run.seed, test.accuracy, test.mean_loss, meta.mean_loss
        ));
    }
    fs::write(out_dir.join("summary.csv"), summary)?;
    Ok(())
}

fn scenario_seed_of(config: &RunConfig) -> Option<u64> {
    match &config.scenario {
        ScenarioSpec::Imbalanced { seed, .. }
        | ScenarioSpec::LabelNoise { seed, .. }
        | ScenarioSpec::DomainMixture { seed, .. } => Some(seed.unwrap_or(config.run.seed)),
        ScenarioSpec::Path { .. } => None,
    }
}

fn set_scenario_seed(config: &mut RunConfig, value: Option<u64>) {
    if let Some(v) = value {
        match &mut config.scenario {
            ScenarioSpec::Imbalanced { seed, .. }
            | ScenarioSpec::LabelNoise { seed, .. }
            | ScenarioSpec::DomainMixture { seed, .. } => *seed = Some(v),
            ScenarioSpec::Path { .. } => {}
        }
    }
}
