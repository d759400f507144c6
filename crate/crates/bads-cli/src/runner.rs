//! Experiment orchestration: resolve the scenario, train, and write the
//! run's artifacts (log.csv, weights_final.csv, config_echo, params json,
//! SVG plots). Reruns with the same config and seed produce byte-identical
//! logs and plots; wall-clock time goes only into summary.txt.

use std::fs;
use std::path::{Path, PathBuf};

use bads_core::data::Scenario;
use bads_core::nn::ModelParams;
use bads_core::trainer::{evaluate, train_run, Method, TrainLog, TrainOutcome};

use crate::config::{CheckpointPolicy, RunConfig};
use crate::error::{CliError, Result};
use crate::svg::{line_chart, Series, PALETTE};

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub outcome: TrainOutcome,
    pub scenario: Scenario,
}

fn warn_ignored_fields(method: Method) {
    if let Method::Baseline(kind) = method {
        let uses_beta = matches!(kind, bads_core::baselines::BaselineKind::RandomSelect);
        eprintln!(
            "note: baseline method ignores eta, eta_w, sigma{}, rho_*, s_avg, and noise_scale",
            if uses_beta { "" } else { ", beta" }
        );
    }
}

/// Runs one experiment end to end. On numerical divergence the partial log
/// is still flushed to disk before the error is returned.
pub fn run_experiment(config: &RunConfig, out_dir: &Path) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir)?;
    let method = config.method()?;
    let settings = config.settings()?;
    let scenario = config.scenario.resolve(config.run.seed)?;
    let cfg = config.sgld_config(&scenario);
    warn_ignored_fields(method);

    write_config_echo(config, &scenario, out_dir)?;

    let outcome = match train_run(method, &scenario, &cfg, &settings) {
        Ok(outcome) => outcome,
        Err(abort) => {
            write_log(&abort.partial_log, out_dir)?;
            return Err(CliError::from(abort.error));
        }
    };

    write_log(&outcome.log, out_dir)?;
    write_final_weights(&outcome, &scenario, out_dir)?;
    let chosen = match config.run.checkpoint {
        CheckpointPolicy::Last => &outcome.params,
        CheckpointPolicy::BestOnValidation => &outcome.best_params,
    };
    write_params(chosen, &out_dir.join("params_final.json"))?;
    export_plots(&outcome.log, out_dir)?;
    write_summary(config, &outcome, &scenario, out_dir)?;

    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        outcome,
        scenario,
    })
}

fn write_config_echo(config: &RunConfig, scenario: &Scenario, out_dir: &Path) -> Result<()> {
    let mut echo = config.to_toml();
    echo.push_str("\n[derived]\n");
    echo.push_str(&format!("n_t = {}\n", scenario.train.len()));
    echo.push_str(&format!("n_m = {}\n", scenario.meta.len()));
    echo.push_str(&format!("n_test = {}\n", scenario.test.len()));
    echo.push_str(&format!("num_classes = {}\n", scenario.num_classes));
    echo.push_str(&format!("feature_dim = {}\n", scenario.feature_dim()));
    echo.push_str(&format!(
        "tags = [{}]\n",
        scenario
            .tag_legend
            .iter()
            .map(|t| format!("\"{t}\""))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    fs::write(out_dir.join("config_echo"), echo)?;
    Ok(())
}

fn write_log(log: &TrainLog, out_dir: &Path) -> Result<()> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    fs::write(out_dir.join("log.csv"), buf)?;
    Ok(())
}

fn write_final_weights(outcome: &TrainOutcome, scenario: &Scenario, out_dir: &Path) -> Result<()> {
    let mut text = String::from("id,tag,weight\n");
    if let Some(weights) = &outcome.final_weights {
        for i in 0..scenario.train.len() {
            let tag = &scenario.tag_legend[scenario.train.tags[i]];
            text.push_str(&format!("{},{},{}\n", scenario.train.ids[i], tag, weights[i]));
        }
    }
    fs::write(out_dir.join("weights_final.csv"), text)?;
    Ok(())
}

pub fn write_params(params: &ModelParams, path: &Path) -> Result<()> {
    let json = serde_json::to_string(params)
        .map_err(|e| CliError::Validation(format!("params serialization: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("params: {e}")))
}

fn write_summary(
    config: &RunConfig,
    outcome: &TrainOutcome,
    scenario: &Scenario,
    out_dir: &Path,
) -> Result<()> {
    let test = evaluate(&outcome.params, &scenario.test.features, &scenario.test.labels)?;
    let meta = evaluate(&outcome.params, &scenario.meta.features, &scenario.meta.labels)?;
    let mut s = String::new();
    s.push_str(&format!("method: {}\n", config.run.method));
    s.push_str(&format!("seed: {}\n", config.run.seed));
    s.push_str(&format!("steps: {}\n", config.run.steps));
    s.push_str(&format!("final_test_accuracy: {}\n", test.accuracy));
    s.push_str(&format!("final_test_loss: {}\n", test.mean_loss));
    s.push_str(&format!("final_meta_loss: {}\n", meta.mean_loss));
    if let Some(w) = &outcome.final_weights {
        for (t, name) in scenario.tag_legend.iter().enumerate() {
            let (mut sum, mut n) = (0.0, 0usize);
            for i in 0..scenario.train.len() {
                if scenario.train.tags[i] == t {
                    sum += w[i];
                    n += 1;
                }
            }
            if n > 0 {
                s.push_str(&format!("final_mean_weight_{name}: {}\n", sum / n as f64));
            }
        }
    }
    s.push_str(&format!("wall_clock_s: {:.3}\n", outcome.log.wall_clock_s));
    fs::write(out_dir.join("summary.txt"), s)?;
    Ok(())
}

/// Writes the accuracy and per-tag weight curves as standalone SVGs.
pub fn export_plots(log: &TrainLog, out_dir: &Path) -> Result<()> {
    if log.rows.is_empty() {
        return Err(CliError::Validation("cannot plot an empty log".into()));
    }
    let acc_points: Vec<(f64, f64)> = log
        .rows
        .iter()
        .filter_map(|r| r.test_accuracy.map(|a| (r.step as f64, a)))
        .collect();
    let acc = line_chart(
        "Test accuracy",
        "training step",
        "accuracy",
        &[Series {
            name: "test accuracy".into(),
            color: PALETTE[0].into(),
            points: acc_points,
        }],
    );
    fs::write(out_dir.join("accuracy_vs_step.svg"), acc)?;

    let mut series = Vec::new();
    for (t, name) in log.tag_names.iter().enumerate() {
        let points: Vec<(f64, f64)> = log
            .rows
            .iter()
            .filter_map(|r| r.tag_weight_means.get(t).copied().flatten().map(|w| (r.step as f64, w)))
            .collect();
        series.push(Series {
            name: name.clone(),
            color: PALETTE[t % PALETTE.len()].into(),
            points,
        });
    }
    let weights = line_chart(
        "Mean batch weight by group",
        "training step",
        "mean weight",
        &series,
    );
    fs::write(out_dir.join("weights_vs_step.svg"), weights)?;
    Ok(())
}

/// Reads a log.csv back into a `TrainLog` (used by the plot subcommand).
pub fn read_log(path: &Path) -> Result<TrainLog> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Validation("log.csv is empty".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let fixed = [
        "step",
        "train_loss_weighted",
        "train_loss_unweighted",
        "meta_batch_loss",
        "meta_loss",
        "test_accuracy",
        "test_loss",
        "w_bar",
        "sum_w_est",
    ];
    if cols.len() < fixed.len() || cols[..fixed.len()] != fixed {
        return Err(CliError::Validation("log.csv header does not match the schema".into()));
    }
    let tag_names: Vec<String> = cols[fixed.len()..]
        .iter()
        .map(|c| {
            c.strip_prefix("mean_weight_")
                .map(str::to_string)
                .ok_or_else(|| CliError::Validation(format!("unexpected log column `{c}`")))
        })
        .collect::<Result<_>>()?;

    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| CliError::Validation(format!("bad float `{s}` in log.csv")))
        }
    };
    let mut log = TrainLog::new(tag_names);
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(CliError::Validation("log.csv row width mismatch".into()));
        }
        log.rows.push(bads_core::trainer::LogRow {
            step: f[0]
                .parse()
                .map_err(|_| CliError::Validation("bad step".into()))?,
            train_loss_weighted: parse_opt(f[1])?,
            train_loss_unweighted: f[2]
                .parse()
                .map_err(|_| CliError::Validation("bad train loss".into()))?,
            meta_batch_loss: parse_opt(f[3])?,
            meta_loss: parse_opt(f[4])?,
            test_accuracy: parse_opt(f[5])?,
            test_loss: parse_opt(f[6])?,
            w_bar: parse_opt(f[7])?,
            sum_w_est: parse_opt(f[8])?,
            tag_weight_means: f[9..]
                .iter()
                .map(|s| parse_opt(s))
                .collect::<Result<_>>()?,
        });
    }
    Ok(log)
}

/// Mean final weight per tag name, from a run's weights_final.csv.
pub fn tag_means_from_weights_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut sums: Vec<(String, f64, usize)> = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(CliError::Validation("weights_final.csv row width".into()));
        }
        let w: f64 = f[2]
            .parse()
            .map_err(|_| CliError::Validation("bad weight".into()))?;
        match sums.iter_mut().find(|(name, _, _)| name == f[1]) {
            Some((_, s, n)) => {
                *s += w;
                *n += 1;
            }
            None => sums.push((f[1].to_string(), w, 1)),
        }
    }
    Ok(sums
        .into_iter()
        .map(|(name, s, n)| (name, s / n as f64))
        .collect())
}
