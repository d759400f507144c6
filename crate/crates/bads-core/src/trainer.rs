//! The training loop shared by the selection methods and the baselines,
//! plus evaluation and the per-step log.
//!
//! Selection runs alternate one backbone SGLD step and one weight SGLD step
//! per iteration; baseline runs take one plain SGD step on their effective
//! dataset. Every method emits the same log schema (absent quantities stay
//! empty), so cross-method comparisons are mechanical.

use std::io::Write;

use crate::baselines::{build_baseline_stream, BaselineKind};
use crate::data::Scenario;
use crate::engine::{
    estimated_weight_sum, one_hot, sgld_step_theta, sgld_step_w, Minibatch, SgldConfig,
};
use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::nn::{backward, forward, per_example_losses, Activation, ModelParams};
use crate::rng::Rng;
use crate::stream::BatchStream;
use crate::weights::{weights_for_batch, WeightQuery, WeightState};

/// Which trainer drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    BadsScalar,
    BadsWeightNet,
    Baseline(BaselineKind),
}

impl Method {
    pub fn is_selection(&self) -> bool {
        matches!(self, Method::BadsScalar | Method::BadsWeightNet)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::BadsScalar => "bads-scalar",
            Method::BadsWeightNet => "bads-weightnet",
            Method::Baseline(BaselineKind::Mixing) => "mixing",
            Method::Baseline(BaselineKind::MetaOnly) => "meta_only",
            Method::Baseline(BaselineKind::RandomSelect) => "random_select",
            Method::Baseline(BaselineKind::DuplicateMeta) => "duplicate_meta",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bads-scalar" => Ok(Method::BadsScalar),
            "bads-weightnet" => Ok(Method::BadsWeightNet),
            "mixing" => Ok(Method::Baseline(BaselineKind::Mixing)),
            "meta_only" => Ok(Method::Baseline(BaselineKind::MetaOnly)),
            "random_select" => Ok(Method::Baseline(BaselineKind::RandomSelect)),
            "duplicate_meta" => Ok(Method::Baseline(BaselineKind::DuplicateMeta)),
            other => Err(CoreError::Validation(format!("unknown method `{other}`"))),
        }
    }
}

/// Architecture and loop settings that are not SGLD hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Weight-net input includes the one-hot label.
    pub label_concat: bool,
    /// Test/meta evaluation cadence in steps.
    pub eval_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            hidden: vec![16],
            activation: Activation::Tanh,
            label_concat: false,
            eval_every: 100,
        }
    }
}

/// One log row per training step. Evaluation fields fill only on cadence
/// rows; weight fields only for selection methods.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub step: usize,
    pub train_loss_weighted: Option<f64>,
    pub train_loss_unweighted: f64,
    pub meta_batch_loss: Option<f64>,
    pub meta_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub w_bar: Option<f64>,
    pub sum_w_est: Option<f64>,
    pub tag_weight_means: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub tag_names: Vec<String>,
    pub rows: Vec<LogRow>,
    /// Total run time in seconds; reported in the run summary, never in the
    /// CSV (logs must be byte-identical across reruns of one seed).
    pub wall_clock_s: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    pub fn new(tag_names: Vec<String>) -> Self {
        TrainLog {
            tag_names,
            rows: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn header(&self) -> String {
        let mut cols = vec![
            "step".to_string(),
            "train_loss_weighted".to_string(),
            "train_loss_unweighted".to_string(),
            "meta_batch_loss".to_string(),
            "meta_loss".to_string(),
            "test_accuracy".to_string(),
            "test_loss".to_string(),
            "w_bar".to_string(),
            "sum_w_est".to_string(),
        ];
        for name in &self.tag_names {
            cols.push(format!("mean_weight_{name}"));
        }
        cols.join(",")
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.header())?;
        for r in &self.rows {
            let mut fields = vec![
                r.step.to_string(),
                fmt_opt(r.train_loss_weighted),
                r.train_loss_unweighted.to_string(),
                fmt_opt(r.meta_batch_loss),
                fmt_opt(r.meta_loss),
                fmt_opt(r.test_accuracy),
                fmt_opt(r.test_loss),
                fmt_opt(r.w_bar),
                fmt_opt(r.sum_w_est),
            ];
            for &m in &r.tag_weight_means {
                fields.push(fmt_opt(m));
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Argmax accuracy and mean loss of `params` on a labeled feature set.
pub fn evaluate(params: &ModelParams, features: &Matrix, labels: &[usize]) -> Result<EvalMetrics> {
    if features.rows() == 0 {
        return Err(CoreError::Validation("cannot evaluate an empty split".into()));
    }
    let trace = forward(params, features)?;
    let losses = per_example_losses(&trace, labels)?;
    let logits = &trace.logits;
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let pred = if row.len() == 1 {
            usize::from(row[0] > 0.0)
        } else {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("nonempty row")
        };
        if pred == label {
            correct += 1;
        }
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / labels.len() as f64,
        mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
    })
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Last-iterate parameters.
    pub params: ModelParams,
    /// Parameters with the lowest full-meta loss seen at any evaluation.
    pub best_params: ModelParams,
    pub log: TrainLog,
    /// Final weight of every train example, selection methods only.
    pub final_weights: Option<Vec<f64>>,
    pub weight_state: Option<WeightState>,
}

/// A run that aborted (non-finite loss or gradient); the log collected so
/// far is preserved so the runner can still flush artifacts.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: CoreError,
    pub partial_log: TrainLog,
}

fn minibatch(features: &Matrix, labels: &[usize], indices: Vec<usize>) -> Minibatch {
    let feats = features.select_rows(&indices);
    let labs = indices.iter().map(|&i| labels[i]).collect();
    Minibatch {
        indices,
        features: feats,
        labels: labs,
    }
}

fn tag_means(
    batch_weights: &[f64],
    batch_indices: &[usize],
    tags: &[usize],
    n_tags: usize,
) -> Vec<Option<f64>> {
    let mut sums = vec![0.0; n_tags];
    let mut counts = vec![0usize; n_tags];
    for (&w, &i) in batch_weights.iter().zip(batch_indices) {
        let t = tags[i];
        sums[t] += w;
        counts[t] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect()
}

/// Substream ids for the per-run random streams.
pub mod streams {
    pub const INIT: u64 = 10;
    pub const TRAIN_SHUFFLE: u64 = 11;
    pub const META_SHUFFLE: u64 = 12;
    pub const THETA_NOISE: u64 = 13;
    pub const W_NOISE: u64 = 14;
    pub const BASELINE: u64 = 15;
}

/// Backbone initialization for a scenario; identical across methods for a
/// given seed so method comparisons start from the same parameters.
pub fn init_backbone(
    scenario: &Scenario,
    settings: &TrainSettings,
    seed: u64,
) -> Result<ModelParams> {
    let mut widths = vec![scenario.feature_dim()];
    widths.extend_from_slice(&settings.hidden);
    widths.push(scenario.num_classes);
    let mut rng = Rng::new(seed).substream(streams::INIT);
    ModelParams::init_mlp(&widths, settings.activation, &mut rng)
}

fn embedding_dim(scenario: &Scenario, settings: &TrainSettings) -> usize {
    settings
        .hidden
        .last()
        .copied()
        .unwrap_or_else(|| scenario.feature_dim())
}

/// Initial weight state for a selection method: every weight starts at the
/// prior mode (mean weight β).
pub fn init_weight_state(
    method: Method,
    scenario: &Scenario,
    settings: &TrainSettings,
    cfg: &SgldConfig,
) -> Option<WeightState> {
    match method {
        Method::BadsScalar => Some(WeightState::scalar(cfg.n_t, cfg.beta, cfg.s_avg)),
        Method::BadsWeightNet => {
            let mut dim = embedding_dim(scenario, settings);
            if settings.label_concat {
                dim += scenario.num_classes;
            }
            Some(WeightState::net(dim, cfg.beta, settings.label_concat, cfg.s_avg))
        }
        Method::Baseline(_) => None,
    }
}

/// Runs a full training loop and returns the outcome, or the abort record
/// with the partial log when the run diverged.
pub fn train_run(
    method: Method,
    scenario: &Scenario,
    cfg: &SgldConfig,
    settings: &TrainSettings,
) -> std::result::Result<TrainOutcome, Box<TrainAbort>> {
    let started = std::time::Instant::now();
    let mut log = TrainLog::new(scenario.tag_legend.clone());
    let fail = |error: CoreError, log: TrainLog| {
        Box::new(TrainAbort {
            error,
            partial_log: log,
        })
    };

    if let Err(e) = cfg.validate() {
        return Err(fail(e, log));
    }
    let root = Rng::new(cfg.seed);
    let mut params = match init_backbone(scenario, settings, cfg.seed) {
        Ok(p) => p,
        Err(e) => return Err(fail(e, log)),
    };
    let mut best_params = params.clone();
    let mut best_meta_loss = f64::INFINITY;
    let mut state = init_weight_state(method, scenario, settings, cfg);

    let n_tags = scenario.tag_legend.len();
    let mut theta_rng = root.substream(streams::THETA_NOISE);
    let mut w_rng = root.substream(streams::W_NOISE);

    let result: Result<()> = (|| {
        match method {
            Method::BadsScalar | Method::BadsWeightNet => {
                let state = state.as_mut().expect("selection methods carry weight state");
                let mut train_stream = BatchStream::new(
                    scenario.train.len(),
                    cfg.batch_t,
                    root.substream(streams::TRAIN_SHUFFLE),
                );
                let mut meta_stream = BatchStream::new(
                    scenario.meta.len(),
                    cfg.batch_m,
                    root.substream(streams::META_SHUFFLE),
                );
                for step in 0..cfg.steps {
                    let tb = minibatch(
                        &scenario.train.features,
                        &scenario.train.labels,
                        train_stream.next_batch(),
                    );
                    let mb = minibatch(
                        &scenario.meta.features,
                        &scenario.meta.labels,
                        meta_stream.next_batch(),
                    );
                    let theta_stats =
                        sgld_step_theta(&mut params, state, &tb, &mb, cfg, &mut theta_rng, step)?;
                    let w_stats = sgld_step_w(&params, state, &tb, cfg, &mut w_rng, step)?;

                    let w_bar = state.running_avg();
                    let mut row = LogRow {
                        step,
                        train_loss_weighted: Some(theta_stats.train_loss_weighted),
                        train_loss_unweighted: theta_stats.train_loss_unweighted,
                        meta_batch_loss: Some(theta_stats.meta_loss),
                        meta_loss: None,
                        test_accuracy: None,
                        test_loss: None,
                        w_bar: Some(w_bar),
                        sum_w_est: Some(estimated_weight_sum(&w_stats.batch_weights, w_bar, cfg.n_t)),
                        tag_weight_means: tag_means(
                            &w_stats.batch_weights,
                            &tb.indices,
                            &scenario.train.tags,
                            n_tags,
                        ),
                    };
                    let last = step + 1 == cfg.steps;
                    if (step + 1) % settings.eval_every == 0 || last {
                        let test = evaluate(&params, &scenario.test.features, &scenario.test.labels)?;
                        let meta = evaluate(&params, &scenario.meta.features, &scenario.meta.labels)?;
                        row.test_accuracy = Some(test.accuracy);
                        row.test_loss = Some(test.mean_loss);
                        row.meta_loss = Some(meta.mean_loss);
                        if meta.mean_loss < best_meta_loss {
                            best_meta_loss = meta.mean_loss;
                            best_params = params.clone();
                        }
                    }
                    log.rows.push(row);
                }
                Ok(())
            }
            Method::Baseline(kind) => {
                let mut data = build_baseline_stream(
                    kind,
                    scenario,
                    cfg,
                    root.substream(streams::BASELINE),
                    root.substream(streams::TRAIN_SHUFFLE),
                )?;
                for step in 0..cfg.steps {
                    let idx = data.stream.next_batch();
                    let batch = minibatch(&data.features, &data.labels, idx);
                    let trace = forward(&params, &batch.features)?;
                    let losses = per_example_losses(&trace, &batch.labels)?;
                    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
                    if !mean_loss.is_finite() {
                        return Err(CoreError::NonFinite {
                            step,
                            term: "baseline batch loss",
                        });
                    }
                    let bw = backward(&params, &trace, &vec![1.0; batch.len()], &batch.labels)?;
                    if !bw.grads.is_finite() {
                        return Err(CoreError::NonFinite {
                            step,
                            term: "baseline gradient",
                        });
                    }
                    for (layer, grad) in params.layers.iter_mut().zip(&bw.grads.layers) {
                        layer.weight.add_scaled(&grad.weight, -cfg.sgd_lr);
                        layer.bias.add_scaled(&grad.bias, -cfg.sgd_lr);
                    }
                    let mut row = LogRow {
                        step,
                        train_loss_weighted: None,
                        train_loss_unweighted: mean_loss,
                        meta_batch_loss: None,
                        meta_loss: None,
                        test_accuracy: None,
                        test_loss: None,
                        w_bar: None,
                        sum_w_est: None,
                        tag_weight_means: vec![None; n_tags],
                    };
                    let last = step + 1 == cfg.steps;
                    if (step + 1) % settings.eval_every == 0 || last {
                        let test = evaluate(&params, &scenario.test.features, &scenario.test.labels)?;
                        let meta = evaluate(&params, &scenario.meta.features, &scenario.meta.labels)?;
                        row.test_accuracy = Some(test.accuracy);
                        row.test_loss = Some(test.mean_loss);
                        row.meta_loss = Some(meta.mean_loss);
                        if meta.mean_loss < best_meta_loss {
                            best_meta_loss = meta.mean_loss;
                            best_params = params.clone();
                        }
                    }
                    log.rows.push(row);
                }
                Ok(())
            }
        }
    })();

    log.wall_clock_s = started.elapsed().as_secs_f64();
    if let Err(e) = result {
        return Err(fail(e, log));
    }

    let final_weights = match (&state, method) {
        (Some(s), _) => Some(match snapshot_weights(s, scenario, settings, &params) {
            Ok(w) => w,
            Err(e) => return Err(fail(e, log)),
        }),
        (None, _) => None,
    };

    Ok(TrainOutcome {
        params,
        best_params,
        log,
        final_weights,
        weight_state: state,
    })
}

/// Current weight of every train example under the final parameters.
pub fn snapshot_weights(
    state: &WeightState,
    scenario: &Scenario,
    _settings: &TrainSettings,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    match state {
        WeightState::Scalar(s) => Ok(s.w.clone()),
        WeightState::Net(_) => {
            let trace = forward(params, &scenario.train.features)?;
            let indices: Vec<usize> = (0..scenario.train.len()).collect();
            let onehot = one_hot(&scenario.train.labels, params.num_classes());
            let query = WeightQuery {
                indices: &indices,
                embeddings: Some(trace.embedding()),
                labels_onehot: Some(&onehot),
            };
            weights_for_batch(state, &query)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_imbalanced;

    fn tiny_cfg(n_t: usize, n_m: usize) -> SgldConfig {
        SgldConfig {
            eta: 0.5,
            eta_w: 0.01,
            sigma: 0.5,
            beta: 0.1,
            rho_theta_t: 1.0,
            rho_theta_m: 1.0,
            rho_w_t: 1.0,
            weight_decay: 0.01,
            n_t,
            n_m,
            batch_t: 8,
            batch_m: 4,
            s_avg: 10,
            noise_scale: 0.0,
            sgd_lr: 0.1,
            steps: 5,
            seed: 3,
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let s = gen_imbalanced(5, 30, 10, 5, 4.0).unwrap();
        let mut cfg = tiny_cfg(s.train.len(), s.meta.len());
        cfg.steps = 0;
        let settings = TrainSettings::default();
        let out = train_run(Method::Baseline(BaselineKind::Mixing), &s, &cfg, &settings).unwrap();
        let init = init_backbone(&s, &settings, cfg.seed).unwrap();
        assert_eq!(out.params, init);
        assert!(out.log.rows.is_empty());
    }

    #[test]
    fn fair_start_same_init_across_methods() {
        let s = gen_imbalanced(6, 30, 10, 5, 4.0).unwrap();
        let cfg = tiny_cfg(s.train.len(), s.meta.len());
        let settings = TrainSettings::default();
        let a = train_run(Method::BadsScalar, &s, &cfg, &settings).unwrap();
        let b = train_run(Method::Baseline(BaselineKind::MetaOnly), &s, &cfg, &settings).unwrap();
        // Same seed: both saw identical initial parameters, so with zero
        // steps they'd be equal; here we just re-derive the init and check.
        let init = init_backbone(&s, &settings, cfg.seed).unwrap();
        assert_ne!(a.params, init);
        assert_ne!(b.params, init);
        let mut cfg0 = cfg.clone();
        cfg0.steps = 0;
        let a0 = train_run(Method::BadsScalar, &s, &cfg0, &settings).unwrap();
        let b0 = train_run(Method::Baseline(BaselineKind::MetaOnly), &s, &cfg0, &settings).unwrap();
        assert_eq!(a0.params, b0.params);
    }

    #[test]
    fn evaluate_perfect_separator_scores_one() {
        let s = gen_imbalanced(7, 20, 20, 5, 6.0).unwrap();
        // Hand-built linear separator along the generating direction.
        let mut w = Matrix::zeros(s.feature_dim(), 2);
        w.set(0, 0, -5.0);
        w.set(0, 1, 5.0);
        let params = ModelParams {
            layers: vec![crate::nn::Layer {
                weight: w,
                bias: Matrix::zeros(1, 2),
            }],
            activation: Activation::Relu,
        };
        let m = evaluate(&params, &s.test.features, &s.test.labels).unwrap();
        assert!(m.accuracy >= 0.99);
    }

    #[test]
    fn evaluate_random_guess_near_chance() {
        let s = crate::data::gen_label_noise(8, 100, 4, 0.0, crate::data::NoiseMode::Symmetric).unwrap();
        let params = ModelParams {
            layers: vec![crate::nn::Layer {
                weight: Matrix::zeros(s.feature_dim(), 4),
                bias: Matrix::zeros(1, 4),
            }],
            activation: Activation::Relu,
        };
        // All-zero logits: argmax picks class 0 deterministically; on the
        // balanced test set that is exactly chance level.
        let m = evaluate(&params, &s.test.features, &s.test.labels).unwrap();
        let n = s.test.len() as f64;
        let p = 0.25;
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!((m.accuracy - p).abs() <= 3.0 * sigma + 1e-9, "accuracy {}", m.accuracy);
    }

    #[test]
    fn evaluate_rejects_empty_and_bad_labels() {
        let params = ModelParams {
            layers: vec![crate::nn::Layer {
                weight: Matrix::zeros(2, 2),
                bias: Matrix::zeros(1, 2),
            }],
            activation: Activation::Relu,
        };
        let empty = Matrix::zeros(0, 2);
        assert!(matches!(
            evaluate(&params, &empty, &[]),
            Err(CoreError::Validation(_))
        ));
        let x = Matrix::zeros(2, 2);
        assert!(matches!(
            evaluate(&params, &x, &[5, 0]),
            Err(CoreError::Validation(_))
        ));
    }

    #[test]
    fn log_csv_has_stable_schema_across_methods() {
        let s = gen_imbalanced(9, 30, 10, 5, 4.0).unwrap();
        let cfg = tiny_cfg(s.train.len(), s.meta.len());
        let settings = TrainSettings::default();
        let a = train_run(Method::BadsScalar, &s, &cfg, &settings).unwrap();
        let b = train_run(Method::Baseline(BaselineKind::Mixing), &s, &cfg, &settings).unwrap();
        assert_eq!(a.log.header(), b.log.header());
        let mut buf_a = Vec::new();
        a.log.write_csv(&mut buf_a).unwrap();
        let text = String::from_utf8(buf_a).unwrap();
        assert!(text.starts_with("step,train_loss_weighted"));
    }
}
