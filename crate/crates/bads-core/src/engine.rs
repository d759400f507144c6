//! Log-posterior assembly and the joint SGLD updates.
//!
//! The target density over (θ, w) factors into a base prior on θ, a
//! sparsity prior on the instance weights, a weighted-train-data term, and
//! a meta-data likelihood:
//!
//! ```text
//! log p(θ, w | D_t, D_m) = log p(w) + log p(θ)
//!                          - Σ_i w_i · l(z_i^t; θ)
//!                          - Σ_j l(z_j^m; θ)        (+ const)
//! ```
//!
//! with `log p(θ) = -(λ/2)·‖θ‖²` and
//! `log p(w) = -(Σ_i w_i - ⌊N_t·β⌋)² / (2σ²)`.
//!
//! Each iteration takes one noisy ascent step per block on a minibatched
//! estimate of the gradient, with impact constants ρ rescaling the train and
//! meta terms:
//!
//! ```text
//! θ += (η/2)·[∇log p(θ) - ρ_θᵗ·N_t·∇E_{B_t}[w·l] - ρ_θᵐ·N_m·∇E_{B_m}[l]] + ε_θ·s·√η
//! w += (η_w/2)·[∇log p(w) - ρ_wᵗ·N_t·∇E_{B_t}[w·l]]                      + ε_w·s·√η_w
//! ```
//!
//! where `s` is the noise scale (1 = faithful Langevin noise, 0 =
//! deterministic mode). Off-batch weight coordinates are untouched. The full
//! weight sum inside `∇log p(w)` is estimated from the batch plus the
//! running average of recent batch means, which is treated as a constant
//! during differentiation.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::nn::{backward, forward, per_example_losses, ModelParams, ParamGrads};
use crate::rng::Rng;
use crate::weights::{net_inputs, weights_for_batch, WeightQuery, WeightState};

/// Every SGLD and prior hyperparameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgldConfig {
    /// Backbone step size η.
    pub eta: f64,
    /// Weight (or weight-net) step size η_w.
    pub eta_w: f64,
    /// Sparsity prior strength σ.
    pub sigma: f64,
    /// Target sparsity level β in (0, 1].
    pub beta: f64,
    /// Impact constant on the weighted train term of the θ update.
    pub rho_theta_t: f64,
    /// Impact constant on the meta term of the θ update.
    pub rho_theta_m: f64,
    /// Impact constant on the train term of the w update.
    pub rho_w_t: f64,
    /// Base-prior precision λ on θ (weight decay).
    pub weight_decay: f64,
    /// Train and meta set sizes.
    pub n_t: usize,
    pub n_m: usize,
    /// Minibatch sizes.
    pub batch_t: usize,
    pub batch_m: usize,
    /// Running-average window for the weight-sum estimate.
    pub s_avg: usize,
    /// Multiplier on the √η Gaussian noise; 0 disables it.
    pub noise_scale: f64,
    /// Plain-SGD learning rate used by the non-selection baselines only.
    pub sgd_lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(CoreError::Validation(msg.into()))
            }
        }
        check(self.eta > 0.0, "eta must be > 0")?;
        check(self.eta_w > 0.0, "eta_w must be > 0")?;
        check(self.sigma > 0.0, "sigma must be > 0")?;
        check(self.beta > 0.0 && self.beta <= 1.0, "beta must be in (0, 1]")?;
        check(self.rho_theta_t >= 0.0, "rho_theta_t must be >= 0")?;
        check(self.rho_theta_m >= 0.0, "rho_theta_m must be >= 0")?;
        check(self.rho_w_t >= 0.0, "rho_w_t must be >= 0")?;
        check(self.weight_decay >= 0.0, "weight_decay must be >= 0")?;
        check(self.s_avg >= 1, "s_avg must be >= 1")?;
        check(self.noise_scale >= 0.0, "noise_scale must be >= 0")?;
        check(self.sgd_lr > 0.0, "sgd_lr must be > 0")?;
        check(self.batch_t >= 1 && self.batch_t <= self.n_t, "batch_t must be in [1, n_t]")?;
        check(self.batch_m >= 1 && self.batch_m <= self.n_m.max(1), "batch_m must be in [1, n_m]")?;
        Ok(())
    }

    /// ⌊N_t·β⌋, the mode of the weight-sum prior.
    pub fn sparsity_target(&self) -> f64 {
        (self.n_t as f64 * self.beta).floor()
    }
}

/// A minibatch view: which examples, their features, and their labels.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub indices: Vec<usize>,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// ∇ log p(θ) for the 0-mean Gaussian base prior: -λ·θ elementwise.
pub fn log_prior_theta_grad(params: &ModelParams, weight_decay: f64) -> ParamGrads {
    let mut grads = ParamGrads::zeros_like(params);
    for (g, p) in grads.layers.iter_mut().zip(&params.layers) {
        g.weight.add_scaled(&p.weight, -weight_decay);
        g.bias.add_scaled(&p.bias, -weight_decay);
    }
    grads
}

/// Estimated full weight sum: batch sum plus `(N_t - |B|)·w̄`.
pub fn estimated_weight_sum(batch_weights: &[f64], w_bar: f64, n_t: usize) -> f64 {
    let batch_sum: f64 = batch_weights.iter().sum();
    batch_sum + (n_t - batch_weights.len()) as f64 * w_bar
}

/// ∂/∂w_i of the sparsity log-prior, identical for every batch member:
/// `-(S - ⌊N_t·β⌋)/σ²` with the running average held constant.
pub fn sparsity_prior_grad(batch_weights: &[f64], w_bar: f64, cfg: &SgldConfig) -> f64 {
    let s = estimated_weight_sum(batch_weights, w_bar, cfg.n_t);
    -(s - cfg.sparsity_target()) / (cfg.sigma * cfg.sigma)
}

/// Pushes the batch mean into the running-average window.
pub fn update_running_avg(state: &mut WeightState, batch_weights: &[f64]) {
    if batch_weights.is_empty() {
        return;
    }
    let mean = batch_weights.iter().sum::<f64>() / batch_weights.len() as f64;
    state.push_batch_mean(mean);
}

/// Langevin step on a flat coordinate block:
/// `x += (η/2)·drift + noise_scale·√η·ε`.
pub fn langevin_update(x: &mut [f64], drift: &[f64], eta: f64, noise_scale: f64, rng: &mut Rng) {
    debug_assert_eq!(x.len(), drift.len());
    let half_eta = 0.5 * eta;
    let noise = noise_scale * eta.sqrt();
    if noise == 0.0 {
        for (v, d) in x.iter_mut().zip(drift) {
            *v += half_eta * d;
        }
    } else {
        for (v, d) in x.iter_mut().zip(drift) {
            *v += half_eta * d + noise * rng.standard_normal();
        }
    }
}

/// Per-coordinate drift of the scalar-weight update for one batch:
/// `prior_grad - ρ_wᵗ·N_t·l_i/|B|`.
pub fn scalar_weight_drift(losses: &[f64], prior_grad: f64, cfg: &SgldConfig) -> Vec<f64> {
    let c = cfg.rho_w_t * cfg.n_t as f64 / losses.len() as f64;
    losses.iter().map(|&l| prior_grad - c * l).collect()
}

fn ensure_finite(ok: bool, step: usize, term: &'static str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CoreError::NonFinite { step, term })
    }
}

/// Builds one-hot label rows for a batch.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (r, &l) in labels.iter().enumerate() {
        m.set(r, l, 1.0);
    }
    m
}

/// Summary of one θ step, for logging.
#[derive(Debug, Clone, Copy)]
pub struct ThetaStepStats {
    pub train_loss_weighted: f64,
    pub train_loss_unweighted: f64,
    pub meta_loss: f64,
}

/// One SGLD step on the backbone parameters.
///
/// Runs one forward/backward on each batch, assembles the drift
/// `∇log p(θ) - ρ_θᵗ·N_t·∇E[w·l] - ρ_θᵐ·N_m·∇E[l]`, and applies the noisy
/// update in place. Weights for the train batch come from `state` under the
/// current parameters and are treated as constants here.
pub fn sgld_step_theta(
    params: &mut ModelParams,
    state: &WeightState,
    train: &Minibatch,
    meta: &Minibatch,
    cfg: &SgldConfig,
    rng: &mut Rng,
    step: usize,
) -> Result<ThetaStepStats> {
    let trace_t = forward(params, &train.features)?;
    let losses_t = per_example_losses(&trace_t, &train.labels)?;
    let onehot;
    let query = if state.is_net() {
        onehot = one_hot(&train.labels, params.num_classes());
        WeightQuery {
            indices: &train.indices,
            embeddings: Some(trace_t.embedding()),
            labels_onehot: Some(&onehot),
        }
    } else {
        WeightQuery::by_index(&train.indices)
    };
    let w = weights_for_batch(state, &query)?;
    let bw_t = backward(params, &trace_t, &w, &train.labels)?;
    ensure_finite(bw_t.grads.is_finite(), step, "train gradient")?;

    let trace_m = forward(params, &meta.features)?;
    let losses_m = per_example_losses(&trace_m, &meta.labels)?;
    let bw_m = backward(params, &trace_m, &vec![1.0; meta.len()], &meta.labels)?;
    ensure_finite(bw_m.grads.is_finite(), step, "meta gradient")?;

    let scale_t = cfg.rho_theta_t * cfg.n_t as f64;
    let scale_m = cfg.rho_theta_m * cfg.n_m as f64;
    let lambda = cfg.weight_decay;

    for (k, layer) in params.layers.iter_mut().enumerate() {
        for (part, gt, gm) in [
            (&mut layer.weight, &bw_t.grads.layers[k].weight, &bw_m.grads.layers[k].weight),
            (&mut layer.bias, &bw_t.grads.layers[k].bias, &bw_m.grads.layers[k].bias),
        ] {
            let drift: Vec<f64> = part
                .data()
                .iter()
                .zip(gt.data().iter().zip(gm.data()))
                .map(|(&p, (&t, &m))| -lambda * p - scale_t * t - scale_m * m)
                .collect();
            langevin_update(part.data_mut(), &drift, cfg.eta, cfg.noise_scale, rng);
        }
    }
    ensure_finite(params.is_finite(), step, "updated parameters")?;

    let n_t = train.len() as f64;
    let weighted: f64 = w.iter().zip(&losses_t).map(|(wi, li)| wi * li).sum::<f64>() / n_t;
    let unweighted: f64 = losses_t.iter().sum::<f64>() / n_t;
    let meta_mean: f64 = losses_m.iter().sum::<f64>() / meta.len() as f64;
    ensure_finite(weighted.is_finite() && unweighted.is_finite() && meta_mean.is_finite(), step, "batch loss")?;
    Ok(ThetaStepStats {
        train_loss_weighted: weighted,
        train_loss_unweighted: unweighted,
        meta_loss: meta_mean,
    })
}

/// Summary of one w step: the updated weights of the touched batch.
#[derive(Debug, Clone)]
pub struct WeightStepStats {
    pub batch_weights: Vec<f64>,
}

/// One SGLD step on the instance weights (or the weight network).
///
/// Scalar variant: each batch coordinate moves by
/// `(η_w/2)·[prior_grad - ρ_wᵗ·N_t·l_i/|B|]` plus noise and is clamped to
/// [0, 1]; off-batch coordinates are untouched. Network variant: the same
/// objective is differentiated through `w_i = sigmoid(affine(input_i))` and
/// the affine parameters take the noisy step; embeddings are detached so the
/// backbone never moves here. Afterwards the running average absorbs the
/// batch's new mean weight.
pub fn sgld_step_w(
    params: &ModelParams,
    state: &mut WeightState,
    train: &Minibatch,
    cfg: &SgldConfig,
    rng: &mut Rng,
    step: usize,
) -> Result<WeightStepStats> {
    let trace = forward(params, &train.features)?;
    let losses = per_example_losses(&trace, &train.labels)?;
    ensure_finite(losses.iter().all(|l| l.is_finite()), step, "train losses")?;
    let w_bar = state.running_avg();

    let new_batch_weights = match state {
        WeightState::Scalar(s) => {
            let mut batch_w: Vec<f64> =
                train.indices.iter().map(|&i| s.w[i]).collect();
            let prior = sparsity_prior_grad(&batch_w, w_bar, cfg);
            ensure_finite(prior.is_finite(), step, "sparsity prior gradient")?;
            let drift = scalar_weight_drift(&losses, prior, cfg);
            langevin_update(&mut batch_w, &drift, cfg.eta_w, cfg.noise_scale, rng);
            for (w, &i) in batch_w.iter_mut().zip(&train.indices) {
                *w = clamp_unit(*w);
                s.w[i] = *w;
            }
            batch_w
        }
        WeightState::Net(net) => {
            let onehot = one_hot(&train.labels, params.num_classes());
            let query = WeightQuery {
                indices: &train.indices,
                embeddings: Some(trace.embedding()),
                labels_onehot: Some(&onehot),
            };
            let inputs = net_inputs(net, &query)?;
            let batch_w: Vec<f64> =
                (0..inputs.rows()).map(|r| net.score_row(inputs.row(r))).collect();
            let prior = sparsity_prior_grad(&batch_w, w_bar, cfg);
            ensure_finite(prior.is_finite(), step, "sparsity prior gradient")?;
            let dw = scalar_weight_drift(&losses, prior, cfg);
            // Chain through the sigmoid: dO/dz_i = dO/dw_i · w_i·(1-w_i).
            let dz: Vec<f64> = dw
                .iter()
                .zip(&batch_w)
                .map(|(&d, &w)| d * w * (1.0 - w))
                .collect();
            let mut grad_w = vec![0.0; net.weight.rows()];
            let mut grad_b = 0.0;
            for (r, &dzr) in dz.iter().enumerate() {
                for (g, &x) in grad_w.iter_mut().zip(inputs.row(r)) {
                    *g += dzr * x;
                }
                grad_b += dzr;
            }
            ensure_finite(
                grad_w.iter().all(|g| g.is_finite()) && grad_b.is_finite(),
                step,
                "weight net gradient",
            )?;
            langevin_update(net.weight.data_mut(), &grad_w, cfg.eta_w, cfg.noise_scale, rng);
            let mut bias = [net.bias];
            langevin_update(&mut bias, &[grad_b], cfg.eta_w, cfg.noise_scale, rng);
            net.bias = bias[0];
            ensure_finite(net.weight.is_finite() && net.bias.is_finite(), step, "updated weight net")?;
            (0..inputs.rows()).map(|r| net.score_row(inputs.row(r))).collect()
        }
    };

    update_running_avg(state, &new_batch_weights);
    Ok(WeightStepStats {
        batch_weights: new_batch_weights,
    })
}

/// The additive pieces of the log-posterior, exposed so tests and the
/// posterior oracle can assemble or inspect them independently.
#[derive(Debug, Clone, Copy)]
pub struct LogPosteriorParts {
    pub log_prior_w: f64,
    pub log_prior_theta: f64,
    pub weighted_train_nll: f64,
    pub meta_nll: f64,
}

impl LogPosteriorParts {
    pub fn total(&self) -> f64 {
        self.log_prior_w + self.log_prior_theta - self.weighted_train_nll - self.meta_nll
    }
}

/// Assembles the log-posterior pieces from raw losses and weights; shared by
/// the network path and the tractable micro-model.
pub fn log_posterior_parts(
    train_losses: &[f64],
    weights: &[f64],
    meta_losses: &[f64],
    theta_squared_norm: f64,
    weight_decay: f64,
    sigma: f64,
    sparsity_target: f64,
) -> LogPosteriorParts {
    let sum_w: f64 = weights.iter().sum();
    let gap = sum_w - sparsity_target;
    LogPosteriorParts {
        log_prior_w: -gap * gap / (2.0 * sigma * sigma),
        log_prior_theta: -0.5 * weight_decay * theta_squared_norm,
        weighted_train_nll: weights.iter().zip(train_losses).map(|(w, l)| w * l).sum(),
        meta_nll: meta_losses.iter().sum(),
    }
}

/// Full-batch log-posterior (up to an additive constant). Intended for
/// small datasets: tests and the posterior oracle, not the training loop.
pub fn assemble_log_posterior(
    params: &ModelParams,
    state: &WeightState,
    train: &Minibatch,
    meta: &Minibatch,
    cfg: &SgldConfig,
) -> Result<f64> {
    let trace_t = forward(params, &train.features)?;
    let losses_t = per_example_losses(&trace_t, &train.labels)?;
    let onehot;
    let query = if state.is_net() {
        onehot = one_hot(&train.labels, params.num_classes());
        WeightQuery {
            indices: &train.indices,
            embeddings: Some(trace_t.embedding()),
            labels_onehot: Some(&onehot),
        }
    } else {
        WeightQuery::by_index(&train.indices)
    };
    let w = weights_for_batch(state, &query)?;
    let trace_m = forward(params, &meta.features)?;
    let losses_m = per_example_losses(&trace_m, &meta.labels)?;
    let parts = log_posterior_parts(
        &losses_t,
        &w,
        &losses_m,
        params.squared_norm(),
        cfg.weight_decay,
        cfg.sigma,
        cfg.sparsity_target(),
    );
    Ok(parts.total())
}
