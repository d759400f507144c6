//! Central finite-difference oracles for every analytic gradient path:
//! backbone backprop (all activations, both losses), the embedding
//! gradient, the sparsity prior, the assembled log-posterior drifts, and
//! the weight-net objective.

use bads_core::engine::{
    assemble_log_posterior, sgld_step_theta, sgld_step_w, sparsity_prior_grad, Minibatch,
    SgldConfig,
};
use bads_core::matrix::Matrix;
use bads_core::nn::{
    backward, forward, gaussian_noise, per_example_losses, sigmoid, Activation, Layer, ModelParams,
};
use bads_core::rng::Rng;
use bads_core::weights::{ScalarWeights, RunningAvg, WeightNet, WeightState};

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Visits every (layer, part, index) coordinate of a parameter set.
fn coords(params: &ModelParams) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        for i in 0..layer.weight.data().len() {
            out.push((l, 0, i));
        }
        for i in 0..layer.bias.data().len() {
            out.push((l, 1, i));
        }
    }
    out
}

fn coord_mut(params: &mut ModelParams, c: (usize, usize, usize)) -> &mut f64 {
    let layer = &mut params.layers[c.0];
    let m = if c.1 == 0 { &mut layer.weight } else { &mut layer.bias };
    &mut m.data_mut()[c.2]
}

fn coord_val(params: &ModelParams, c: (usize, usize, usize)) -> f64 {
    let layer = &params.layers[c.0];
    let m = if c.1 == 0 { &layer.weight } else { &layer.bias };
    m.data()[c.2]
}

fn grad_coord(grads: &bads_core::nn::ParamGrads, c: (usize, usize, usize)) -> f64 {
    let layer = &grads.layers[c.0];
    let m = if c.1 == 0 { &layer.weight } else { &layer.bias };
    m.data()[c.2]
}

fn random_config(rng: &mut Rng, idx: usize) -> (ModelParams, Matrix, Vec<usize>, Vec<f64>) {
    let activations = [Activation::Relu, Activation::Sigmoid, Activation::Tanh];
    let activation = activations[idx % 3];
    let input = 2 + rng.below(3);
    let out = match idx % 4 {
        0 => 1, // logistic head
        k => k + 1,
    };
    let mut widths = vec![input];
    for _ in 0..(1 + rng.below(2)) {
        widths.push(3 + rng.below(3));
    }
    widths.push(out);
    let mut params = ModelParams::init_mlp(&widths, activation, rng).unwrap();
    // Jitter the zero-initialized biases: dead relu paths otherwise produce
    // pre-activations exactly on the kink, where central differences are
    // ill-defined.
    for layer in &mut params.layers {
        for b in layer.bias.data_mut() {
            *b = 0.2 * rng.standard_normal() + 0.05;
        }
    }
    let batch = 3 + rng.below(5);
    let features = gaussian_noise(rng, batch, input);
    let num_classes = if out == 1 { 2 } else { out };
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(num_classes)).collect();
    let weights: Vec<f64> = (0..batch).map(|_| rng.uniform()).collect();
    (params, features, labels, weights)
}

fn weighted_mean_loss(params: &ModelParams, features: &Matrix, labels: &[usize], w: &[f64]) -> f64 {
    let trace = forward(params, features).unwrap();
    let losses = per_example_losses(&trace, labels).unwrap();
    w.iter().zip(&losses).map(|(wi, li)| wi * li).sum::<f64>() / labels.len() as f64
}

#[test]
fn backbone_gradients_match_finite_differences() {
    let mut rng = Rng::new(2024);
    for idx in 0..24 {
        let (params, features, labels, weights) = random_config(&mut rng, idx);
        let trace = forward(&params, &features).unwrap();
        let analytic = backward(&params, &trace, &weights, &labels).unwrap();

        for c in coords(&params) {
            let mut p = params.clone();
            let base = *coord_mut(&mut p, c);
            let numeric = central_diff(
                |x| {
                    let mut q = params.clone();
                    *coord_mut(&mut q, c) = x;
                    weighted_mean_loss(&q, &features, &labels, &weights)
                },
                base,
            );
            let a = grad_coord(&analytic.grads, c);
            assert!(
                rel_err(a, numeric) <= REL_TOL,
                "config {idx} coord {c:?}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn embedding_gradient_matches_finite_differences() {
    let mut rng = Rng::new(31);
    for idx in 0..8 {
        let (params, features, labels, weights) = random_config(&mut rng, idx);
        let trace = forward(&params, &features).unwrap();
        let analytic = backward(&params, &trace, &weights, &labels).unwrap();
        // Objective as a function of the embedding: feed it through the
        // final layer alone.
        let head = ModelParams {
            layers: vec![params.layers.last().unwrap().clone()],
            activation: params.activation,
        };
        let emb = trace.embedding().clone();
        for r in 0..emb.rows() {
            for c in 0..emb.cols() {
                let numeric = central_diff(
                    |x| {
                        let mut e = emb.clone();
                        e.set(r, c, x);
                        weighted_mean_loss(&head, &e, &labels, &weights)
                    },
                    emb.get(r, c),
                );
                let a = analytic.embedding_grad.get(r, c);
                assert!(
                    rel_err(a, numeric) <= REL_TOL,
                    "config {idx} emb ({r},{c}): analytic {a} vs numeric {numeric}"
                );
            }
        }
    }
}

#[test]
fn sparsity_prior_gradient_matches_finite_differences() {
    let mut rng = Rng::new(7);
    for _ in 0..10 {
        let cfg = SgldConfig {
            eta: 1.0,
            eta_w: 1.0,
            sigma: 0.2 + rng.uniform(),
            beta: 0.05 + 0.5 * rng.uniform(),
            rho_theta_t: 1.0,
            rho_theta_m: 1.0,
            rho_w_t: 1.0,
            weight_decay: 0.0,
            n_t: 50,
            n_m: 4,
            batch_t: 6,
            batch_m: 4,
            s_avg: 10,
            noise_scale: 0.0,
            sgd_lr: 0.1,
            steps: 0,
            seed: 0,
        };
        let batch: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let w_bar = rng.uniform();
        let target = cfg.sparsity_target();
        let log_prior = |b: &[f64]| {
            let s: f64 = b.iter().sum::<f64>() + (cfg.n_t - b.len()) as f64 * w_bar;
            -(s - target) * (s - target) / (2.0 * cfg.sigma * cfg.sigma)
        };
        let analytic = sparsity_prior_grad(&batch, w_bar, &cfg);
        for i in 0..batch.len() {
            let numeric = central_diff(
                |x| {
                    let mut b = batch.clone();
                    b[i] = x;
                    log_prior(&b)
                },
                batch[i],
            );
            assert!(
                rel_err(analytic, numeric) <= REL_TOL,
                "coord {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }
}

fn full_batch(features: &Matrix, labels: &[usize]) -> Minibatch {
    Minibatch {
        indices: (0..labels.len()).collect(),
        features: features.clone(),
        labels: labels.to_vec(),
    }
}

fn scalar_cfg(n_t: usize, n_m: usize, seed: u64) -> SgldConfig {
    SgldConfig {
        eta: 0.25,
        eta_w: 1e-3,
        sigma: 0.4,
        beta: 0.5,
        rho_theta_t: 1.0,
        rho_theta_m: 1.0,
        rho_w_t: 1.0,
        weight_decay: 0.3,
        n_t,
        n_m,
        batch_t: n_t,
        batch_m: n_m,
        s_avg: 5,
        noise_scale: 0.0,
        sgd_lr: 0.1,
        steps: 0,
        seed,
    }
}

/// The full-batch drift of each SGLD block must match finite differences of
/// the assembled log-posterior in the corresponding coordinates.
#[test]
fn log_posterior_drifts_match_finite_differences() {
    let mut rng = Rng::new(99);
    let n_t = 6;
    let n_m = 4;
    let params = ModelParams::init_mlp(&[3, 4, 2], Activation::Tanh, &mut rng).unwrap();
    let train_x = gaussian_noise(&mut rng, n_t, 3);
    let train_y: Vec<usize> = (0..n_t).map(|_| rng.below(2)).collect();
    let meta_x = gaussian_noise(&mut rng, n_m, 3);
    let meta_y: Vec<usize> = (0..n_m).map(|_| rng.below(2)).collect();
    let w0: Vec<f64> = (0..n_t).map(|_| 0.2 + 0.6 * rng.uniform()).collect();
    let cfg = scalar_cfg(n_t, n_m, 17);
    let state = WeightState::Scalar(ScalarWeights {
        w: w0.clone(),
        running: RunningAvg::new(cfg.s_avg, w0.iter().sum::<f64>() / n_t as f64),
    });
    let train = full_batch(&train_x, &train_y);
    let meta = full_batch(&meta_x, &meta_y);

    // θ block: recover the drift from one noise-free step.
    let half_eta = 0.5 * cfg.eta;
    let mut stepped = params.clone();
    let mut rng0 = Rng::new(0);
    sgld_step_theta(&mut stepped, &state, &train, &meta, &cfg, &mut rng0, 0).unwrap();
    for c in coords(&params) {
        let drift = (coord_val(&stepped, c) - coord_val(&params, c)) / half_eta;
        let base = coord_val(&params, c);
        let numeric = central_diff(
            |x| {
                let mut q = params.clone();
                *coord_mut(&mut q, c) = x;
                assemble_log_posterior(&q, &state, &train, &meta, &cfg).unwrap()
            },
            base,
        );
        assert!(
            rel_err(drift, numeric) <= REL_TOL,
            "theta coord {c:?}: drift {drift} vs numeric {numeric}"
        );
    }

    // w block: same recovery on the weight coordinates.
    let mut state_after = state.clone();
    let mut rng1 = Rng::new(0);
    sgld_step_w(&params, &mut state_after, &train, &cfg, &mut rng1, 0).unwrap();
    let w_after = match &state_after {
        WeightState::Scalar(s) => s.w.clone(),
        _ => unreachable!(),
    };
    let half_eta_w = 0.5 * cfg.eta_w;
    for i in 0..n_t {
        let drift = (w_after[i] - w0[i]) / half_eta_w;
        let numeric = central_diff(
            |x| {
                let mut s2 = state.clone();
                if let WeightState::Scalar(sw) = &mut s2 {
                    sw.w[i] = x;
                }
                assemble_log_posterior(&params, &s2, &train, &meta, &cfg).unwrap()
            },
            w0[i],
        );
        assert!(
            rel_err(drift, numeric) <= REL_TOL,
            "w coord {i}: drift {drift} vs numeric {numeric}"
        );
    }
}

/// The weight-net step must follow finite differences of its own objective:
/// sparsity prior on the estimated weight sum plus the scaled batch loss
/// term, as a function of the affine parameters.
#[test]
fn weight_net_gradients_match_finite_differences() {
    let mut rng = Rng::new(1234);
    let n_t = 40;
    let batch = 8;
    let emb_dim = 3;
    let num_classes = 2;
    let params = ModelParams::init_mlp(&[emb_dim, 4, num_classes], Activation::Sigmoid, &mut rng).unwrap();
    let features = gaussian_noise(&mut rng, batch, emb_dim);
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(num_classes)).collect();
    let train = Minibatch {
        indices: (0..batch).collect(),
        features: features.clone(),
        labels: labels.clone(),
    };
    let mut cfg = scalar_cfg(n_t, 4, 5);
    cfg.batch_t = batch;
    cfg.eta_w = 1e-3;

    for concat in [false, true] {
        let input_dim = 4 + if concat { num_classes } else { 0 };
        let mut net = WeightNet {
            weight: Matrix::from_fn(input_dim, 1, |_, _| 0.5 * rng.standard_normal()),
            bias: 0.3 * rng.standard_normal(),
            concat_labels: concat,
            running: RunningAvg::new(cfg.s_avg, 0.4),
        };
        net.running.push(0.4);
        let w_bar = net.running.value();
        let state = WeightState::Net(net.clone());

        // The embeddings the step will see, and the frozen losses.
        let trace = forward(&params, &features).unwrap();
        let losses = per_example_losses(&trace, &labels).unwrap();
        let emb = trace.embedding().clone();
        let assemble_input = |r: usize| -> Vec<f64> {
            let mut row = emb.row(r).to_vec();
            if concat {
                let mut onehot = vec![0.0; num_classes];
                onehot[labels[r]] = 1.0;
                row.extend(onehot);
            }
            row
        };
        let objective = |weight: &[f64], bias: f64| -> f64 {
            let w: Vec<f64> = (0..batch)
                .map(|r| {
                    let row = assemble_input(r);
                    let z: f64 = bias + row.iter().zip(weight).map(|(x, v)| x * v).sum::<f64>();
                    sigmoid(z)
                })
                .collect();
            let s: f64 = w.iter().sum::<f64>() + (n_t - batch) as f64 * w_bar;
            let target = cfg.sparsity_target();
            let prior = -(s - target) * (s - target) / (2.0 * cfg.sigma * cfg.sigma);
            let loss_term: f64 = w.iter().zip(&losses).map(|(wi, li)| wi * li).sum::<f64>() / batch as f64;
            prior - cfg.rho_w_t * n_t as f64 * loss_term
        };

        let mut state_after = state.clone();
        let mut rng0 = Rng::new(0);
        sgld_step_w(&params, &mut state_after, &train, &cfg, &mut rng0, 0).unwrap();
        let net_after = match &state_after {
            WeightState::Net(n) => n.clone(),
            _ => unreachable!(),
        };
        let half = 0.5 * cfg.eta_w;
        for i in 0..input_dim {
            let drift = (net_after.weight.data()[i] - net.weight.data()[i]) / half;
            let numeric = central_diff(
                |x| {
                    let mut wv = net.weight.data().to_vec();
                    wv[i] = x;
                    objective(&wv, net.bias)
                },
                net.weight.data()[i],
            );
            assert!(
                rel_err(drift, numeric) <= REL_TOL,
                "concat {concat} phi[{i}]: drift {drift} vs numeric {numeric}"
            );
        }
        let bias_drift = (net_after.bias - net.bias) / half;
        let numeric = central_diff(|x| objective(net.weight.data(), x), net.bias);
        assert!(
            rel_err(bias_drift, numeric) <= REL_TOL,
            "concat {concat} bias: drift {bias_drift} vs numeric {numeric}"
        );
    }
}

/// Twenty random layer/loss configurations per activation keep the analytic
/// path honest across the whole configuration space.
#[test]
fn gradient_check_across_twenty_random_configurations() {
    let mut rng = Rng::new(555);
    for idx in 0..20 {
        let (params, features, labels, weights) = random_config(&mut rng, idx);
        let trace = forward(&params, &features).unwrap();
        let analytic = backward(&params, &trace, &weights, &labels).unwrap();
        // Spot-check a random subset of coordinates per config.
        let all = coords(&params);
        for _ in 0..12 {
            let c = all[rng.below(all.len())];
            let base = coord_val(&params, c);
            let numeric = central_diff(
                |x| {
                    let mut q = params.clone();
                    *coord_mut(&mut q, c) = x;
                    weighted_mean_loss(&q, &features, &labels, &weights)
                },
                base,
            );
            let a = grad_coord(&analytic.grads, c);
            assert!(
                rel_err(a, numeric) <= REL_TOL,
                "config {idx} coord {c:?}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

/// A layer holding zero-weight parameters still round-trips cleanly.
#[test]
fn zero_layer_gradcheck_smoke() {
    let params = ModelParams {
        layers: vec![Layer {
            weight: Matrix::zeros(2, 2),
            bias: Matrix::zeros(1, 2),
        }],
        activation: Activation::Relu,
    };
    let features = Matrix::new(2, 2, vec![0.5, -0.5, 1.0, 2.0]).unwrap();
    let trace = forward(&params, &features).unwrap();
    let res = backward(&params, &trace, &[1.0, 1.0], &[0, 1]).unwrap();
    assert!(res.grads.is_finite());
}
