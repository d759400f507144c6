//! Minimal dense feedforward network with exact analytic gradients.
//!
//! The network is a stack of affine layers with one activation applied to
//! every hidden layer; the final layer emits raw logits. Losses are softmax
//! cross-entropy (final width >= 2) or logistic loss (final width 1).
//! `backward` differentiates the batch mean of per-example-weighted losses
//! with respect to every parameter, and additionally with respect to the
//! last hidden activation (the "embedding" consumed by the weight network).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given the pre-activation `z` and the activation value `a`.
    fn derivative(&self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(CoreError::Validation(format!("unknown activation `{other}`"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer: `weight` is (in x out), `bias` is (1 x out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Backbone parameters: the layer stack plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl ModelParams {
    /// He-style init: weights ~ N(0, 2/fan_in), biases zero.
    ///
    /// `widths` lists input width, hidden widths, and output width in order.
    pub fn init_mlp(widths: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(CoreError::Validation(
                "an MLP needs at least input and output widths".into(),
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(CoreError::Validation("layer widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let gain = (2.0 / fan_in as f64).sqrt();
            let weight = Matrix::from_fn(fan_in, fan_out, |_, _| gain * rng.standard_normal());
            layers.push(Layer {
                weight,
                bias: Matrix::zeros(1, fan_out),
            });
        }
        Ok(ModelParams { layers, activation })
    }

    pub fn num_classes(&self) -> usize {
        let out = self.layers.last().map_or(0, |l| l.weight.cols());
        if out == 1 {
            2
        } else {
            out
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    /// Visits every parameter matrix (weights and biases) in a fixed order.
    pub fn for_each_matrix_mut(&mut self, mut f: impl FnMut(&mut Matrix)) {
        for layer in &mut self.layers {
            f(&mut layer.weight);
            f(&mut layer.bias);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weight.data().iter().map(|v| v * v).sum::<f64>()
                    + l.bias.data().iter().map(|v| v * v).sum::<f64>()
            })
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}

/// Gradient container with the same layer shapes as `ModelParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ParamGrads {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: Matrix::zeros(l.bias.rows(), l.bias.cols()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.scale(s);
            l.bias.scale(s);
        }
    }
}

/// Everything the forward pass produced, kept for backprop.
///
/// `layer_inputs[k]` is the input seen by layer `k` (so `layer_inputs[0]` is
/// the batch itself); `pre_acts[k]` is the affine output of layer `k`. The
/// embedding is the input of the final layer: the last hidden activation, or
/// the raw input for a single-layer network.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layer_inputs: Vec<Matrix>,
    pub pre_acts: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardTrace {
    pub fn embedding(&self) -> &Matrix {
        self.layer_inputs.last().expect("trace has at least one layer input")
    }

    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }
}

pub fn forward(params: &ModelParams, inputs: &Matrix) -> Result<ForwardTrace> {
    let n_layers = params.layers.len();
    if n_layers == 0 {
        return Err(CoreError::Validation("model has no layers".into()));
    }
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut pre_acts = Vec::with_capacity(n_layers);
    let mut current = inputs.clone();
    for (k, layer) in params.layers.iter().enumerate() {
        if current.cols() != layer.weight.rows() {
            return Err(CoreError::Shape(format!(
                "layer {}: input width {} does not match weight rows {}",
                k,
                current.cols(),
                layer.weight.rows()
            )));
        }
        let mut z = current.matmul(&layer.weight)?;
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for (v, &b) in row.iter_mut().zip(layer.bias.data()) {
                *v += b;
            }
        }
        layer_inputs.push(current);
        if k + 1 < n_layers {
            let act = Matrix::from_fn(z.rows(), z.cols(), |r, c| params.activation.apply(z.get(r, c)));
            pre_acts.push(z);
            current = act;
        } else {
            pre_acts.push(z.clone());
            current = z;
        }
    }
    Ok(ForwardTrace {
        layer_inputs,
        pre_acts,
        logits: current,
    })
}

fn check_labels(labels: &[usize], batch: usize, num_classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(CoreError::Validation(format!(
            "label count {} does not match batch size {}",
            labels.len(),
            batch
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(CoreError::Validation(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    Ok(())
}

/// One nonnegative loss per example: softmax cross-entropy, or logistic
/// loss when the network has a single output column.
pub fn per_example_losses(trace: &ForwardTrace, labels: &[usize]) -> Result<Vec<f64>> {
    let logits = &trace.logits;
    let binary = logits.cols() == 1;
    let num_classes = if binary { 2 } else { logits.cols() };
    check_labels(labels, logits.rows(), num_classes)?;
    let mut losses = Vec::with_capacity(logits.rows());
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let loss = if binary {
            let z = row[0];
            let y = label as f64;
            // softplus(z) - y*z, computed stably
            z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
        } else {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            max + sum_exp.ln() - row[label]
        };
        losses.push(loss);
    }
    Ok(losses)
}

/// Gradients of `(1/n) * Σ_i w_i * loss_i` for every parameter, plus the
/// gradient of the same objective with respect to the embedding.
#[derive(Debug, Clone)]
pub struct BackwardResult {
    pub grads: ParamGrads,
    pub embedding_grad: Matrix,
}

pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    example_weights: &[f64],
    labels: &[usize],
) -> Result<BackwardResult> {
    let n = trace.batch_size();
    let logits = &trace.logits;
    let binary = logits.cols() == 1;
    let num_classes = if binary { 2 } else { logits.cols() };
    check_labels(labels, n, num_classes)?;
    if example_weights.len() != n {
        return Err(CoreError::Validation(format!(
            "weight count {} does not match batch size {n}",
            example_weights.len()
        )));
    }
    if let Some(&w) = example_weights.iter().find(|&&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(CoreError::Validation(format!(
            "example weights must be nonnegative and finite, got {w}"
        )));
    }

    let inv_n = 1.0 / n as f64;
    // dL/dlogits, already weighted and mean-reduced.
    let mut delta = Matrix::zeros(n, logits.cols());
    for r in 0..n {
        let row = logits.row(r);
        let scale = example_weights[r] * inv_n;
        let out = delta.row_mut(r);
        if binary {
            let p = sigmoid(row[0]);
            out[0] = scale * (p - labels[r] as f64);
        } else {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            for (c, o) in out.iter_mut().enumerate() {
                let p = (row[c] - max).exp() / sum_exp;
                let y = if c == labels[r] { 1.0 } else { 0.0 };
                *o = scale * (p - y);
            }
        }
    }

    let mut grads = ParamGrads::zeros_like(params);
    let mut embedding_grad = Matrix::zeros(0, 0);
    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        grads.layers[k].weight = trace.layer_inputs[k].t_matmul(&delta)?;
        grads.layers[k].bias = delta.col_sums();
        let upstream = delta.matmul_t(&layer.weight)?;
        if k == params.layers.len() - 1 {
            embedding_grad = upstream.clone();
        }
        if k > 0 {
            let pre = &trace.pre_acts[k - 1];
            let act = &trace.layer_inputs[k];
            delta = Matrix::from_fn(upstream.rows(), upstream.cols(), |r, c| {
                upstream.get(r, c) * params.activation.derivative(pre.get(r, c), act.get(r, c))
            });
        }
    }

    Ok(BackwardResult {
        grads,
        embedding_grad,
    })
}

/// A matrix of i.i.d. standard normal draws.
pub fn gaussian_noise(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}
