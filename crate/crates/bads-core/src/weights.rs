//! The two instance-weight representations behind one interface.
//!
//! `ScalarWeights` keeps one free weight per training example. `WeightNet`
//! replaces the table with a single affine layer plus sigmoid over an
//! example's embedding (optionally concatenated with its one-hot label), so
//! unseen examples can be scored after training. Both keep a running average
//! of recent minibatch weight means, used to estimate the full weight sum
//! from a minibatch.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::nn::sigmoid;

/// Mean of the most recent `cap` minibatch weight means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningAvg {
    buf: VecDeque<f64>,
    cap: usize,
    value: f64,
}

impl RunningAvg {
    pub fn new(cap: usize, initial: f64) -> Self {
        RunningAvg {
            buf: VecDeque::with_capacity(cap),
            cap,
            value: initial,
        }
    }

    pub fn push(&mut self, batch_mean: f64) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(batch_mean);
        self.value = self.buf.iter().sum::<f64>() / self.buf.len() as f64;
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarWeights {
    pub w: Vec<f64>,
    pub running: RunningAvg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightNet {
    /// Affine weights, (input_dim x 1).
    pub weight: Matrix,
    pub bias: f64,
    /// When set, the one-hot label is appended to the embedding.
    pub concat_labels: bool,
    pub running: RunningAvg,
}

impl WeightNet {
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    /// sigmoid(x . weight + bias) for one assembled input row.
    pub(crate) fn score_row(&self, row: &[f64]) -> f64 {
        let mut z = self.bias;
        for (x, w) in row.iter().zip(self.weight.data()) {
            z += x * w;
        }
        sigmoid(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightState {
    Scalar(ScalarWeights),
    Net(WeightNet),
}

impl WeightState {
    /// Per-example table, every weight starting at `init` (clamped to [0,1]).
    pub fn scalar(n_t: usize, init: f64, s_avg: usize) -> Self {
        let init = init.clamp(0.0, 1.0);
        WeightState::Scalar(ScalarWeights {
            w: vec![init; n_t],
            running: RunningAvg::new(s_avg, init),
        })
    }

    /// Zero affine weights and a bias chosen so every output starts at `init`.
    pub fn net(input_dim: usize, init: f64, concat_labels: bool, s_avg: usize) -> Self {
        let init = init.clamp(1e-12, 1.0 - 1e-12);
        let bias = (init / (1.0 - init)).ln();
        WeightState::Net(WeightNet {
            weight: Matrix::zeros(input_dim, 1),
            bias,
            concat_labels,
            running: RunningAvg::new(s_avg, init),
        })
    }

    pub fn running_avg(&self) -> f64 {
        match self {
            WeightState::Scalar(s) => s.running.value(),
            WeightState::Net(n) => n.running.value(),
        }
    }

    pub fn push_batch_mean(&mut self, mean: f64) {
        match self {
            WeightState::Scalar(s) => s.running.push(mean),
            WeightState::Net(n) => n.running.push(mean),
        }
    }

    pub fn is_net(&self) -> bool {
        matches!(self, WeightState::Net(_))
    }
}

/// A batch the weight model is asked about: which examples, their
/// embeddings, and optionally their one-hot labels.
#[derive(Debug, Clone)]
pub struct WeightQuery<'a> {
    pub indices: &'a [usize],
    pub embeddings: Option<&'a Matrix>,
    pub labels_onehot: Option<&'a Matrix>,
}

impl<'a> WeightQuery<'a> {
    pub fn by_index(indices: &'a [usize]) -> Self {
        WeightQuery {
            indices,
            embeddings: None,
            labels_onehot: None,
        }
    }
}

/// Assembles the weight-net input rows: embedding, then one-hot label when
/// the net was built with label concatenation.
pub(crate) fn net_inputs(net: &WeightNet, query: &WeightQuery) -> Result<Matrix> {
    let emb = query.embeddings.ok_or_else(|| {
        CoreError::Validation("weight network query requires embeddings".into())
    })?;
    if emb.rows() != query.indices.len() {
        return Err(CoreError::Validation(format!(
            "embedding rows {} do not match index count {}",
            emb.rows(),
            query.indices.len()
        )));
    }
    if !net.concat_labels {
        if emb.cols() != net.input_dim() {
            return Err(CoreError::Shape(format!(
                "embedding width {} does not match weight net input {}",
                emb.cols(),
                net.input_dim()
            )));
        }
        return Ok(emb.clone());
    }
    let onehot = query.labels_onehot.ok_or_else(|| {
        CoreError::Validation("weight network with label concatenation requires one-hot labels".into())
    })?;
    if onehot.rows() != emb.rows() {
        return Err(CoreError::Validation("one-hot rows do not match embedding rows".into()));
    }
    let total = emb.cols() + onehot.cols();
    if total != net.input_dim() {
        return Err(CoreError::Shape(format!(
            "embedding+label width {total} does not match weight net input {}",
            net.input_dim()
        )));
    }
    let mut out = Matrix::zeros(emb.rows(), total);
    for r in 0..emb.rows() {
        let row = out.row_mut(r);
        row[..emb.cols()].copy_from_slice(emb.row(r));
        row[emb.cols()..].copy_from_slice(onehot.row(r));
    }
    Ok(out)
}

/// Current weight of each queried example, in [0, 1].
pub fn weights_for_batch(state: &WeightState, query: &WeightQuery) -> Result<Vec<f64>> {
    match state {
        WeightState::Scalar(s) => {
            let mut out = Vec::with_capacity(query.indices.len());
            for &i in query.indices {
                let w = *s.w.get(i).ok_or_else(|| {
                    CoreError::Validation(format!("weight index {i} out of range ({})", s.w.len()))
                })?;
                out.push(w);
            }
            Ok(out)
        }
        WeightState::Net(net) => {
            let inputs = net_inputs(net, query)?;
            Ok((0..inputs.rows()).map(|r| net.score_row(inputs.row(r))).collect())
        }
    }
}

/// Scores examples never seen in training. Pure inference; only the weight
/// network generalizes this way, the scalar table has no basis to.
pub fn score_new_examples(state: &WeightState, query: &WeightQuery) -> Result<Vec<f64>> {
    match state {
        WeightState::Scalar(_) => Err(CoreError::Unsupported(
            "scalar weights cannot score unseen examples".into(),
        )),
        WeightState::Net(_) => weights_for_batch(state, query),
    }
}
