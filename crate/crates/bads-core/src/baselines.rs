//! The four non-selection comparison trainers.
//!
//! Each baseline trains the same backbone with plain SGD over a different
//! effective dataset:
//!
//! - `Mixing`: train set plus meta set.
//! - `MetaOnly`: meta set alone.
//! - `RandomSelect`: a once-per-run random subset of the train set (size
//!   ⌊β·N_t⌋) plus the meta set.
//! - `DuplicateMeta`: the train set plus whole copies of the meta set,
//!   the last copy truncated so the duplicated part is exactly N_t examples.

use crate::data::Scenario;
use crate::engine::SgldConfig;
use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::stream::BatchStream;
use crate::trainer::{train_run, Method, TrainLog, TrainSettings};
use crate::nn::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Mixing,
    MetaOnly,
    RandomSelect,
    DuplicateMeta,
}

/// A baseline's effective dataset and its epoch-shuffled batch stream.
#[derive(Debug)]
pub struct BaselineData {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub stream: BatchStream,
}

impl BaselineData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn stack(parts: &[(&Matrix, &[usize])]) -> Result<(Matrix, Vec<usize>)> {
    let cols = parts[0].0.cols();
    let total: usize = parts.iter().map(|(m, _)| m.rows()).sum();
    let mut features = Matrix::zeros(total, cols);
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (m, ls) in parts {
        if m.cols() != cols {
            return Err(CoreError::Shape("feature widths differ across parts".into()));
        }
        for r in 0..m.rows() {
            features.row_mut(row).copy_from_slice(m.row(r));
            row += 1;
        }
        labels.extend_from_slice(ls);
    }
    Ok((features, labels))
}

/// Builds the baseline's effective dataset and batch stream.
///
/// `select_rng` fixes the RandomSelect subset once per run; `stream_rng`
/// drives the epoch shuffles.
pub fn build_baseline_stream(
    kind: BaselineKind,
    scenario: &Scenario,
    cfg: &SgldConfig,
    mut select_rng: Rng,
    stream_rng: Rng,
) -> Result<BaselineData> {
    let train = &scenario.train;
    let meta = &scenario.meta;
    let (features, labels) = match kind {
        BaselineKind::Mixing => stack(&[
            (&train.features, &train.labels),
            (&meta.features, &meta.labels),
        ])?,
        BaselineKind::MetaOnly => (meta.features.clone(), meta.labels.clone()),
        BaselineKind::RandomSelect => {
            let subset = ((cfg.beta * train.len() as f64).floor() as usize).min(train.len());
            let mut order: Vec<usize> = (0..train.len()).collect();
            select_rng.shuffle(&mut order);
            let chosen = &order[..subset];
            let sub_features = train.features.select_rows(chosen);
            let sub_labels: Vec<usize> = chosen.iter().map(|&i| train.labels[i]).collect();
            stack(&[
                (&sub_features, &sub_labels),
                (&meta.features, &meta.labels),
            ])?
        }
        BaselineKind::DuplicateMeta => {
            if meta.is_empty() {
                return Err(CoreError::Validation("duplicate_meta needs a nonempty meta set".into()));
            }
            let n_t = train.len();
            let mut dup_rows: Vec<usize> = Vec::with_capacity(n_t);
            while dup_rows.len() < n_t {
                let take = (n_t - dup_rows.len()).min(meta.len());
                dup_rows.extend(0..take);
            }
            let dup_features = meta.features.select_rows(&dup_rows);
            let dup_labels: Vec<usize> = dup_rows.iter().map(|&i| meta.labels[i]).collect();
            stack(&[
                (&train.features, &train.labels),
                (&dup_features, &dup_labels),
            ])?
        }
    };
    let batch = cfg.batch_t.min(labels.len());
    Ok(BaselineData {
        stream: BatchStream::new(labels.len(), batch, stream_rng),
        features,
        labels,
    })
}

/// Trains a baseline with plain SGD (no Langevin noise, no instance
/// weights) and returns the final parameters and the shared-schema log.
pub fn train_baseline(
    kind: BaselineKind,
    scenario: &Scenario,
    cfg: &SgldConfig,
    settings: &TrainSettings,
) -> Result<(ModelParams, TrainLog)> {
    match train_run(Method::Baseline(kind), scenario, cfg, settings) {
        Ok(out) => Ok((out.params, out.log)),
        Err(abort) => Err(abort.error),
    }
}
