//! Mini-batch Adam training with best-epoch selection.

use alloc::vec::Vec;

use super::{
    adam_step, backward, forward_eval, forward_train, init_params, training_loss, AdamState, Mat,
    ModelParams, NetworkSpec, NnetError,
};
use crate::cohort::FeatureVector;
use crate::metrics::{auprc, ScoredLabels};
use crate::rng;

/// Features with one label column per head; head 0 is the target task.
#[derive(Clone, Debug)]
pub struct TaskData<'a> {
    pub features: &'a [FeatureVector],
    pub labels: Vec<&'a [bool]>,
}

impl<'a> TaskData<'a> {
    pub fn new(features: &'a [FeatureVector], labels: Vec<&'a [bool]>) -> Result<Self, NnetError> {
        if labels.is_empty() {
            return Err(NnetError::ShapeMismatch { context: "need at least one label column" });
        }
        for col in &labels {
            if col.len() != features.len() {
                return Err(NnetError::ShapeMismatch { context: "label column vs features" });
            }
        }
        Ok(Self { features, labels })
    }

    /// Target plus the first `aux_count` auxiliary columns of a dataset.
    pub fn from_dataset(
        ds: &'a crate::cohort::LabeledDataset,
        aux_count: usize,
    ) -> Result<Self, NnetError> {
        if aux_count > ds.auxiliary.len() {
            return Err(NnetError::ShapeMismatch { context: "aux_count vs available tasks" });
        }
        let mut labels: Vec<&[bool]> = Vec::with_capacity(1 + aux_count);
        labels.push(&ds.target);
        for col in &ds.auxiliary[..aux_count] {
            labels.push(col);
        }
        Self::new(&ds.features, labels)
    }

    pub fn n_heads(&self) -> usize {
        self.labels.len()
    }

    fn label_matrix(&self, rows: &[usize]) -> Mat {
        let mut y = Mat::zeros(rows.len(), self.labels.len());
        for (i, &r) in rows.iter().enumerate() {
            for (k, col) in self.labels.iter().enumerate() {
                y[(i, k)] = f64::from(u8::from(col[r]));
            }
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 6, batch_size: 256, learning_rate: 1e-4, seed: 0 }
    }
}

/// Per-epoch training loss and validation AUPRC of the target head, plus
/// the selected (best-validation, earliest on ties) epoch.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_auprc: Vec<f64>,
    pub selected_epoch: usize,
}

/// Scores `features` in eval mode in fixed-size chunks, returning the
/// target-head probability per row.
pub fn predict(params: &ModelParams, features: &[FeatureVector]) -> Result<Vec<f64>, NnetError> {
    let mut out = Vec::with_capacity(features.len());
    for chunk in features.chunks(4096) {
        let batch: Vec<&FeatureVector> = chunk.iter().collect();
        let probs = forward_eval(params, &batch)?;
        for i in 0..probs.rows() {
            out.push(probs[(i, 0)]);
        }
    }
    Ok(out)
}

fn validation_auprc(params: &ModelParams, validation: &TaskData<'_>) -> Result<f64, NnetError> {
    let scores = predict(params, validation.features)?;
    let data = ScoredLabels::new(scores, validation.labels[0].to_vec())
        .map_err(|e| NnetError::Validation(alloc::format!("{e}")))?;
    auprc(&data).map_err(|e| NnetError::Validation(alloc::format!("{e}")))
}

/// Trains for the configured number of epochs and returns the parameters
/// from the epoch with the best validation AUPRC on the target head.
///
/// Initialization draws from stream 0 of the seed, mini-batch shuffling
/// from stream 1, so `(spec, data, config)` fully determine the result.
pub fn train(
    spec: &NetworkSpec,
    train_data: &TaskData<'_>,
    validation: &TaskData<'_>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory), NnetError> {
    spec.validate()?;
    if train_data.features.is_empty() {
        return Err(NnetError::EmptySplit("train"));
    }
    if validation.features.is_empty() {
        return Err(NnetError::EmptySplit("validation"));
    }
    if train_data.n_heads() != spec.n_heads {
        return Err(NnetError::ShapeMismatch { context: "label columns vs spec heads" });
    }
    if config.epochs == 0 {
        return Err(NnetError::InvalidSpec("epochs must be positive".into()));
    }
    if config.batch_size < 2 {
        return Err(NnetError::BatchTooSmall { got: config.batch_size });
    }

    let mut params = init_params(spec, config.seed)?;
    let mut adam = AdamState::new(&params, config.learning_rate);
    let mut shuffle_rng = rng::seeded_stream(config.seed, 1);
    let n = train_data.features.len();
    let mut order: Vec<usize> = (0..n).collect();

    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(config.epochs),
        val_auprc: Vec::with_capacity(config.epochs),
        selected_epoch: 0,
    };
    let mut best: Option<(f64, ModelParams)> = None;

    for epoch in 0..config.epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut loss_sum = 0.0;
        let mut rows_seen = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                // a trailing single row cannot supply batch statistics;
                // the shuffle revisits it in later epochs
                continue;
            }
            let batch: Vec<&FeatureVector> =
                chunk.iter().map(|&r| &train_data.features[r]).collect();
            let labels = train_data.label_matrix(chunk);
            let cache = forward_train(&mut params, &batch)?;
            let loss = training_loss(&cache, &labels)?;
            if !loss.is_finite() {
                return Err(NnetError::NanLoss { epoch, step });
            }
            loss_sum += loss * chunk.len() as f64;
            rows_seen += chunk.len();
            let grads = backward(&params, &cache, &labels)?;
            adam_step(&mut adam, &mut params, &grads);
        }
        history.train_loss.push(loss_sum / rows_seen.max(1) as f64);

        let score = validation_auprc(&params, validation)?;
        history.val_auprc.push(score);
        let improved = best.as_ref().map_or(true, |(best_score, _)| score > *best_score);
        if improved {
            best = Some((score, params.clone()));
            history.selected_epoch = epoch;
        }
    }

    let (_, selected) = best.expect("at least one epoch ran");
    Ok((selected, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy_features(n: usize, dim: u32, active: impl Fn(usize) -> Vec<u32>) -> Vec<FeatureVector> {
        (0..n).map(|i| FeatureVector::new(active(i), dim).unwrap()).collect()
    }

    #[test]
    fn rejects_bad_configs() {
        let features = toy_features(4, 2, |i| vec![(i % 2) as u32]);
        let labels = vec![true, false, true, false];
        let data = TaskData::new(&features, vec![&labels]).unwrap();
        let spec = NetworkSpec::new(2, vec![2], 1);
        let bad_batch = TrainConfig { batch_size: 1, ..TrainConfig::default() };
        assert!(train(&spec, &data, &data, &bad_batch).is_err());
        let no_epochs = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train(&spec, &data, &data, &no_epochs).is_err());
        let two_heads = NetworkSpec::new(2, vec![2], 2);
        assert!(train(&two_heads, &data, &data, &TrainConfig::default()).is_err());
    }

    #[test]
    fn selected_epoch_is_earliest_best() {
        // tiny but non-degenerate: the point is to exercise the tie-break
        let features = toy_features(20, 3, |i| if i % 2 == 0 { vec![0] } else { vec![1, 2] });
        let labels: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let data = TaskData::new(&features, vec![&labels]).unwrap();
        let spec = NetworkSpec::new(3, vec![4], 1);
        let config = TrainConfig { epochs: 4, batch_size: 4, ..TrainConfig::default() };
        let (_, history) = train(&spec, &data, &data, &config).unwrap();
        let best = history
            .val_auprc
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let earliest = history.val_auprc.iter().position(|&s| s == best).unwrap();
        assert_eq!(history.selected_epoch, earliest);
    }

    #[test]
    fn predict_matches_eval_forward_and_is_order_invariant() {
        let features = toy_features(6, 4, |i| vec![(i % 4) as u32]);
        let spec = NetworkSpec::new(4, vec![3], 2);
        let params = init_params(&spec, 3).unwrap();
        let preds = predict(&params, &features).unwrap();
        let batch: Vec<&FeatureVector> = features.iter().collect();
        let probs = forward_eval(&params, &batch).unwrap();
        for (i, &p) in preds.iter().enumerate() {
            assert_eq!(p, probs[(i, 0)]);
            assert!(p > 0.0 && p < 1.0);
        }
        // permuting rows permutes outputs identically
        let reversed: Vec<FeatureVector> = features.iter().rev().cloned().collect();
        let rev_preds = predict(&params, &reversed).unwrap();
        let mut expect = preds.clone();
        expect.reverse();
        assert_eq!(rev_preds, expect);
    }
}
