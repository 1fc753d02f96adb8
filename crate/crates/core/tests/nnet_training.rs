//! End-to-end training behavior: separable data, determinism, the
//! one-head equivalence, and the loss against a direct-summation oracle.

use phenolab_core::cohort::FeatureVector;
use phenolab_core::metrics::{auprc, ScoredLabels};
use phenolab_core::nnet::{
    multitask_loss, predict, train, Mat, NetworkSpec, NnetError, TaskData, TrainConfig,
};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    ((rng.next_u64() as u128 * n as u128) >> 64) as u64
}

/// Feature 0 active iff positive; features 1..4 are noise.
fn separable_dataset(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i % 4 == 0;
        let mut idx = Vec::new();
        if positive {
            idx.push(0u32);
        }
        for j in 1..5u32 {
            if below(&mut rng, 2) == 0 {
                idx.push(j);
            }
        }
        features.push(FeatureVector::new(idx, 5).unwrap());
        labels.push(positive);
    }
    (features, labels)
}

#[test]
fn linearly_separable_toy_reaches_perfect_validation_auprc() {
    let (train_f, train_y) = separable_dataset(400, 1);
    let (val_f, val_y) = separable_dataset(100, 2);
    let train_data = TaskData::new(&train_f, vec![&train_y]).unwrap();
    let val_data = TaskData::new(&val_f, vec![&val_y]).unwrap();
    let spec = NetworkSpec::new(5, vec![8], 1);
    let config = TrainConfig {
        epochs: 6,
        batch_size: 32,
        learning_rate: 5e-2,
        seed: 3,
    };
    let (params, history) = train(&spec, &train_data, &val_data, &config).unwrap();
    let best = history.val_auprc[history.selected_epoch];
    assert_eq!(best, 1.0, "history: {:?}", history.val_auprc);
    // the returned parameters really are the selected ones
    let scores = predict(&params, &val_f).unwrap();
    let rescored = auprc(&ScoredLabels::new(scores, val_y.clone()).unwrap()).unwrap();
    assert_eq!(rescored, best);
}

#[test]
fn training_is_deterministic_per_seed() {
    let (train_f, train_y) = separable_dataset(200, 5);
    let (val_f, val_y) = separable_dataset(60, 6);
    let train_data = TaskData::new(&train_f, vec![&train_y]).unwrap();
    let val_data = TaskData::new(&val_f, vec![&val_y]).unwrap();
    let spec = NetworkSpec::new(5, vec![6], 1);
    let config = TrainConfig { epochs: 4, batch_size: 16, learning_rate: 1e-3, seed: 11 };
    let (params_a, history_a) = train(&spec, &train_data, &val_data, &config).unwrap();
    let (params_b, history_b) = train(&spec, &train_data, &val_data, &config).unwrap();
    assert_eq!(history_a, history_b);
    assert_eq!(params_a, params_b);

    let other = TrainConfig { seed: 12, ..config };
    let (_, history_c) = train(&spec, &train_data, &val_data, &other).unwrap();
    assert_ne!(history_a, history_c);
}

#[test]
fn zero_auxiliary_multitask_equals_single_task_bitwise() {
    let (train_f, train_y) = separable_dataset(200, 7);
    let (val_f, val_y) = separable_dataset(60, 8);
    // a dataset that carries auxiliary columns, of which zero are used
    let aux: Vec<bool> = train_y.iter().map(|&y| !y).collect();
    let ds = phenolab_core::cohort::LabeledDataset::new(
        train_f.clone(),
        train_y.clone(),
        vec![aux],
        vec!["flipped".into()],
    )
    .unwrap();
    let as_multitask = TaskData::from_dataset(&ds, 0).unwrap();
    let single = TaskData::new(&train_f, vec![&train_y]).unwrap();
    let val_data = TaskData::new(&val_f, vec![&val_y]).unwrap();
    let spec = NetworkSpec::new(5, vec![6], 1);
    let config = TrainConfig { epochs: 5, batch_size: 16, learning_rate: 1e-3, seed: 9 };
    let (params_multi, history_multi) = train(&spec, &as_multitask, &val_data, &config).unwrap();
    let (params_single, history_single) = train(&spec, &single, &val_data, &config).unwrap();
    assert_eq!(history_multi, history_single);
    assert_eq!(params_multi, params_single);
}

#[test]
fn multitask_loss_matches_direct_summation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let m = 2 + below(&mut rng, 8) as usize;
        let mut probs = Mat::zeros(m, 2);
        let mut labels = Mat::zeros(m, 2);
        for i in 0..m {
            for k in 0..2 {
                probs[(i, k)] =
                    0.999 * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) + 5e-4;
                labels[(i, k)] = below(&mut rng, 2) as f64;
            }
        }
        let got = multitask_loss(&probs, &labels).unwrap();

        // direct summation, head by head
        let mut oracle = 0.0;
        for k in 0..2 {
            let mut head = 0.0;
            for i in 0..m {
                let p = probs[(i, k)];
                let y = labels[(i, k)];
                head -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            oracle += head / m as f64;
        }
        oracle /= 2.0;
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }
}

#[test]
fn diverging_run_reports_nan_loss() {
    let (train_f, train_y) = separable_dataset(100, 13);
    let data = TaskData::new(&train_f, vec![&train_y]).unwrap();
    // without batch normalization an absurd learning rate overflows the
    // logits, and the loss must abort rather than march on with NaNs
    let spec = NetworkSpec { input_dim: 5, hidden_sizes: vec![4], n_heads: 1, batch_norm: false };
    let config = TrainConfig {
        epochs: 3,
        batch_size: 16,
        learning_rate: f64::MAX,
        seed: 0,
    };
    match train(&spec, &data, &data, &config) {
        Err(NnetError::NanLoss { .. }) => {}
        other => panic!("expected NanLoss, got {other:?}"),
    }
}
