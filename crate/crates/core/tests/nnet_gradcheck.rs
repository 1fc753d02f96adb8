//! Gradient correctness against central finite differences, plus a
//! hand-computed forward-pass oracle on a dense 4-feature toy network.

use phenolab_core::cohort::FeatureVector;
use phenolab_core::nnet::{
    backward, forward_eval, forward_train, init_params, training_loss, BatchNormParams,
    HeadParams, LayerParams, Mat, ModelParams, NetworkSpec,
};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    ((rng.next_u64() as u128 * n as u128) >> 64) as u64
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn random_batch(
    rng: &mut ChaCha8Rng,
    rows: usize,
    dim: u32,
    n_heads: usize,
) -> (Vec<FeatureVector>, Mat) {
    let features: Vec<FeatureVector> = (0..rows)
        .map(|_| {
            let mut idx: Vec<u32> =
                (0..1 + below(rng, 5)).map(|_| below(rng, dim as u64) as u32).collect();
            idx.sort_unstable();
            idx.dedup();
            FeatureVector::new(idx, dim).unwrap()
        })
        .collect();
    let mut labels = Mat::zeros(rows, n_heads);
    for i in 0..rows {
        for k in 0..n_heads {
            labels[(i, k)] = below(rng, 2) as f64;
        }
    }
    (features, labels)
}

fn loss_at(params: &ModelParams, batch: &[&FeatureVector], labels: &Mat) -> f64 {
    let mut scratch = params.clone();
    let cache = forward_train(&mut scratch, batch).unwrap();
    training_loss(&cache, labels).unwrap()
}

/// Moves every trainable parameter off its initialization value. Freshly
/// initialized biases are exactly zero, which can park a pre-activation
/// exactly on the relu kink where the loss is not differentiable and
/// finite differences are meaningless; jittering makes the check point
/// generic.
fn jitter(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for block in params.trainable_blocks_mut() {
        for p in block {
            *p += 0.4 * uniform01(rng) - 0.2;
        }
    }
}

/// Relative error between analytic and numeric gradients. A parameter
/// whose loss influence cancels exactly (a uniform shift ahead of batch
/// normalization, for instance) has a true gradient of zero on both
/// sides; there the finite difference is pure rounding noise, so tiny
/// absolute disagreements count as matches before the ratio is formed.
fn relative_error(a: f64, n: f64) -> f64 {
    if (a - n).abs() < 1e-10 {
        return 0.0;
    }
    (a - n).abs() / f64::max(1e-8, a.abs() + n.abs())
}

/// Central finite differences over every trainable parameter.
fn max_fd_error(params: &ModelParams, batch: &[&FeatureVector], labels: &Mat) -> f64 {
    let step = 1e-5;
    let mut work = params.clone();
    let cache = forward_train(&mut work, batch).unwrap();
    let grads = backward(&work, &cache, labels).unwrap();
    let grad_blocks = grads.blocks();

    let mut worst = 0.0f64;
    let n_blocks = grad_blocks.len();
    for b in 0..n_blocks {
        for e in 0..grad_blocks[b].len() {
            let mut plus = params.clone();
            plus.trainable_blocks_mut()[b][e] += step;
            let mut minus = params.clone();
            minus.trainable_blocks_mut()[b][e] -= step;
            let numeric =
                (loss_at(&plus, batch, labels) - loss_at(&minus, batch, labels)) / (2.0 * step);
            let analytic = grads.blocks()[b][e];
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_on_24_random_networks() {
    let dim = 10u32;
    let mut net_index = 0u64;
    let mut checked = 0;
    for hidden in [vec![8], vec![16], vec![7, 5], vec![12, 6]] {
        for n_heads in [1, 2, 3] {
            for batch_norm in [true, false] {
                net_index += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(5000 + net_index);
                let spec = NetworkSpec {
                    input_dim: dim as usize,
                    hidden_sizes: hidden.clone(),
                    n_heads,
                    batch_norm,
                };
                let mut params = init_params(&spec, 100 + net_index).unwrap();
                jitter(&mut params, &mut rng);
                let (features, labels) = random_batch(&mut rng, 6, dim, n_heads);
                let batch: Vec<&FeatureVector> = features.iter().collect();
                let worst = max_fd_error(&params, &batch, &labels);
                assert!(
                    worst < 1e-4,
                    "net {net_index} (hidden {hidden:?}, heads {n_heads}, bn {batch_norm}): \
                     max relative error {worst:.3e}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked >= 20);
}

#[test]
fn finite_differences_on_the_10x8x2_reference_net() {
    let spec = NetworkSpec { input_dim: 10, hidden_sizes: vec![8], n_heads: 2, batch_norm: true };
    let mut params = init_params(&spec, 4242).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    jitter(&mut params, &mut rng);
    let (features, labels) = random_batch(&mut rng, 6, 10, 2);
    let batch: Vec<&FeatureVector> = features.iter().collect();
    let worst = max_fd_error(&params, &batch, &labels);
    assert!(worst < 1e-4, "max relative error {worst:.3e}");
}

#[test]
fn duplicating_the_batch_leaves_mean_gradients_unchanged() {
    let spec = NetworkSpec { input_dim: 8, hidden_sizes: vec![6], n_heads: 2, batch_norm: true };
    let params = init_params(&spec, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (features, labels) = random_batch(&mut rng, 5, 8, 2);

    let batch: Vec<&FeatureVector> = features.iter().collect();
    let mut work = params.clone();
    let cache = forward_train(&mut work, &batch).unwrap();
    let grads = backward(&work, &cache, &labels).unwrap();

    let doubled: Vec<&FeatureVector> = features.iter().chain(features.iter()).collect();
    let mut doubled_labels = Mat::zeros(10, 2);
    for i in 0..10 {
        for k in 0..2 {
            doubled_labels[(i, k)] = labels[(i % 5, k)];
        }
    }
    let mut work2 = params.clone();
    let cache2 = forward_train(&mut work2, &doubled).unwrap();
    let grads2 = backward(&work2, &cache2, &doubled_labels).unwrap();

    let loss = training_loss(&cache, &labels).unwrap();
    let loss2 = training_loss(&cache2, &doubled_labels).unwrap();
    assert!((loss - loss2).abs() < 1e-12);
    for (a, b) in grads.blocks().iter().zip(grads2.blocks().iter()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn head_gradients_are_isolated() {
    let spec = NetworkSpec { input_dim: 9, hidden_sizes: vec![5, 4], n_heads: 3, batch_norm: true };
    let params = init_params(&spec, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (features, labels) = random_batch(&mut rng, 6, 9, 3);
    let batch: Vec<&FeatureVector> = features.iter().collect();

    let mut work = params.clone();
    let cache = forward_train(&mut work, &batch).unwrap();
    let base = backward(&work, &cache, &labels).unwrap();

    // flipping head 2's labels must leave the gradients of heads 0 and 1
    // untouched (their loss terms do not involve other heads' parameters)
    let mut flipped = labels.clone();
    for i in 0..6 {
        flipped[(i, 2)] = 1.0 - flipped[(i, 2)];
    }
    let changed = backward(&work, &cache, &flipped).unwrap();
    for k in [0usize, 1] {
        assert_eq!(base.heads[k].weight, changed.heads[k].weight);
        assert_eq!(base.heads[k].bias, changed.heads[k].bias);
    }
    assert_ne!(base.heads[2].weight, changed.heads[2].weight);
    // the shared trunk sums over heads, so it must notice
    assert_ne!(base.layers[0].weight, changed.layers[0].weight);
}

fn toy_params() -> ModelParams {
    let spec = NetworkSpec { input_dim: 4, hidden_sizes: vec![3], n_heads: 2, batch_norm: true };
    ModelParams {
        spec,
        layers: vec![LayerParams {
            weight: Mat::from_rows(vec![
                vec![0.10, -0.20, 0.30],
                vec![0.40, 0.50, -0.60],
                vec![-0.70, 0.80, 0.90],
                vec![0.15, -0.25, 0.35],
            ]),
            bias: vec![0.01, -0.02, 0.03],
            batch_norm: Some(BatchNormParams {
                scale: vec![1.10, 0.90, 1.00],
                shift: vec![0.05, -0.05, 0.00],
                running_mean: vec![0.10, -0.10, 0.20],
                running_var: vec![1.50, 0.80, 1.20],
            }),
        }],
        heads: vec![
            HeadParams { weight: vec![0.20, -0.30, 0.40], bias: 0.05 },
            HeadParams { weight: vec![-0.10, 0.60, -0.20], bias: -0.15 },
        ],
    }
}

#[test]
fn eval_forward_matches_hand_computation() {
    let params = toy_params();
    let rows = [
        FeatureVector::new(vec![0, 2], 4).unwrap(),
        FeatureVector::new(vec![1, 3], 4).unwrap(),
        FeatureVector::new(vec![0, 1, 3], 4).unwrap(),
    ];
    let batch: Vec<&FeatureVector> = rows.iter().collect();
    let probs = forward_eval(&params, &batch).unwrap();
    let expected = [
        [0.5586861332819304, 0.5106206239932077],
        [0.5144991769973759, 0.493229869366948],
        [0.5340346117698872, 0.46087750262264776],
    ];
    for i in 0..3 {
        for k in 0..2 {
            assert!(
                (probs[(i, k)] - expected[i][k]).abs() < 1e-12,
                "row {i} head {k}: {} vs {}",
                probs[(i, k)],
                expected[i][k]
            );
        }
    }
}

#[test]
fn train_forward_matches_hand_computation_and_updates_running_stats() {
    let mut params = toy_params();
    let initial_bn = params.layers[0].batch_norm.clone().unwrap();
    let rows = [
        FeatureVector::new(vec![0, 2], 4).unwrap(),
        FeatureVector::new(vec![1, 3], 4).unwrap(),
    ];
    let batch: Vec<&FeatureVector> = rows.iter().collect();
    let cache = forward_train(&mut params, &batch).unwrap();
    let expected = [
        [0.5486060799474864, 0.5398934620754025],
        [0.5695454082912893, 0.4341354057576471],
    ];
    for i in 0..2 {
        for k in 0..2 {
            assert!((cache.probs[(i, k)] - expected[i][k]).abs() < 1e-12);
        }
    }
    // running statistics blend with momentum 0.9
    let bn_cache = cache.layers[0].bn.as_ref().unwrap();
    let bn = params.layers[0].batch_norm.as_ref().unwrap();
    for j in 0..3 {
        let want_mean = 0.9 * initial_bn.running_mean[j] + 0.1 * bn_cache.mean[j];
        let want_var = 0.9 * initial_bn.running_var[j] + 0.1 * bn_cache.var[j];
        assert!((bn.running_mean[j] - want_mean).abs() < 1e-15);
        assert!((bn.running_var[j] - want_var).abs() < 1e-15);
    }
}
