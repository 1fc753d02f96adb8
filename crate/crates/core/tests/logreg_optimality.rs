//! Solver correctness for the L1 baseline: subgradient optimality at the
//! returned iterate, monotone objective descent, and grid-extreme
//! sparsity behavior.

use phenolab_core::cohort::FeatureVector;
use phenolab_core::logreg::{fit_l1, predict_batch, L1Config, LinearModel};
use phenolab_core::metrics::{auprc, ScoredLabels};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    ((rng.next_u64() as u128 * n as u128) >> 64) as u64
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Imbalanced synthetic data where a few features carry signal.
fn synthetic(n: usize, dim: u32, seed: u64) -> (Vec<FeatureVector>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let positive = uniform01(&mut rng) < 0.05;
        let mut idx: Vec<u32> = Vec::new();
        if positive {
            if uniform01(&mut rng) < 0.9 {
                idx.push(0);
            }
            if uniform01(&mut rng) < 0.6 {
                idx.push(1);
            }
        }
        for j in 2..dim {
            if uniform01(&mut rng) < 0.08 {
                idx.push(j);
            }
        }
        idx.sort_unstable();
        idx.dedup();
        features.push(FeatureVector::new(idx, dim).unwrap());
        labels.push(positive);
    }
    (features, labels)
}

/// Gradient of the mean logistic loss, recomputed independently of the
/// solver's internals.
fn loss_gradient(
    features: &[FeatureVector],
    labels: &[bool],
    model: &LinearModel,
) -> (Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut grad = vec![0.0; model.weights.len()];
    let mut grad_b = 0.0;
    for (fv, &y) in features.iter().zip(labels) {
        let mut z = model.intercept;
        for &i in fv.indices() {
            z += model.weights[i as usize];
        }
        let p = 1.0 / (1.0 + (-z).exp());
        let residual = p - if y { 1.0 } else { 0.0 };
        grad_b += residual;
        for &i in fv.indices() {
            grad[i as usize] += residual;
        }
    }
    for g in &mut grad {
        *g /= n;
    }
    (grad, grad_b / n)
}

#[test]
fn returned_model_satisfies_subgradient_conditions() {
    let (train_f, train_y) = synthetic(2000, 30, 42);
    let (val_f, val_y) = synthetic(600, 30, 43);
    // generous budget so the chosen iterate is tight enough for the
    // optimality check
    let config = L1Config { max_iterations: 200_000, tolerance: 1e-14, ..L1Config::default() };
    let fit = fit_l1(&train_f, &train_y, &val_f, &val_y, &config).unwrap();
    let model = &fit.model;
    let (grad, grad_b) = loss_gradient(&train_f, &train_y, model);
    let tol = 1e-4;
    for (j, (&w, &g)) in model.weights.iter().zip(&grad).enumerate() {
        if w == 0.0 {
            assert!(g.abs() <= model.lambda + tol, "zero weight {j}: |grad| {} > {}", g.abs(), model.lambda + tol);
        } else {
            let residual = g + model.lambda * w.signum();
            assert!(residual.abs() <= tol, "active weight {j}: residual {residual}");
        }
    }
    assert!(grad_b.abs() <= tol, "intercept gradient {grad_b}");
}

#[test]
fn objective_descent_is_monotone_and_grid_extremes_behave() {
    let (train_f, train_y) = synthetic(1500, 25, 7);
    let (val_f, val_y) = synthetic(400, 25, 8);
    let config = L1Config::default();
    let fit = fit_l1(&train_f, &train_y, &val_f, &val_y, &config).unwrap();

    for d in &fit.per_lambda {
        assert!(
            d.max_objective_increase <= 1e-10,
            "lambda {}: objective rose by {}",
            d.lambda,
            d.max_objective_increase
        );
    }
    // largest lambda fully shrinks; smallest keeps at least as many
    // non-zeros as the largest
    let first = fit.per_lambda.first().unwrap();
    let last = fit.per_lambda.last().unwrap();
    assert_eq!(first.nonzeros, 0, "largest lambda {} kept weights", first.lambda);
    assert!(last.nonzeros >= first.nonzeros);
    assert!(last.nonzeros > 0);
}

#[test]
fn separable_toy_reaches_perfect_training_auprc_at_small_lambda() {
    // feature 0 identifies positives exactly
    let n = 200;
    let features: Vec<FeatureVector> = (0..n)
        .map(|i| {
            let idx = if i % 3 == 0 { vec![0u32] } else { vec![1u32] };
            FeatureVector::new(idx, 2).unwrap()
        })
        .collect();
    let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let config = L1Config { lambda_grid: vec![1e-4], max_iterations: 50_000, tolerance: 1e-14 };
    let fit = fit_l1(&features, &labels, &features, &labels, &config).unwrap();
    let scores = predict_batch(&fit.model, &features).unwrap();
    let ap = auprc(&ScoredLabels::new(scores, labels).unwrap()).unwrap();
    assert_eq!(ap, 1.0);
}

#[test]
fn fit_is_deterministic() {
    let (train_f, train_y) = synthetic(800, 20, 3);
    let (val_f, val_y) = synthetic(200, 20, 4);
    let config = L1Config::default();
    let a = fit_l1(&train_f, &train_y, &val_f, &val_y, &config).unwrap();
    let b = fit_l1(&train_f, &train_y, &val_f, &val_y, &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn validation_selection_prefers_higher_auprc() {
    let (train_f, train_y) = synthetic(1500, 25, 50);
    let (val_f, val_y) = synthetic(400, 25, 51);
    let fit = fit_l1(&train_f, &train_y, &val_f, &val_y, &L1Config::default()).unwrap();
    let best = fit
        .per_lambda
        .iter()
        .map(|d| d.validation_auprc)
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = fit
        .per_lambda
        .iter()
        .find(|d| d.lambda == fit.model.lambda)
        .unwrap();
    assert_eq!(chosen.validation_auprc, best);
}

#[test]
fn warm_starts_do_not_change_convergence_targets() {
    // each lambda fitted in isolation agrees with the warm-started sweep
    let (train_f, train_y) = synthetic(600, 15, 77);
    let (val_f, val_y) = synthetic(200, 15, 78);
    let sweep_config = L1Config {
        lambda_grid: vec![1e-2, 1e-3],
        max_iterations: 100_000,
        tolerance: 1e-14,
    };
    let sweep = fit_l1(&train_f, &train_y, &val_f, &val_y, &sweep_config).unwrap();
    let solo_config = L1Config {
        lambda_grid: vec![1e-3],
        max_iterations: 100_000,
        tolerance: 1e-14,
    };
    let solo = fit_l1(&train_f, &train_y, &val_f, &val_y, &solo_config).unwrap();
    let from_sweep = &sweep.per_lambda[1];
    let from_solo = &solo.per_lambda[0];
    assert_eq!(from_sweep.lambda, from_solo.lambda);
    assert_eq!(from_sweep.nonzeros, from_solo.nonzeros);
    assert!((from_sweep.validation_auprc - from_solo.validation_auprc).abs() < 1e-6);
}
