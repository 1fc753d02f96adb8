//! L1-regularized logistic regression by proximal gradient descent.
//!
//! The solver is plain ISTA with a fixed step 1/L, where L bounds the
//! Lipschitz constant of the mean logistic-loss gradient by
//! ||X||_F^2 / (4n) (plus the intercept column). That choice makes the
//! regularized objective non-increasing at every iteration, which the
//! tests rely on. The lambda grid is swept in descending order with warm
//! starts, and the model maximizing validation AUPRC wins.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::cohort::FeatureVector;
use crate::math;
use crate::metrics::{auprc, ScoredLabels};

#[derive(Clone, Debug, PartialEq)]
pub enum LogregError {
    SingleClassTraining,
    DimensionMismatch { expected: usize, got: usize },
    InvalidConfig(String),
    EmptySplit(&'static str),
    Validation(String),
}

impl fmt::Display for LogregError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogregError::SingleClassTraining => {
                write!(f, "training labels contain a single class")
            }
            LogregError::DimensionMismatch { expected, got } => {
                write!(f, "feature dimension {got}, model expects {expected}")
            }
            LogregError::InvalidConfig(m) => write!(f, "invalid solver config: {m}"),
            LogregError::EmptySplit(which) => write!(f, "{which} split is empty"),
            LogregError::Validation(m) => write!(f, "validation scoring failed: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LogregError {}

/// Sparse-input linear model; zero weights are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn nonzeros(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct L1Config {
    /// Positive, strictly descending.
    pub lambda_grid: Vec<f64>,
    pub max_iterations: usize,
    /// Stop when the objective decrease falls below this.
    pub tolerance: f64,
}

impl Default for L1Config {
    fn default() -> Self {
        // 10 points, log-spaced over [1e-5, 1e-1], descending
        let mut grid = Vec::with_capacity(10);
        for i in 0..10 {
            let t = i as f64 / 9.0;
            grid.push(math::exp(math::ln(1e-1) + t * (math::ln(1e-5) - math::ln(1e-1))));
        }
        Self { lambda_grid: grid, max_iterations: 5_000, tolerance: 1e-10 }
    }
}

impl L1Config {
    pub fn validate(&self) -> Result<(), LogregError> {
        if self.lambda_grid.is_empty() {
            return Err(LogregError::InvalidConfig("empty lambda grid".into()));
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0)) {
            return Err(LogregError::InvalidConfig("lambdas must be positive".into()));
        }
        if !self.lambda_grid.windows(2).all(|w| w[0] > w[1]) {
            return Err(LogregError::InvalidConfig("lambda grid must be descending".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(LogregError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(LogregError::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Proximal operator of t·|w|: sign(w) · max(|w| − t, 0).
pub fn soft_threshold(w: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if w > t {
        w - t
    } else if w < -t {
        w + t
    } else {
        0.0
    }
}

/// Per-lambda solver diagnostics, in grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaDiagnostics {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub validation_auprc: f64,
    pub nonzeros: usize,
    /// Largest single-iteration objective increase observed (0 when the
    /// descent was monotone, as the fixed 1/L step guarantees up to
    /// floating-point noise).
    pub max_objective_increase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct L1Fit {
    pub model: LinearModel,
    pub per_lambda: Vec<LambdaDiagnostics>,
}

fn margins(features: &[FeatureVector], weights: &[f64], intercept: f64) -> Vec<f64> {
    features
        .iter()
        .map(|fv| {
            let mut z = intercept;
            for &i in fv.indices() {
                z += weights[i as usize];
            }
            z
        })
        .collect()
}

/// sigmoid(w·x + b).
pub fn predict_proba(model: &LinearModel, features: &FeatureVector) -> Result<f64, LogregError> {
    if features.dim() as usize != model.weights.len() {
        return Err(LogregError::DimensionMismatch {
            expected: model.weights.len(),
            got: features.dim() as usize,
        });
    }
    let mut z = model.intercept;
    for &i in features.indices() {
        z += model.weights[i as usize];
    }
    Ok(math::sigmoid(z))
}

pub fn predict_batch(
    model: &LinearModel,
    features: &[FeatureVector],
) -> Result<Vec<f64>, LogregError> {
    features.iter().map(|fv| predict_proba(model, fv)).collect()
}

/// Fits the descending lambda grid with warm starts and returns the model
/// with the best validation AUPRC. Non-convergence within the iteration
/// budget is flagged in the diagnostics, not fatal.
pub fn fit_l1(
    train_features: &[FeatureVector],
    train_labels: &[bool],
    val_features: &[FeatureVector],
    val_labels: &[bool],
    config: &L1Config,
) -> Result<L1Fit, LogregError> {
    config.validate()?;
    if train_features.is_empty() {
        return Err(LogregError::EmptySplit("train"));
    }
    if val_features.is_empty() {
        return Err(LogregError::EmptySplit("validation"));
    }
    if train_labels.len() != train_features.len() || val_labels.len() != val_features.len() {
        return Err(LogregError::InvalidConfig("labels and features differ in length".into()));
    }
    let n_pos = train_labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == train_labels.len() {
        return Err(LogregError::SingleClassTraining);
    }
    let dim = train_features[0].dim() as usize;
    for fv in train_features.iter().chain(val_features) {
        if fv.dim() as usize != dim {
            return Err(LogregError::DimensionMismatch { expected: dim, got: fv.dim() as usize });
        }
    }

    let n = train_features.len() as f64;
    let nnz: usize = train_features.iter().map(|fv| fv.indices().len()).sum();
    // Lipschitz bound for binary features plus the all-ones intercept column
    let lipschitz = ((nnz as f64) + n) / (4.0 * n);
    let step = 1.0 / lipschitz;

    let labels_f: Vec<f64> = train_labels.iter().map(|&y| f64::from(u8::from(y))).collect();
    let objective = |z: &[f64], weights: &[f64], lambda: f64| -> f64 {
        let mut loss = 0.0;
        for (zi, yi) in z.iter().zip(&labels_f) {
            loss += math::softplus(*zi) - yi * zi;
        }
        let l1: f64 = weights.iter().map(|&w| math::abs(w)).sum();
        loss / n + lambda * l1
    };

    let mut weights = vec![0.0; dim];
    let mut intercept = 0.0;
    let mut per_lambda = Vec::with_capacity(config.lambda_grid.len());
    let mut best: Option<(f64, LinearModel)> = None;

    for &lambda in &config.lambda_grid {
        let mut converged = false;
        let mut iterations = 0usize;
        let mut prev_objective = f64::INFINITY;
        let mut max_increase = 0.0f64;
        for iter in 0..config.max_iterations {
            iterations = iter + 1;
            let z = margins(train_features, &weights, intercept);
            let current = objective(&z, &weights, lambda);
            if current > prev_objective && current - prev_objective > max_increase {
                max_increase = current - prev_objective;
            }
            if prev_objective - current < config.tolerance && iter > 0 {
                converged = true;
                break;
            }
            prev_objective = current;

            // gradient of the mean logistic loss
            let mut grad_w = vec![0.0; dim];
            let mut grad_b = 0.0;
            for ((fv, zi), yi) in train_features.iter().zip(&z).zip(&labels_f) {
                let residual = math::sigmoid(*zi) - yi;
                grad_b += residual;
                for &i in fv.indices() {
                    grad_w[i as usize] += residual;
                }
            }
            grad_b /= n;
            for g in &mut grad_w {
                *g /= n;
            }

            for (w, g) in weights.iter_mut().zip(&grad_w) {
                *w = soft_threshold(*w - step * g, step * lambda);
            }
            intercept -= step * grad_b;
        }

        let scores = predict_batch(
            &LinearModel { weights: weights.clone(), intercept, lambda },
            val_features,
        )?;
        let scored = ScoredLabels::new(scores, val_labels.to_vec())
            .map_err(|e| LogregError::Validation(alloc::format!("{e}")))?;
        let validation_auprc =
            auprc(&scored).map_err(|e| LogregError::Validation(alloc::format!("{e}")))?;
        let candidate = LinearModel { weights: weights.clone(), intercept, lambda };
        per_lambda.push(LambdaDiagnostics {
            lambda,
            iterations,
            converged,
            validation_auprc,
            nonzeros: candidate.nonzeros(),
            max_objective_increase: max_increase,
        });
        let improved = best
            .as_ref()
            .map_or(true, |(best_score, _)| validation_auprc > *best_score);
        if improved {
            best = Some((validation_auprc, candidate));
        }
    }

    let (_, model) = best.expect("grid is non-empty");
    Ok(L1Fit { model, per_lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn fv(indices: &[u32], dim: u32) -> FeatureVector {
        FeatureVector::new(indices.to_vec(), dim).unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(0.5, 0.7), 0.0);
        assert_eq!(soft_threshold(-1.2, 0.2), -1.0);
        let mut r = rng::seeded(2);
        for _ in 0..100 {
            let w = 4.0 * rng::uniform01(&mut r) - 2.0;
            assert_eq!(soft_threshold(w, 0.0), w);
        }
    }

    #[test]
    fn predict_proba_hand_case() {
        let model =
            LinearModel { weights: vec![0.5, -1.25, 2.0], intercept: 0.3, lambda: 0.0 };
        let p = predict_proba(&model, &fv(&[0, 2], 3)).unwrap();
        assert!((p - 0.9426758241011313).abs() < 1e-12);

        let zero = LinearModel { weights: vec![0.0; 3], intercept: 0.0, lambda: 0.0 };
        assert_eq!(predict_proba(&zero, &fv(&[1], 3)).unwrap(), 0.5);

        assert!(predict_proba(&model, &fv(&[0], 2)).is_err());
    }

    #[test]
    fn positive_weight_is_monotone() {
        let model = LinearModel { weights: vec![0.8, -0.3], intercept: -0.2, lambda: 0.0 };
        let without = predict_proba(&model, &fv(&[], 2)).unwrap();
        let with = predict_proba(&model, &fv(&[0], 2)).unwrap();
        assert!(with > without);
    }

    #[test]
    fn huge_lambda_shrinks_everything_to_base_rate() {
        // feature 0 predicts the label perfectly, but lambda dominates
        let features: Vec<FeatureVector> =
            (0..40).map(|i| if i < 10 { fv(&[0], 2) } else { fv(&[1], 2) }).collect();
        let labels: Vec<bool> = (0..40).map(|i| i < 10).collect();
        let config = L1Config {
            lambda_grid: vec![50.0],
            max_iterations: 5000,
            tolerance: 1e-12,
        };
        let fit = fit_l1(&features, &labels, &features, &labels, &config).unwrap();
        assert_eq!(fit.model.nonzeros(), 0);
        let base_rate = 0.25;
        let p = predict_proba(&fit.model, &fv(&[1], 2)).unwrap();
        assert!((p - base_rate).abs() < 1e-3, "p = {p}");
    }

    #[test]
    fn single_class_training_is_rejected() {
        let features = vec![fv(&[0], 1), fv(&[], 1)];
        let labels = vec![true, true];
        let err =
            fit_l1(&features, &labels, &features, &labels, &L1Config::default()).unwrap_err();
        assert_eq!(err, LogregError::SingleClassTraining);
    }

    #[test]
    fn config_validation() {
        let mut c = L1Config::default();
        c.lambda_grid = vec![];
        assert!(c.validate().is_err());
        c.lambda_grid = vec![0.1, 0.2];
        assert!(c.validate().is_err());
        c.lambda_grid = vec![0.2, 0.1];
        assert!(c.validate().is_ok());
        c.tolerance = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_grid_shape() {
        let c = L1Config::default();
        assert_eq!(c.lambda_grid.len(), 10);
        assert!((c.lambda_grid[0] - 1e-1).abs() < 1e-12);
        assert!((c.lambda_grid[9] - 1e-5).abs() < 1e-12);
        assert!(c.lambda_grid.windows(2).all(|w| w[0] > w[1]));
    }
}
