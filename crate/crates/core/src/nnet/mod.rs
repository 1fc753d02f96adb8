//! Feed-forward engine with a shared trunk and one sigmoid head per task.
//!
//! A single-task network is the one-head case; nothing else in the code
//! path differs. Hidden layers apply affine -> batch normalization (when
//! enabled) -> rectified linear, in double precision throughout. Training
//! uses shuffled mini-batch Adam with per-epoch validation AUPRC on the
//! target head; the parameters returned come from the best epoch.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

mod adam;
mod backward;
mod forward;
mod mat;
mod train;

pub use adam::{adam_step, AdamState};
pub use backward::{backward, BnGrads, Gradients, HeadGrads, LayerGrads};
pub use forward::{
    forward_eval, forward_train, multitask_loss, training_loss, BnCache, ForwardCache, LayerCache,
};
pub use mat::Mat;
pub use train::{predict, train, TaskData, TrainConfig, TrainHistory};

use crate::rng;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
/// Probability clip applied inside `multitask_loss` only.
pub const LOSS_CLIP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub enum NnetError {
    InvalidSpec(String),
    DimensionMismatch { expected: usize, got: usize },
    BatchTooSmall { got: usize },
    EmptyBatch,
    EmptySplit(&'static str),
    ShapeMismatch { context: &'static str },
    NanLoss { epoch: usize, step: usize },
    Validation(String),
}

impl fmt::Display for NnetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnetError::InvalidSpec(m) => write!(f, "invalid network spec: {m}"),
            NnetError::DimensionMismatch { expected, got } => {
                write!(f, "input dimension {got}, network expects {expected}")
            }
            NnetError::BatchTooSmall { got } => {
                write!(f, "training batches need >= 2 rows for batch statistics, got {got}")
            }
            NnetError::EmptyBatch => write!(f, "batch is empty"),
            NnetError::EmptySplit(which) => write!(f, "{which} split is empty"),
            NnetError::ShapeMismatch { context } => write!(f, "shape mismatch: {context}"),
            NnetError::NanLoss { epoch, step } => {
                write!(f, "loss became non-finite at epoch {epoch}, step {step}")
            }
            NnetError::Validation(m) => write!(f, "validation scoring failed: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NnetError {}

/// Architecture: input width, one or two hidden layers, and the number of
/// output heads (head 0 is always the target task).
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub n_heads: usize,
    pub batch_norm: bool,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>, n_heads: usize) -> Self {
        Self { input_dim, hidden_sizes, n_heads, batch_norm: true }
    }

    pub fn validate(&self) -> Result<(), NnetError> {
        if self.input_dim == 0 {
            return Err(NnetError::InvalidSpec("input_dim must be positive".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.len() > 2 {
            return Err(NnetError::InvalidSpec(alloc::format!(
                "expected 1 or 2 hidden layers, got {}",
                self.hidden_sizes.len()
            )));
        }
        if self.hidden_sizes.iter().any(|&w| w == 0) {
            return Err(NnetError::InvalidSpec("hidden widths must be positive".into()));
        }
        if self.n_heads == 0 {
            return Err(NnetError::InvalidSpec("need at least one head".into()));
        }
        Ok(())
    }
}

/// Per-feature batch-norm parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchNormParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerParams {
    /// Weight matrix, input-major: `weight[(i, j)]` connects input i to
    /// unit j.
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub batch_norm: Option<BatchNormParams>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadParams {
    pub weight: Vec<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerParams>,
    pub heads: Vec<HeadParams>,
}

impl ModelParams {
    /// Trainable parameter blocks in a fixed order (weights, biases, and
    /// batch-norm scale/shift per layer, then per-head weights and bias).
    /// `Gradients::blocks` follows the same order.
    pub fn trainable_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = Vec::new();
        for layer in &mut self.layers {
            blocks.push(layer.weight.data_mut());
            blocks.push(layer.bias.as_mut_slice());
            if let Some(bn) = &mut layer.batch_norm {
                blocks.push(bn.scale.as_mut_slice());
                blocks.push(bn.shift.as_mut_slice());
            }
        }
        for head in &mut self.heads {
            blocks.push(head.weight.as_mut_slice());
            blocks.push(core::slice::from_mut(&mut head.bias));
        }
        blocks
    }
}

/// Xavier-uniform initialization: weights in [-L, L] with
/// L = sqrt(6 / (fan_in + fan_out)); biases 0, scale 1, shift 0, running
/// mean 0, running variance 1. Deterministic per seed.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ModelParams, NnetError> {
    spec.validate()?;
    let mut rng = rng::seeded_stream(seed, 0);
    let mut draw = |fan_in: usize, fan_out: usize| {
        let limit = crate::math::sqrt(6.0 / (fan_in + fan_out) as f64);
        limit * (2.0 * rng::uniform01(&mut rng) - 1.0)
    };
    let mut layers = Vec::with_capacity(spec.hidden_sizes.len());
    let mut fan_in = spec.input_dim;
    for &width in &spec.hidden_sizes {
        let mut weight = Mat::zeros(fan_in, width);
        for v in weight.data_mut() {
            *v = draw(fan_in, width);
        }
        layers.push(LayerParams {
            weight,
            bias: alloc::vec![0.0; width],
            batch_norm: spec.batch_norm.then(|| BatchNormParams {
                scale: alloc::vec![1.0; width],
                shift: alloc::vec![0.0; width],
                running_mean: alloc::vec![0.0; width],
                running_var: alloc::vec![1.0; width],
            }),
        });
        fan_in = width;
    }
    let mut heads = Vec::with_capacity(spec.n_heads);
    for _ in 0..spec.n_heads {
        let weight: Vec<f64> = (0..fan_in).map(|_| draw(fan_in, 1)).collect();
        heads.push(HeadParams { weight, bias: 0.0 });
    }
    Ok(ModelParams { spec: spec.clone(), layers, heads })
}
