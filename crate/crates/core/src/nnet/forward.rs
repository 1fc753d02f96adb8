//! Forward passes and loss.
//!
//! Sparse multi-hot inputs enter the first layer by index gather: only
//! active columns contribute. Train mode normalizes with batch statistics
//! (biased variance) and updates running statistics; eval mode uses the
//! running statistics and mutates nothing.

use alloc::vec;
use alloc::vec::Vec;

use super::{Mat, ModelParams, NnetError, BN_EPSILON, BN_MOMENTUM, LOSS_CLIP};
use crate::cohort::FeatureVector;
use crate::math;

#[derive(Clone, Debug)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub normalized: Mat,
}

#[derive(Clone, Debug)]
pub struct LayerCache {
    /// Pre-normalization affine output.
    pub affine: Mat,
    pub bn: Option<BnCache>,
    /// Post-activation output.
    pub hidden: Mat,
}

/// Everything the backward pass needs from one train-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Active input indices per batch row.
    pub input_indices: Vec<Vec<u32>>,
    pub layers: Vec<LayerCache>,
    pub logits: Mat,
    /// Per-head probabilities, rows = batch, columns = heads.
    pub probs: Mat,
}

fn check_batch(params: &ModelParams, batch: &[&FeatureVector]) -> Result<(), NnetError> {
    if batch.is_empty() {
        return Err(NnetError::EmptyBatch);
    }
    for fv in batch {
        if fv.dim() as usize != params.spec.input_dim {
            return Err(NnetError::DimensionMismatch {
                expected: params.spec.input_dim,
                got: fv.dim() as usize,
            });
        }
    }
    Ok(())
}

/// Affine for the sparse input layer: z[i] = bias + sum of weight rows at
/// the active indices.
fn affine_sparse(weight: &Mat, bias: &[f64], batch: &[&FeatureVector]) -> Mat {
    let mut z = Mat::zeros(batch.len(), bias.len());
    for (i, fv) in batch.iter().enumerate() {
        let row = z.row_mut(i);
        row.copy_from_slice(bias);
        for &idx in fv.indices() {
            let wrow = weight.row(idx as usize);
            for (out, w) in row.iter_mut().zip(wrow) {
                *out += w;
            }
        }
    }
    z
}

/// Dense affine: z = h W + bias.
fn affine_dense(weight: &Mat, bias: &[f64], input: &Mat) -> Mat {
    let mut z = Mat::zeros(input.rows(), bias.len());
    for i in 0..input.rows() {
        let row = z.row_mut(i);
        row.copy_from_slice(bias);
        for (k, &a) in input.row(i).iter().enumerate() {
            if a != 0.0 {
                let wrow = weight.row(k);
                for (out, w) in row.iter_mut().zip(wrow) {
                    *out += a * w;
                }
            }
        }
    }
    z
}

fn relu_inplace(m: &mut Mat) {
    for v in m.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn head_probs(params: &ModelParams, trunk: &Mat) -> (Mat, Mat) {
    let m = trunk.rows();
    let n_heads = params.heads.len();
    let mut logits = Mat::zeros(m, n_heads);
    let mut probs = Mat::zeros(m, n_heads);
    for i in 0..m {
        let h = trunk.row(i);
        for (k, head) in params.heads.iter().enumerate() {
            let mut z = head.bias;
            for (w, a) in head.weight.iter().zip(h) {
                z += w * a;
            }
            logits[(i, k)] = z;
            probs[(i, k)] = math::sigmoid(z);
        }
    }
    (logits, probs)
}

/// Train-mode forward pass. Requires at least two rows; updates the
/// running batch-norm statistics in place.
pub fn forward_train(
    params: &mut ModelParams,
    batch: &[&FeatureVector],
) -> Result<ForwardCache, NnetError> {
    check_batch(params, batch)?;
    if batch.len() < 2 {
        return Err(NnetError::BatchTooSmall { got: batch.len() });
    }
    let m = batch.len();
    let mut layers: Vec<LayerCache> = Vec::with_capacity(params.layers.len());
    for l in 0..params.layers.len() {
        let affine = if l == 0 {
            affine_sparse(&params.layers[0].weight, &params.layers[0].bias, batch)
        } else {
            let prev = &layers[l - 1].hidden;
            affine_dense(&params.layers[l].weight, &params.layers[l].bias, prev)
        };
        let width = affine.cols();
        let (bn, mut pre_act) = if let Some(bn_params) = &mut params.layers[l].batch_norm {
            let mut mean = vec![0.0; width];
            let mut var = vec![0.0; width];
            for i in 0..m {
                for (j, &z) in affine.row(i).iter().enumerate() {
                    mean[j] += z;
                }
            }
            for mu in &mut mean {
                *mu /= m as f64;
            }
            for i in 0..m {
                for (j, &z) in affine.row(i).iter().enumerate() {
                    let d = z - mean[j];
                    var[j] += d * d;
                }
            }
            for v in &mut var {
                *v /= m as f64;
            }
            let mut normalized = Mat::zeros(m, width);
            let mut out = Mat::zeros(m, width);
            for i in 0..m {
                for j in 0..width {
                    let xhat = (affine[(i, j)] - mean[j]) / math::sqrt(var[j] + BN_EPSILON);
                    normalized[(i, j)] = xhat;
                    out[(i, j)] = bn_params.scale[j] * xhat + bn_params.shift[j];
                }
            }
            for j in 0..width {
                bn_params.running_mean[j] =
                    BN_MOMENTUM * bn_params.running_mean[j] + (1.0 - BN_MOMENTUM) * mean[j];
                bn_params.running_var[j] =
                    BN_MOMENTUM * bn_params.running_var[j] + (1.0 - BN_MOMENTUM) * var[j];
            }
            (Some(BnCache { mean, var, normalized }), out)
        } else {
            (None, affine.clone())
        };
        relu_inplace(&mut pre_act);
        layers.push(LayerCache { affine, bn, hidden: pre_act });
    }
    let (logits, probs) = head_probs(params, &layers.last().expect("one layer").hidden);
    Ok(ForwardCache {
        input_indices: batch.iter().map(|fv| fv.indices().to_vec()).collect(),
        layers,
        logits,
        probs,
    })
}

/// Eval-mode forward pass: running statistics, no mutation. Returns
/// per-head probabilities (rows = batch, columns = heads).
pub fn forward_eval(params: &ModelParams, batch: &[&FeatureVector]) -> Result<Mat, NnetError> {
    check_batch(params, batch)?;
    let m = batch.len();
    let mut hidden: Option<Mat> = None;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = if l == 0 {
            affine_sparse(&layer.weight, &layer.bias, batch)
        } else {
            affine_dense(&layer.weight, &layer.bias, hidden.as_ref().expect("previous layer"))
        };
        if let Some(bn) = &layer.batch_norm {
            for i in 0..m {
                for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                    let xhat = (*v - bn.running_mean[j]) / math::sqrt(bn.running_var[j] + BN_EPSILON);
                    *v = bn.scale[j] * xhat + bn.shift[j];
                }
            }
        }
        relu_inplace(&mut z);
        hidden = Some(z);
    }
    let (_, probs) = head_probs(params, &hidden.expect("at least one layer"));
    Ok(probs)
}

/// Mean over heads of the mean-over-batch binary cross-entropy, computed
/// from probabilities clipped to [LOSS_CLIP, 1 - LOSS_CLIP].
pub fn multitask_loss(probs: &Mat, labels: &Mat) -> Result<f64, NnetError> {
    if probs.rows() != labels.rows() || probs.cols() != labels.cols() {
        return Err(NnetError::ShapeMismatch { context: "probabilities vs labels" });
    }
    if probs.rows() == 0 || probs.cols() == 0 {
        return Err(NnetError::EmptyBatch);
    }
    let mut total = 0.0;
    for (p, y) in probs.data().iter().zip(labels.data()) {
        let p = p.clamp(LOSS_CLIP, 1.0 - LOSS_CLIP);
        total -= y * math::ln(p) + (1.0 - y) * math::ln(1.0 - p);
    }
    Ok(total / (probs.rows() * probs.cols()) as f64)
}

/// The exact loss whose gradient `backward` computes: the same mean-head
/// mean-batch cross-entropy evaluated stably from the cached logits.
pub fn training_loss(cache: &ForwardCache, labels: &Mat) -> Result<f64, NnetError> {
    let logits = &cache.logits;
    if logits.rows() != labels.rows() || logits.cols() != labels.cols() {
        return Err(NnetError::ShapeMismatch { context: "logits vs labels" });
    }
    let mut total = 0.0;
    for (z, y) in logits.data().iter().zip(labels.data()) {
        total += math::softplus(*z) - y * z;
    }
    Ok(total / (logits.rows() * logits.cols()) as f64)
}
