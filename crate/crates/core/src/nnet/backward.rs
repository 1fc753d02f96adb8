//! Backpropagation, including the path through batch statistics.

use alloc::vec;
use alloc::vec::Vec;

use super::{ForwardCache, Mat, ModelParams, NnetError, BN_EPSILON};
use crate::math;

#[derive(Clone, Debug, PartialEq)]
pub struct BnGrads {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub batch_norm: Option<BnGrads>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub weight: Vec<f64>,
    pub bias: f64,
}

/// Gradient of the training loss for every trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub heads: Vec<HeadGrads>,
}

impl Gradients {
    /// Zeroed gradients shaped like the given parameters.
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Mat::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                    batch_norm: l.batch_norm.as_ref().map(|bn| BnGrads {
                        scale: vec![0.0; bn.scale.len()],
                        shift: vec![0.0; bn.shift.len()],
                    }),
                })
                .collect(),
            heads: params
                .heads
                .iter()
                .map(|h| HeadGrads { weight: vec![0.0; h.weight.len()], bias: 0.0 })
                .collect(),
        }
    }

    /// Blocks in the same order as `ModelParams::trainable_blocks_mut`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut blocks = Vec::new();
        for layer in &self.layers {
            blocks.push(layer.weight.data());
            blocks.push(layer.bias.as_slice());
            if let Some(bn) = &layer.batch_norm {
                blocks.push(bn.scale.as_slice());
                blocks.push(bn.shift.as_slice());
            }
        }
        for head in &self.heads {
            blocks.push(head.weight.as_slice());
            blocks.push(core::slice::from_ref(&head.bias));
        }
        blocks
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
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

/// Gradients of `training_loss` with respect to every trainable parameter.
///
/// Head gradients flow into the shared trunk summed across heads; with
/// batch normalization the gradient goes through the batch mean and
/// variance as well.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    labels: &Mat,
) -> Result<Gradients, NnetError> {
    let m = cache.probs.rows();
    let n_heads = cache.probs.cols();
    if labels.rows() != m || labels.cols() != n_heads {
        return Err(NnetError::ShapeMismatch { context: "labels vs cached batch" });
    }
    let mut grads = Gradients::zeros_like(params);
    let scale = 1.0 / (m * n_heads) as f64;

    // heads: d loss / d logit = (p - y) / (m * heads)
    let trunk = &cache.layers.last().expect("at least one layer").hidden;
    let mut d_trunk = Mat::zeros(m, trunk.cols());
    for i in 0..m {
        let h = trunk.row(i);
        for k in 0..n_heads {
            let dz = (cache.probs[(i, k)] - labels[(i, k)]) * scale;
            let head = &params.heads[k];
            let hg = &mut grads.heads[k];
            hg.bias += dz;
            for (j, (&a, w)) in h.iter().zip(&head.weight).enumerate() {
                hg.weight[j] += dz * a;
                d_trunk[(i, j)] += dz * w;
            }
        }
    }

    // hidden layers, top down
    let mut d_hidden = d_trunk;
    for l in (0..params.layers.len()).rev() {
        let layer_cache = &cache.layers[l];
        let width = layer_cache.hidden.cols();

        // relu: pass gradient only where the activation is positive
        let mut d_out = d_hidden;
        for i in 0..m {
            let h = layer_cache.hidden.row(i);
            for (j, d) in d_out.row_mut(i).iter_mut().enumerate() {
                if h[j] <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        // batch norm backward (biased batch variance):
        // dz_i = istd * (dxhat_i - mean(dxhat) - xhat_i * mean(dxhat * xhat))
        let d_affine = if let Some(bn_cache) = &layer_cache.bn {
            let bn_params = params.layers[l].batch_norm.as_ref().expect("bn params");
            let bn_grads = grads.layers[l].batch_norm.as_mut().expect("bn grads");
            let mut sum_dxhat = vec![0.0; width];
            let mut sum_dxhat_xhat = vec![0.0; width];
            let mut d_xhat = Mat::zeros(m, width);
            for i in 0..m {
                for j in 0..width {
                    let dy = d_out[(i, j)];
                    let xhat = bn_cache.normalized[(i, j)];
                    bn_grads.scale[j] += dy * xhat;
                    bn_grads.shift[j] += dy;
                    let dx = dy * bn_params.scale[j];
                    d_xhat[(i, j)] = dx;
                    sum_dxhat[j] += dx;
                    sum_dxhat_xhat[j] += dx * xhat;
                }
            }
            let mut d_affine = Mat::zeros(m, width);
            let inv_m = 1.0 / m as f64;
            for j in 0..width {
                let istd = 1.0 / math::sqrt(bn_cache.var[j] + BN_EPSILON);
                let mean_dxhat = sum_dxhat[j] * inv_m;
                let mean_dxhat_xhat = sum_dxhat_xhat[j] * inv_m;
                for i in 0..m {
                    d_affine[(i, j)] = istd
                        * (d_xhat[(i, j)] - mean_dxhat - bn_cache.normalized[(i, j)] * mean_dxhat_xhat);
                }
            }
            d_affine
        } else {
            d_out
        };

        // affine backward
        let layer_grads = &mut grads.layers[l];
        for i in 0..m {
            let dz = d_affine.row(i);
            for (j, &d) in dz.iter().enumerate() {
                layer_grads.bias[j] += d;
            }
        }
        if l == 0 {
            for (i, indices) in cache.input_indices.iter().enumerate() {
                let dz = d_affine.row(i);
                for &idx in indices {
                    let wrow = layer_grads.weight.row_mut(idx as usize);
                    for (g, &d) in wrow.iter_mut().zip(dz) {
                        *g += d;
                    }
                }
            }
            d_hidden = Mat::zeros(0, 0);
        } else {
            let prev_hidden = &cache.layers[l - 1].hidden;
            let weight = &params.layers[l].weight;
            let mut d_prev = Mat::zeros(m, prev_hidden.cols());
            for i in 0..m {
                let dz = d_affine.row(i);
                let prev = prev_hidden.row(i);
                for (k, &a) in prev.iter().enumerate() {
                    if a != 0.0 {
                        let wrow = layer_grads.weight.row_mut(k);
                        for (g, &d) in wrow.iter_mut().zip(dz) {
                            *g += a * d;
                        }
                    }
                    let wrow = weight.row(k);
                    let mut acc = 0.0;
                    for (&w, &d) in wrow.iter().zip(dz) {
                        acc += w * d;
                    }
                    d_prev[(i, k)] = acc;
                }
            }
            d_hidden = d_prev;
        }
    }
    Ok(grads)
}
