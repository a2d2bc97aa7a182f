//! Batch normalization over the channel axis of NC or NCHW tensors.

use crate::error::{arg_err, dim_err, Result};
use crate::ops::Mode;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

/// Running per-channel statistics used at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnStats<T> {
    pub fn identity(channels: usize) -> Self {
        BnStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// Folds the batch statistics recorded in `cache` into the running averages:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, cache: &BatchNormCache<T>, momentum: T) {
        let Some((mean, var)) = &cache.batch_stats else {
            return;
        };
        let keep = T::one() - momentum;
        for (r, &b) in self.mean.iter_mut().zip(mean) {
            *r = momentum * *r + keep * b;
        }
        for (r, &b) in self.var.iter_mut().zip(var) {
            *r = momentum * *r + keep * b;
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    channels: usize,
    spatial: usize,
    mode: Mode,
    /// Batch mean and biased variance; present in training mode only.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

fn layout<T: Scalar>(input: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(dim_err!("batch norm needs NC or NCHW input, got {:?}", shape));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    stats: &BnStats<T>,
    epsilon: T,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, ch, sp) = layout(input)?;
    if gamma.len() != ch || beta.len() != ch || stats.mean.len() != ch || stats.var.len() != ch
    {
        return Err(dim_err!(
            "batch norm parameters do not match {ch} channels"
        ));
    }
    if !(epsilon > T::zero()) {
        return Err(arg_err!("batch norm epsilon must be positive"));
    }
    let x = input.data();
    let (mean, var, batch_stats) = match mode {
        Mode::Training => {
            let count = n * sp;
            if count == 0 {
                return Err(arg_err!("batch norm over zero samples"));
            }
            let m = T::from_usize(count).unwrap();
            let mut mean = vec![T::zero(); ch];
            let mut var = vec![T::zero(); ch];
            for c in 0..ch {
                let mut s = T::zero();
                for b in 0..n {
                    s = s + x[(b * ch + c) * sp..][..sp].iter().copied().sum::<T>();
                }
                let mu = s / m;
                let mut v = T::zero();
                for b in 0..n {
                    for &xv in &x[(b * ch + c) * sp..][..sp] {
                        let d = xv - mu;
                        v = v + d * d;
                    }
                }
                mean[c] = mu;
                var[c] = v / m;
            }
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        Mode::Inference => (stats.mean.clone(), stats.var.clone(), None),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let mut x_hat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for c in 0..ch {
            let off = (b * ch + c) * sp;
            for j in off..off + sp {
                let xh = (x[j] - mean[c]) * inv_std[c];
                x_hat[j] = xh;
                out[j] = gamma[c] * xh + beta[c];
            }
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), out)?,
        BatchNormCache {
            x_hat,
            inv_std,
            channels: ch,
            spatial: sp,
            mode,
            batch_stats,
        },
    ))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    gamma: &[T],
    cache: &BatchNormCache<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (n, ch, sp) = layout(grad_out)?;
    if ch != cache.channels || sp != cache.spatial || grad_out.len() != cache.x_hat.len() {
        return Err(dim_err!(
            "batch norm grad shape {:?} does not match forward",
            grad_out.shape()
        ));
    }
    let g = grad_out.data();
    let xh = &cache.x_hat;
    let mut dgamma = vec![T::zero(); ch];
    let mut dbeta = vec![T::zero(); ch];
    for b in 0..n {
        for c in 0..ch {
            let off = (b * ch + c) * sp;
            for j in off..off + sp {
                dbeta[c] = dbeta[c] + g[j];
                dgamma[c] = dgamma[c] + g[j] * xh[j];
            }
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    match cache.mode {
        Mode::Training => {
            let m = T::from_usize(n * sp).unwrap();
            for c in 0..ch {
                let k = gamma[c] * cache.inv_std[c] / m;
                for b in 0..n {
                    let off = (b * ch + c) * sp;
                    for j in off..off + sp {
                        dx[j] = k * (m * g[j] - dbeta[c] - xh[j] * dgamma[c]);
                    }
                }
            }
        }
        Mode::Inference => {
            for c in 0..ch {
                let k = gamma[c] * cache.inv_std[c];
                for b in 0..n {
                    let off = (b * ch + c) * sp;
                    for j in off..off + sp {
                        dx[j] = k * g[j];
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(grad_out.shape(), dx)?, dgamma, dbeta))
}
