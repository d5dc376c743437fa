//! Per-channel batch normalization over (n, h, w).

use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f32 = 1e-5;
/// Weight kept on the old running statistic: `new = 0.9 * old + 0.1 * batch`.
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine parameters and running statistics of one batchnorm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
    pub momentum: f32,
    pub mode: Mode,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Normalized input before the affine map.
    pub x_hat: Tensor,
    pub inv_std: Vec<f32>,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// Normalizes `input` per channel. In train mode batch statistics are used and
/// the running statistics in `state` are updated; in eval mode only the running
/// statistics are read.
pub fn batchnorm(input: &Tensor, state: &mut BatchNormState) -> Result<(Tensor, BatchNormCache)> {
    let BatchNormState {
        gamma,
        beta,
        running_mean,
        running_var,
        epsilon,
        momentum,
        mode,
    } = state;
    batchnorm_parts(
        input,
        gamma,
        beta,
        RunningStats {
            mean: running_mean,
            var: running_var,
        },
        *epsilon,
        *momentum,
        *mode,
    )
}

pub(crate) struct RunningStats<'a> {
    pub mean: &'a mut [f32],
    pub var: &'a mut [f32],
}

pub(crate) fn batchnorm_parts(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running: RunningStats<'_>,
    epsilon: f32,
    momentum: f32,
    mode: Mode,
) -> Result<(Tensor, BatchNormCache)> {
    let [n, c, h, w] = input.shape();
    for (name, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("running_mean", running.mean.len()),
        ("running_var", running.var.len()),
    ] {
        if len != c {
            return Err(Error::shape(
                "batchnorm",
                "channels",
                format!("{name} has {len} entries, input has {c} channels"),
            ));
        }
    }
    let count = n * h * w;
    if mode == Mode::Train && count < 2 {
        return Err(Error::shape(
            "batchnorm",
            "n*h*w",
            format!("train mode needs at least 2 values per channel, got {count}"),
        ));
    }

    let mut out = Tensor::zeros(input.shape());
    let mut x_hat = Tensor::zeros(input.shape());
    let mut inv_std = vec![0.0f32; c];
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0f64;
                for b in 0..n {
                    sum += input.plane(b, ch).iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    sq += input
                        .plane(b, ch)
                        .iter()
                        .map(|&v| (v as f64 - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                running.mean[ch] = momentum * running.mean[ch] + (1.0 - momentum) * mean as f32;
                running.var[ch] = momentum * running.var[ch] + (1.0 - momentum) * var as f32;
                assert!(
                    running.var[ch] >= 0.0 || running.var[ch].is_nan(),
                    "running variance went negative"
                );
                (mean as f32, var as f32)
            }
            Mode::Eval => (running.mean[ch], running.var[ch]),
        };
        let is = 1.0 / (var + epsilon).sqrt();
        inv_std[ch] = is;
        let (g, bt) = (gamma[ch], beta[ch]);
        for b in 0..n {
            let src = input.plane(b, ch);
            let xh = x_hat.plane_mut(b, ch);
            let o = out.plane_mut(b, ch);
            for ((d, o), &s) in xh.iter_mut().zip(o.iter_mut()).zip(src) {
                *d = (s - mean) * is;
                *o = g * *d + bt;
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            x_hat,
            inv_std,
            mode,
        },
    ))
}

/// Backward of [`batchnorm`]. In train mode the batch statistics are
/// differentiated through; in eval mode they are constants.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &[f32],
    grad_out: &Tensor,
) -> Result<BatchNormGrads> {
    let [n, c, h, w] = cache.x_hat.shape();
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::shape(
            "batchnorm_backward",
            "grad_out",
            format!("{:?} vs {:?}", grad_out.shape(), cache.x_hat.shape()),
        ));
    }
    if gamma.len() != c {
        return Err(Error::shape(
            "batchnorm_backward",
            "channels",
            format!("{} gamma for {c} channels", gamma.len()),
        ));
    }
    let count = (n * h * w) as f32;
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for ch in 0..c {
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for b in 0..n {
            for (&g, &xh) in grad_out.plane(b, ch).iter().zip(cache.x_hat.plane(b, ch)) {
                sum_g += g as f64;
                sum_gx += (g * xh) as f64;
            }
        }
        dbeta[ch] = sum_g as f32;
        dgamma[ch] = sum_gx as f32;
        let scale = gamma[ch] * cache.inv_std[ch];
        match cache.mode {
            Mode::Train => {
                let mean_g = (sum_g / count as f64) as f32;
                let mean_gx = (sum_gx / count as f64) as f32;
                for b in 0..n {
                    let xh = cache.x_hat.plane(b, ch);
                    let go = grad_out.plane(b, ch);
                    for ((d, &g), &x) in dx.plane_mut(b, ch).iter_mut().zip(go).zip(xh) {
                        *d = scale * (g - mean_g - x * mean_gx);
                    }
                }
            }
            Mode::Eval => {
                for b in 0..n {
                    for (d, &g) in dx.plane_mut(b, ch).iter_mut().zip(grad_out.plane(b, ch)) {
                        *d = scale * g;
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}
