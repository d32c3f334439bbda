//! Batch normalization over the channel axis.
//!
//! Operates on a batch of feature vectors `[n × C]` (the pooled conv
//! output). Training mode normalizes with batch statistics (population
//! variance) and updates running statistics with momentum 0.1; inference
//! normalizes with the running statistics. Variance is stabilized with
//! `EPS = 1e-5`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BATCH_NORM_EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    /// Running statistics used at inference; updated in training mode,
    /// never touched by the optimizer.
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Input minus batch mean, per element.
    centered: Tensor,
    /// 1/sqrt(var + eps) per channel.
    inv_std: Vec<f64>,
    training: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl BatchNorm1d {
    pub fn init(channels: usize) -> Self {
        BatchNorm1d {
            gamma: Tensor::filled(&[channels], 1.0).expect("finite"),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0).expect("finite"),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        let s = input.shape();
        if s.len() != 2 || s[1] != self.channels() {
            return Err(Error::Dimension(format!(
                "batch norm expects [n × {}], got {s:?}",
                self.channels()
            )));
        }
        if s[0] == 0 {
            return Err(Error::Domain("batch norm on an empty batch".into()));
        }
        Ok((s[0], s[1]))
    }

    /// Training-mode forward over a batch; updates running statistics.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        let (n, c) = self.check_input(input)?;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for (m, v) in mean.iter_mut().zip(input.row(b)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut centered = vec![0.0; n * c];
        for b in 0..n {
            for j in 0..c {
                let d = input.at2(b, j) - mean[j];
                centered[b * c + j] = d;
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();

        let mut out = vec![0.0; n * c];
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        for b in 0..n {
            for j in 0..c {
                out[b * c + j] = gamma[j] * centered[b * c + j] * inv_std[j] + beta[j];
            }
        }
        for j in 0..c {
            let rm = self.running_mean.data()[j];
            let rv = self.running_var.data()[j];
            self.running_mean.data_mut()[j] = (1.0 - MOMENTUM) * rm + MOMENTUM * mean[j];
            self.running_var.data_mut()[j] = (1.0 - MOMENTUM) * rv + MOMENTUM * var[j];
        }
        Ok((
            Tensor::from_parts(vec![n, c], out),
            BatchNormCache {
                centered: Tensor::from_parts(vec![n, c], centered),
                inv_std,
                training: true,
            },
        ))
    }

    /// Inference-mode forward using running statistics.
    pub fn forward_infer(&self, input: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        let (n, c) = self.check_input(input)?;
        let inv_std: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
            .collect();
        let mut centered = vec![0.0; n * c];
        let mut out = vec![0.0; n * c];
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        for b in 0..n {
            for j in 0..c {
                let d = input.at2(b, j) - self.running_mean.data()[j];
                centered[b * c + j] = d;
                out[b * c + j] = gamma[j] * d * inv_std[j] + beta[j];
            }
        }
        Ok((
            Tensor::from_parts(vec![n, c], out),
            BatchNormCache {
                centered: Tensor::from_parts(vec![n, c], centered),
                inv_std,
                training: false,
            },
        ))
    }

    /// Exact gradients of the recorded forward. In training mode the batch
    /// mean and variance are functions of the input, so their terms are
    /// included.
    pub fn backward(
        &self,
        grad_out: &Tensor,
        cache: &BatchNormCache,
    ) -> Result<(Tensor, BatchNormGrads)> {
        let s = cache.centered.shape();
        let (n, c) = (s[0], s[1]);
        if grad_out.shape() != [n, c] {
            return Err(Error::State(format!(
                "batch norm backward: grad shape {:?} does not match cached forward {s:?}",
                grad_out.shape()
            )));
        }
        let gamma = self.gamma.data();
        let mut grad_gamma = vec![0.0; c];
        let mut grad_beta = vec![0.0; c];
        for b in 0..n {
            for j in 0..c {
                let xhat = cache.centered.at2(b, j) * cache.inv_std[j];
                grad_gamma[j] += grad_out.at2(b, j) * xhat;
                grad_beta[j] += grad_out.at2(b, j);
            }
        }

        let mut grad_in = vec![0.0; n * c];
        if cache.training {
            // Through batch statistics:
            //   dx = (γ·istd/n) · (n·g − Σg − x̂·Σ(g·x̂))
            for j in 0..c {
                let istd = cache.inv_std[j];
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                for b in 0..n {
                    let g = grad_out.at2(b, j);
                    sum_g += g;
                    sum_gx += g * cache.centered.at2(b, j) * istd;
                }
                for b in 0..n {
                    let g = grad_out.at2(b, j);
                    let xhat = cache.centered.at2(b, j) * istd;
                    grad_in[b * c + j] =
                        gamma[j] * istd / n as f64 * (n as f64 * g - sum_g - xhat * sum_gx);
                }
            }
        } else {
            for b in 0..n {
                for j in 0..c {
                    grad_in[b * c + j] = grad_out.at2(b, j) * gamma[j] * cache.inv_std[j];
                }
            }
        }
        Ok((
            Tensor::from_parts(vec![n, c], grad_in),
            BatchNormGrads {
                gamma: Tensor::from_parts(vec![c], grad_gamma),
                beta: Tensor::from_parts(vec![c], grad_beta),
            },
        ))
    }
}
