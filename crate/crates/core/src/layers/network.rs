//! The benchmark network's convolutional trunk: two same-padded 1-D conv
//! layers with ReLU, then one composite stage applied in order —
//! dropout, pooling over the full temporal axis, batch normalization —
//! yielding one feature vector per instance for the dense heads.
//!
//! Training-mode forward/backward run per instance (parallel-safe, fixed
//! reduction order) except for batch normalization, which couples the
//! batch and runs jointly.

use rayon::prelude::*;

use super::conv::{Conv1d, Conv1dCache, Conv1dGrads, Padding};
use super::norm::{BatchNorm1d, BatchNormCache, BatchNormGrads};
use super::{
    dropout_forward_with_mask, pool_backward, pool_forward, relu_backward, relu_forward,
    DropoutCache, PoolCache, PoolKind,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Architecture knobs for the trunk. The defaults mirror the benchmark
/// setup: 50 filters of width 3 per conv layer, dropout rate 0.5, max
/// pooling over the whole 48-step axis, batch normalization on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkConfig {
    pub in_channels: usize,
    pub time_steps: usize,
    pub conv_filters: usize,
    pub kernel_width: usize,
    pub dropout_rate: f64,
    pub padding: Padding,
    pub pool: PoolKind,
    pub batch_norm: bool,
}

impl TrunkConfig {
    pub fn keep_prob(&self) -> f64 {
        1.0 - self.dropout_rate
    }

    /// Time extent after both conv layers (valid padding shrinks it).
    pub fn feature_time(&self) -> usize {
        match self.padding {
            Padding::Same => self.time_steps,
            Padding::Valid => self.time_steps.saturating_sub(2 * (self.kernel_width - 1)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CnnTrunk {
    pub config: TrunkConfig,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub batch_norm: Option<BatchNorm1d>,
}

/// Per-instance caches from a training-mode forward.
struct InstanceCache {
    conv1: Conv1dCache,
    relu1: Tensor,
    conv2: Conv1dCache,
    relu2: Tensor,
    dropout: DropoutCache,
    pool: PoolCache,
}

/// Everything a training-mode batch backward needs.
pub struct TrunkBatchCache {
    instances: Vec<InstanceCache>,
    batch_norm: Option<BatchNormCache>,
}

/// Parameter gradients accumulated over a batch.
#[derive(Debug, Clone)]
pub struct TrunkGrads {
    pub conv1: Conv1dGrads,
    pub conv2: Conv1dGrads,
    pub batch_norm: Option<BatchNormGrads>,
}

impl CnnTrunk {
    pub fn init(config: TrunkConfig, rng: &mut RngStream) -> Result<Self> {
        if config.feature_time() < 1 || config.time_steps < config.kernel_width {
            return Err(Error::Dimension(format!(
                "time steps {} too short for two width-{} conv layers",
                config.time_steps, config.kernel_width
            )));
        }
        if !(0.0..1.0).contains(&config.dropout_rate) {
            return Err(Error::Domain(format!(
                "dropout rate must be in [0, 1), got {}",
                config.dropout_rate
            )));
        }
        let conv1 = Conv1d::init(
            config.conv_filters,
            config.in_channels,
            config.kernel_width,
            config.padding,
            rng,
        )?;
        let conv2 = Conv1d::init(
            config.conv_filters,
            config.conv_filters,
            config.kernel_width,
            config.padding,
            rng,
        )?;
        let batch_norm = config.batch_norm.then(|| BatchNorm1d::init(config.conv_filters));
        Ok(CnnTrunk {
            config,
            conv1,
            conv2,
            batch_norm,
        })
    }

    /// Feature dimension delivered to the dense heads.
    pub fn feature_dim(&self) -> usize {
        self.config.conv_filters
    }

    /// Samples one dropout mask per instance for a training batch.
    pub fn sample_dropout_masks(&self, batch_size: usize, rng: &mut RngStream) -> Vec<Tensor> {
        let shape = [self.config.conv_filters, self.config.feature_time()];
        let keep = self.config.keep_prob();
        (0..batch_size)
            .map(|_| super::sample_dropout_mask(&shape, keep, rng))
            .collect()
    }

    fn instance_forward(&self, input: &Tensor, mask: &Tensor) -> Result<(Vec<f64>, InstanceCache)> {
        let (pre1, conv1_cache) = self.conv1.forward(input)?;
        let (act1, relu1_cache) = relu_forward(&pre1);
        let (pre2, conv2_cache) = self.conv2.forward(&act1)?;
        let (act2, relu2_cache) = relu_forward(&pre2);
        let (dropped, dropout_cache) = dropout_forward_with_mask(&act2, mask)?;
        let (pooled, pool_cache) = pool_forward(&dropped, self.config.pool)?;
        Ok((
            pooled.data().to_vec(),
            InstanceCache {
                conv1: conv1_cache,
                relu1: relu1_cache,
                conv2: conv2_cache,
                relu2: relu2_cache,
                dropout: dropout_cache,
                pool: pool_cache,
            },
        ))
    }

    /// Training-mode forward over a batch. Returns the `[n × feature_dim]`
    /// feature matrix and the cache for an exact backward. Dropout masks
    /// must be pre-sampled (one per instance), which makes frozen-noise
    /// replay trivial.
    pub fn forward_batch_train(
        &mut self,
        inputs: &[Tensor],
        dropout_masks: &[Tensor],
    ) -> Result<(Tensor, TrunkBatchCache)> {
        if inputs.is_empty() {
            return Err(Error::Domain("forward on an empty batch".into()));
        }
        if inputs.len() != dropout_masks.len() {
            return Err(Error::State(format!(
                "{} inputs but {} dropout masks",
                inputs.len(),
                dropout_masks.len()
            )));
        }
        let per_instance: Vec<Result<(Vec<f64>, InstanceCache)>> = inputs
            .par_iter()
            .zip(dropout_masks.par_iter())
            .map(|(input, mask)| self.instance_forward(input, mask))
            .collect();
        let n = inputs.len();
        let c = self.feature_dim();
        let mut pooled = vec![0.0; n * c];
        let mut instances = Vec::with_capacity(n);
        for (b, r) in per_instance.into_iter().enumerate() {
            let (row, cache) = r?;
            pooled[b * c..(b + 1) * c].copy_from_slice(&row);
            instances.push(cache);
        }
        let pooled = Tensor::from_parts(vec![n, c], pooled);
        let (features, bn_cache) = match self.batch_norm.as_mut() {
            Some(bn) => {
                let (f, cache) = bn.forward_train(&pooled)?;
                (f, Some(cache))
            }
            None => (pooled, None),
        };
        Ok((
            features,
            TrunkBatchCache {
                instances,
                batch_norm: bn_cache,
            },
        ))
    }

    /// Inference-mode forward for one instance: dropout is the identity,
    /// normalization uses running statistics. Pure given `&self`, so it
    /// parallelizes across instances.
    pub fn forward_infer_one(&self, input: &Tensor) -> Result<Tensor> {
        let (pre1, _) = self.conv1.forward(input)?;
        let (act1, _) = relu_forward(&pre1);
        let (pre2, _) = self.conv2.forward(&act1)?;
        let (act2, _) = relu_forward(&pre2);
        let (pooled, _) = pool_forward(&act2, self.config.pool)?;
        match &self.batch_norm {
            Some(bn) => {
                let row = Tensor::from_parts(vec![1, self.feature_dim()], pooled.data().to_vec());
                let (out, _) = bn.forward_infer(&row)?;
                Ok(Tensor::from_parts(
                    vec![self.feature_dim()],
                    out.data().to_vec(),
                ))
            }
            None => Ok(pooled),
        }
    }

    /// Backward of a recorded training forward. `grad_features` is
    /// `[n × feature_dim]`; gradients are summed over instances in batch
    /// order (fixed reduction order, deterministic under parallelism).
    pub fn backward_batch(
        &self,
        grad_features: &Tensor,
        cache: &TrunkBatchCache,
    ) -> Result<TrunkGrads> {
        let n = cache.instances.len();
        let c = self.feature_dim();
        if grad_features.shape() != [n, c] {
            return Err(Error::State(format!(
                "trunk backward: grad shape {:?} does not match cached batch [{} × {}]",
                grad_features.shape(),
                n,
                c
            )));
        }
        let (grad_pooled, bn_grads) = match (&self.batch_norm, &cache.batch_norm) {
            (Some(bn), Some(bn_cache)) => {
                let (g, grads) = bn.backward(grad_features, bn_cache)?;
                (g, Some(grads))
            }
            (None, None) => (grad_features.clone(), None),
            _ => return Err(Error::State("batch norm cache out of sync".into())),
        };

        let per_instance: Vec<Result<(Conv1dGrads, Conv1dGrads)>> = cache
            .instances
            .par_iter()
            .enumerate()
            .map(|(b, inst)| {
                let g_pool =
                    Tensor::from_parts(vec![c], grad_pooled.row(b).to_vec());
                let g_dropped = pool_backward(&g_pool, &inst.pool)?;
                let g_act2 = super::dropout_backward(&g_dropped, &inst.dropout)?;
                let g_pre2 = relu_backward(&g_act2, &inst.relu2)?;
                let (g_act1, conv2_grads) = self.conv2.backward(&g_pre2, &inst.conv2)?;
                let g_pre1 = relu_backward(&g_act1, &inst.relu1)?;
                let conv1_grads = self.conv1.backward_params_only(&g_pre1, &inst.conv1)?;
                Ok((conv1_grads, conv2_grads))
            })
            .collect();

        let mut acc: Option<(Conv1dGrads, Conv1dGrads)> = None;
        for r in per_instance {
            let (g1, g2) = r?;
            match &mut acc {
                None => acc = Some((g1, g2)),
                Some((a1, a2)) => {
                    add_assign(&mut a1.kernels, &g1.kernels);
                    add_assign(&mut a1.bias, &g1.bias);
                    add_assign(&mut a2.kernels, &g2.kernels);
                    add_assign(&mut a2.bias, &g2.bias);
                }
            }
        }
        let (conv1, conv2) = acc.expect("non-empty batch");
        Ok(TrunkGrads {
            conv1,
            conv2,
            batch_norm: bn_grads,
        })
    }
}

fn add_assign(acc: &mut Tensor, delta: &Tensor) {
    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
}

impl Conv1d {
    /// Weight/bias gradients only — used for the first layer, whose input
    /// gradient nobody consumes.
    pub(crate) fn backward_params_only(
        &self,
        grad_out: &Tensor,
        cache: &Conv1dCache,
    ) -> Result<Conv1dGrads> {
        // Delegates to the full backward; the input-gradient half is the
        // same price as the weight half, so a dedicated loop would save
        // about a third of this layer's backward cost. Keep the exact
        // shared path unless profiling says otherwise.
        let (_, grads) = self.backward(grad_out, cache)?;
        Ok(grads)
    }
}
