//! Full classifier: convolutional trunk plus the uncertainty head, with
//! batch-level loss/gradient computation and named parameter access for
//! the optimizer and checkpoints.

use serde::{Deserialize, Serialize};

use crate::bayes::{combined_loss_grads, BayesHead, LossWeights, Prediction};
use crate::error::{Error, Result};
use crate::layers::{CnnTrunk, Padding, PoolKind, TrunkConfig};
use crate::rng::RngStream;
use crate::tensor::{sample_standard_normal, Tensor};

/// Which loss the model trains under. The benchmark is the σ-free plain
/// CNN: standard cross-entropy only, σ head detached, clean-softmax
/// predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Bayesian,
    Benchmark,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayesian" => Ok(Variant::Bayesian),
            "benchmark" => Ok(Variant::Benchmark),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected bayesian or benchmark)"
            ))),
        }
    }
}

/// Architecture description, serializable into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub time_steps: usize,
    pub conv_filters: usize,
    pub kernel_width: usize,
    pub dropout_rate: f64,
    pub padding: Padding,
    pub pool: PoolKind,
    pub batch_norm: bool,
    pub n_classes: usize,
    pub per_class_sigma: bool,
}

impl ModelConfig {
    pub fn trunk_config(&self) -> TrunkConfig {
        TrunkConfig {
            in_channels: self.in_channels,
            time_steps: self.time_steps,
            conv_filters: self.conv_filters,
            kernel_width: self.kernel_width,
            dropout_rate: self.dropout_rate,
            padding: self.padding,
            pool: self.pool,
            batch_norm: self.batch_norm,
        }
    }
}

/// Pre-sampled noise for one training batch: a dropout mask and a
/// `[T × C]` standard-normal block per instance. Sampling up front makes
/// frozen-noise replay (gradient checks, loss-decrease probes) trivial.
#[derive(Debug, Clone)]
pub struct BatchNoise {
    pub dropout_masks: Vec<Tensor>,
    pub eps: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct FullModel {
    pub trunk: CnnTrunk,
    pub head: BayesHead,
}

/// Named parameter gradients, aligned with `FullModel::param_names`.
pub struct ModelGrads {
    pub tensors: Vec<Tensor>,
}

impl FullModel {
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let trunk = CnnTrunk::init(config.trunk_config(), rng)?;
        let head = BayesHead::init(
            trunk.feature_dim(),
            config.n_classes,
            config.per_class_sigma,
            rng,
        );
        Ok(FullModel { trunk, head })
    }

    /// Stable parameter order shared by gradients, optimizer moments,
    /// and checkpoints.
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = vec!["conv1.kernels", "conv1.bias", "conv2.kernels", "conv2.bias"];
        if self.trunk.batch_norm.is_some() {
            names.push("norm.gamma");
            names.push("norm.beta");
        }
        names.extend([
            "head.logit.weights",
            "head.logit.bias",
            "head.sigma.weights",
            "head.sigma.bias",
        ]);
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.trunk.conv1.kernels,
            &self.trunk.conv1.bias,
            &self.trunk.conv2.kernels,
            &self.trunk.conv2.bias,
        ];
        if let Some(bn) = &self.trunk.batch_norm {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out.extend([
            &self.head.logit.weights,
            &self.head.logit.bias,
            &self.head.sigma.weights,
            &self.head.sigma.bias,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.trunk.conv1.kernels,
            &mut self.trunk.conv1.bias,
            &mut self.trunk.conv2.kernels,
            &mut self.trunk.conv2.bias,
        ];
        if let Some(bn) = &mut self.trunk.batch_norm {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.extend([
            &mut self.head.logit.weights,
            &mut self.head.logit.bias,
            &mut self.head.sigma.weights,
            &mut self.head.sigma.bias,
        ]);
        out
    }

    /// Non-trainable state that still belongs in checkpoints (running
    /// normalization statistics).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        match &self.trunk.batch_norm {
            Some(bn) => vec![
                ("norm.running_mean", &bn.running_mean),
                ("norm.running_var", &bn.running_var),
            ],
            None => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match &mut self.trunk.batch_norm {
            Some(bn) => vec![
                ("norm.running_mean", &mut bn.running_mean),
                ("norm.running_var", &mut bn.running_var),
            ],
            None => vec![],
        }
    }

    /// Samples the dropout masks and Monte Carlo noise for one batch.
    pub fn sample_batch_noise(
        &self,
        batch_size: usize,
        mc_samples: usize,
        dropout_rng: &mut RngStream,
        mc_rng: &mut RngStream,
    ) -> BatchNoise {
        let dropout_masks = self.trunk.sample_dropout_masks(batch_size, dropout_rng);
        let eps = (0..batch_size)
            .map(|_| sample_standard_normal(mc_rng, &[mc_samples, self.head.n_classes()]))
            .collect();
        BatchNoise { dropout_masks, eps }
    }

    /// Mean combined loss over the batch plus gradients of that mean.
    /// Training-mode forward (batch statistics, dropout applied); noise
    /// is fixed by the caller. `instance_weights` rescales each
    /// instance's contribution (class weighting); `None` means uniform.
    /// Non-finite losses surface as errors.
    pub fn batch_loss_and_grads(
        &mut self,
        inputs: &[Tensor],
        labels: &[usize],
        noise: &BatchNoise,
        weights: LossWeights,
        variant: Variant,
        instance_weights: Option<&[f64]>,
    ) -> Result<(f64, ModelGrads)> {
        use rayon::prelude::*;
        let n = inputs.len();
        if n == 0 {
            return Err(Error::Domain("loss of an empty batch".into()));
        }
        if labels.len() != n || noise.dropout_masks.len() != n || noise.eps.len() != n {
            return Err(Error::State(
                "batch inputs, labels, and noise have mismatched lengths".into(),
            ));
        }
        if let Some(w) = instance_weights {
            if w.len() != n {
                return Err(Error::State(
                    "instance weights do not match the batch length".into(),
                ));
            }
        }
        let (features, trunk_cache) =
            self.trunk.forward_batch_train(inputs, &noise.dropout_masks)?;
        let feature_dim = self.trunk.feature_dim();
        let train_sigma = variant == Variant::Bayesian;

        let head = &self.head;
        let per_instance: Vec<Result<(f64, crate::bayes::HeadGrads)>> = (0..n)
            .into_par_iter()
            .map(|b| {
                let feature = Tensor::from_parts(vec![feature_dim], features.row(b).to_vec());
                combined_loss_grads(head, &feature, labels[b], &noise.eps[b], weights, train_sigma)
            })
            .collect();

        let base = 1.0 / n as f64;
        let mut total_loss = 0.0;
        let mut grad_features = vec![0.0; n * feature_dim];
        let mut logit_w_grad = Tensor::zeros(self.head.logit.weights.shape());
        let mut logit_b_grad = Tensor::zeros(self.head.logit.bias.shape());
        let mut sigma_w_grad = Tensor::zeros(self.head.sigma.weights.shape());
        let mut sigma_b_grad = Tensor::zeros(self.head.sigma.bias.shape());
        for (b, result) in per_instance.into_iter().enumerate() {
            let (loss, grads) = result?;
            let scale = base * instance_weights.map_or(1.0, |w| w[b]);
            total_loss += loss * scale;
            for (dst, src) in grad_features[b * feature_dim..(b + 1) * feature_dim]
                .iter_mut()
                .zip(grads.input.data())
            {
                *dst = src * scale;
            }
            axpy(&mut logit_w_grad, &grads.logit.weights, scale);
            axpy(&mut logit_b_grad, &grads.logit.bias, scale);
            axpy(&mut sigma_w_grad, &grads.sigma.weights, scale);
            axpy(&mut sigma_b_grad, &grads.sigma.bias, scale);
        }
        if !total_loss.is_finite() {
            return Err(Error::Training("non-finite batch loss".into()));
        }

        let grad_features = Tensor::from_parts(vec![n, feature_dim], grad_features);
        let trunk_grads = self.trunk.backward_batch(&grad_features, &trunk_cache)?;

        let mut tensors = vec![
            trunk_grads.conv1.kernels,
            trunk_grads.conv1.bias,
            trunk_grads.conv2.kernels,
            trunk_grads.conv2.bias,
        ];
        if let Some(bn) = trunk_grads.batch_norm {
            tensors.push(bn.gamma);
            tensors.push(bn.beta);
        }
        tensors.extend([logit_w_grad, logit_b_grad, sigma_w_grad, sigma_b_grad]);
        Ok((total_loss, ModelGrads { tensors }))
    }

    /// Scores one instance: inference-mode trunk, then either the Monte
    /// Carlo mean softmax (bayesian) or the clean softmax (benchmark).
    pub fn predict(
        &self,
        input: &Tensor,
        mc_samples: usize,
        eval_rng: &mut RngStream,
        variant: Variant,
    ) -> Result<Prediction> {
        let feature = self.trunk.forward_infer_one(input)?;
        match variant {
            Variant::Bayesian => self.head.predict(&feature, mc_samples, eval_rng),
            Variant::Benchmark => self.head.predict_clean(&feature),
        }
    }
}

fn axpy(acc: &mut Tensor, delta: &Tensor, scale: f64) {
    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
        *a += d * scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            in_channels: 5,
            time_steps: 8,
            conv_filters: 4,
            kernel_width: 3,
            dropout_rate: 0.5,
            padding: Padding::Same,
            pool: PoolKind::Max,
            batch_norm: true,
            n_classes: 2,
            per_class_sigma: false,
        }
    }

    #[test]
    fn param_names_align_with_tensors() {
        let mut rng = RngStream::from_seed(1);
        let model = FullModel::init(&tiny_config(), &mut rng).unwrap();
        assert_eq!(model.param_names().len(), model.params().len());
    }

    #[test]
    fn batch_loss_is_finite_and_grads_are_shaped() {
        let mut rng = RngStream::from_seed(2);
        let mut model = FullModel::init(&tiny_config(), &mut rng).unwrap();
        let inputs: Vec<Tensor> = (0..4)
            .map(|_| sample_standard_normal(&mut rng, &[5, 8]))
            .collect();
        let labels = vec![0usize, 1, 0, 1];
        let mut d_rng = RngStream::from_seed(3);
        let mut m_rng = RngStream::from_seed(4);
        let noise = model.sample_batch_noise(4, 8, &mut d_rng, &mut m_rng);
        let (loss, grads) = model
            .batch_loss_and_grads(
                &inputs,
                &labels,
                &noise,
                LossWeights::default(),
                Variant::Bayesian,
                None,
            )
            .unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        let shapes: Vec<&[usize]> = model.params().iter().map(|t| t.shape()).collect();
        for (g, s) in grads.tensors.iter().zip(shapes) {
            assert_eq!(g.shape(), s);
        }
    }

    #[test]
    fn benchmark_variant_ignores_sigma_head() {
        let mut rng = RngStream::from_seed(5);
        let mut model = FullModel::init(&tiny_config(), &mut rng).unwrap();
        let inputs: Vec<Tensor> = (0..3)
            .map(|_| sample_standard_normal(&mut rng, &[5, 8]))
            .collect();
        let labels = vec![1usize, 0, 1];
        let mut d_rng = RngStream::from_seed(6);
        let mut m_rng = RngStream::from_seed(7);
        let noise = model.sample_batch_noise(3, 8, &mut d_rng, &mut m_rng);
        let (_, grads) = model
            .batch_loss_and_grads(
                &inputs,
                &labels,
                &noise,
                LossWeights::default(),
                Variant::Benchmark,
                None,
            )
            .unwrap();
        let names = model.param_names();
        for (name, g) in names.iter().zip(&grads.tensors) {
            if name.starts_with("head.sigma") {
                assert!(g.data().iter().all(|&v| v == 0.0), "{name} has gradient");
            }
        }
    }
}
