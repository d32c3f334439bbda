//! Heteroscedastic uncertainty head.
//!
//! On top of the trunk's feature vector `x`, two dense layers produce
//! clean class logits `z = Wx + b` and a per-instance noise scale
//! `σ = exp(s/2)` (the dense output `s` is read as log σ², which keeps
//! the optimization unconstrained and σ strictly positive). Corrupted
//! logits are `ẑ_t = z + σ·ε_t` with fresh standard-normal `ε_t`, and the
//! attenuated loss is the negative log of the Monte Carlo average of the
//! true-class softmax over those draws:
//!
//! ```text
//! loss = −log[ (1/T) Σ_t softmax(z + σ·ε_t)[label] ]
//!      = log T − LSE_t( ẑ_{t,label} − LSE_c ẑ_{t,c} )
//! ```
//!
//! Gradients flow into both heads through the reparameterized `σ·ε`
//! term with `ε` fixed per backward pass. σ² is the reported aleatoric
//! variance.
//!
//! The head starts homoscedastic: the σ layer is zero-initialized, so
//! every instance begins at σ = 1 and the noise scale differentiates
//! during training.

use crate::error::{Error, Result};
use crate::layers::{softmax, Dense, DenseGrads};
use crate::rng::RngStream;
use crate::tensor::{log_sum_exp, sample_standard_normal, Tensor};

/// Dense heads over the feature vector: class logits and log σ².
/// `sigma` has one output row by default (isotropic noise, matching the
/// σ²·I corruption), or one per class when configured.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesHead {
    pub logit: Dense,
    pub sigma: Dense,
}

/// Per-instance model output: class probabilities, the learned noise
/// variance σ², and the Monte Carlo sample count used.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub aleatoric_variance: f64,
    pub mc_samples: usize,
}

/// Gradients of a head loss, including the gradient flowing back into
/// the feature vector.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub logit: DenseGrads,
    pub sigma: DenseGrads,
    pub input: Tensor,
}

/// Loss mixing weights: `total = bayes · attenuated + ce · standard`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub bayes: f64,
    pub ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { bayes: 0.2, ce: 1.0 }
    }
}

impl BayesHead {
    pub fn init(
        feature_dim: usize,
        n_classes: usize,
        per_class_sigma: bool,
        rng: &mut RngStream,
    ) -> Self {
        let sigma_rows = if per_class_sigma { n_classes } else { 1 };
        BayesHead {
            logit: Dense::init(n_classes, feature_dim, rng),
            sigma: Dense {
                weights: Tensor::zeros(&[sigma_rows, feature_dim]),
                bias: Tensor::zeros(&[sigma_rows]),
            },
        }
    }

    pub fn n_classes(&self) -> usize {
        self.logit.out_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.logit.in_dim()
    }

    pub fn per_class_sigma(&self) -> bool {
        self.sigma.out_dim() > 1
    }

    /// Clean logits `Wx + b`.
    pub fn clean_logits(&self, features: &Tensor) -> Result<Tensor> {
        Ok(self.logit.forward(features)?.0)
    }

    /// Per-class noise scales. The isotropic head repeats its single σ
    /// across classes.
    fn sigmas(&self, features: &Tensor) -> Result<Vec<f64>> {
        let (log_var, _) = self.sigma.forward(features)?;
        let sigmas: Vec<f64> = log_var.data().iter().map(|s| (s / 2.0).exp()).collect();
        if sigmas.len() == 1 {
            Ok(vec![sigmas[0]; self.n_classes()])
        } else {
            Ok(sigmas)
        }
    }

    /// The instance noise scale σ (strictly positive). For the per-class
    /// head this is the root-mean-square of the per-class scales.
    pub fn sigma_of(&self, features: &Tensor) -> Result<f64> {
        let sigmas = self.sigmas(features)?;
        if self.per_class_sigma() {
            let mean_var =
                sigmas.iter().map(|s| s * s).sum::<f64>() / sigmas.len() as f64;
            Ok(mean_var.sqrt())
        } else {
            Ok(sigmas[0])
        }
    }

    /// Draws `T` corrupted logit rows `z + σ·ε_t` with fresh i.i.d.
    /// standard-normal noise per row and class.
    pub fn mc_corrupt_logits(
        &self,
        features: &Tensor,
        mc_samples: usize,
        rng: &mut RngStream,
    ) -> Result<Tensor> {
        let eps = sample_standard_normal(rng, &[mc_samples, self.n_classes()]);
        self.mc_corrupt_logits_with_eps(features, &eps)
    }

    /// Corrupted logits with caller-provided noise (frozen-noise replay).
    pub fn mc_corrupt_logits_with_eps(&self, features: &Tensor, eps: &Tensor) -> Result<Tensor> {
        let c = self.n_classes();
        let shape = eps.shape();
        if shape.len() != 2 || shape[1] != c {
            return Err(Error::Dimension(format!(
                "noise shape {shape:?} does not match [T × {c}]"
            )));
        }
        let mc_samples = shape[0];
        if mc_samples == 0 {
            return Err(Error::Domain("Monte Carlo sample count must be ≥ 1".into()));
        }
        let z = self.clean_logits(features)?;
        let sigmas = self.sigmas(features)?;
        let mut out = vec![0.0; mc_samples * c];
        for t in 0..mc_samples {
            for j in 0..c {
                out[t * c + j] = z.data()[j] + sigmas[j] * eps.at2(t, j);
            }
        }
        Ok(Tensor::from_parts(vec![mc_samples, c], out))
    }

    /// Inference: Monte Carlo mean of the softmax over corrupted draws,
    /// plus the learned variance. Deterministic given the stream.
    pub fn predict(
        &self,
        features: &Tensor,
        mc_samples: usize,
        rng: &mut RngStream,
    ) -> Result<Prediction> {
        if mc_samples == 0 {
            return Err(Error::Domain("Monte Carlo sample count must be ≥ 1".into()));
        }
        let corrupted = self.mc_corrupt_logits(features, mc_samples, rng)?;
        let c = self.n_classes();
        let mut probs = vec![0.0; c];
        for t in 0..mc_samples {
            let p = softmax(corrupted.row(t));
            for (acc, v) in probs.iter_mut().zip(&p) {
                *acc += v;
            }
        }
        probs.iter_mut().for_each(|v| *v /= mc_samples as f64);
        let sigma = self.sigma_of(features)?;
        let variance = sigma * sigma;
        if !variance.is_finite() || !probs.iter().all(|p| p.is_finite()) {
            return Err(Error::Numeric(
                "prediction produced a non-finite probability or variance".into(),
            ));
        }
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        Ok(Prediction {
            probs,
            aleatoric_variance: variance,
            mc_samples,
        })
    }

    /// Deterministic prediction from the clean logits only (the σ-free
    /// benchmark's output path).
    pub fn predict_clean(&self, features: &Tensor) -> Result<Prediction> {
        let z = self.clean_logits(features)?;
        let sigma = self.sigma_of(features)?;
        Ok(Prediction {
            probs: softmax(z.data()),
            aleatoric_variance: sigma * sigma,
            mc_samples: 1,
        })
    }
}

/// Negative log of the Monte Carlo–averaged true-class softmax over
/// corrupted logit rows, computed in log space:
/// `log T − LSE_t(ẑ_{t,label} − LSE_c ẑ_{t,c})`.
pub fn bayes_ce_loss(corrupted: &Tensor, label: usize) -> Result<f64> {
    let shape = corrupted.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "corrupted logits must be [T × C], got {shape:?}"
        )));
    }
    let (mc_samples, c) = (shape[0], shape[1]);
    if mc_samples == 0 {
        return Err(Error::Domain("Monte Carlo sample count must be ≥ 1".into()));
    }
    if label >= c {
        return Err(Error::Domain(format!(
            "label {label} out of range for {c} classes"
        )));
    }
    let mut log_probs = Vec::with_capacity(mc_samples);
    for t in 0..mc_samples {
        let row = corrupted.row(t);
        log_probs.push(row[label] - log_sum_exp(row)?);
    }
    Ok((mc_samples as f64).ln() - log_sum_exp(&log_probs)?)
}

/// Standard cross-entropy of the clean logits: `−log softmax(z)[label]`.
pub fn standard_ce_loss(clean_logits: &Tensor, label: usize) -> Result<f64> {
    let row = clean_logits.data();
    if label >= row.len() {
        return Err(Error::Domain(format!(
            "label {label} out of range for {} classes",
            row.len()
        )));
    }
    Ok(log_sum_exp(row)? - row[label])
}

/// Weighted sum of the attenuated Monte Carlo loss (fresh noise from
/// `rng`) and the standard cross-entropy on the uncorrupted logits.
pub fn combined_loss(
    head: &BayesHead,
    features: &Tensor,
    label: usize,
    mc_samples: usize,
    rng: &mut RngStream,
    weights: LossWeights,
) -> Result<f64> {
    let eps = sample_standard_normal(rng, &[mc_samples, head.n_classes()]);
    combined_loss_with_eps(head, features, label, &eps, weights)
}

/// Combined loss with caller-provided noise.
pub fn combined_loss_with_eps(
    head: &BayesHead,
    features: &Tensor,
    label: usize,
    eps: &Tensor,
    weights: LossWeights,
) -> Result<f64> {
    if weights.bayes < 0.0 || weights.ce < 0.0 {
        return Err(Error::Domain("loss weights must be non-negative".into()));
    }
    let corrupted = head.mc_corrupt_logits_with_eps(features, eps)?;
    let bayes = bayes_ce_loss(&corrupted, label)?;
    let ce = standard_ce_loss(&head.clean_logits(features)?, label)?;
    Ok(weights.bayes * bayes + weights.ce * ce)
}

/// Combined loss plus exact gradients w.r.t. both heads and the feature
/// vector, with the noise draws held fixed (reparameterization). When
/// `train_sigma` is false the σ head is detached: the attenuated term is
/// skipped entirely and the σ gradients are zero — the benchmark's loss.
pub fn combined_loss_grads(
    head: &BayesHead,
    features: &Tensor,
    label: usize,
    eps: &Tensor,
    weights: LossWeights,
    train_sigma: bool,
) -> Result<(f64, HeadGrads)> {
    let c = head.n_classes();
    if label >= c {
        return Err(Error::Domain(format!(
            "label {label} out of range for {c} classes"
        )));
    }
    let (z, logit_cache) = head.logit.forward(features)?;
    let (log_var, sigma_cache) = head.sigma.forward(features)?;
    let sigma_rows = head.sigma.out_dim();
    let sigmas_raw: Vec<f64> = log_var.data().iter().map(|s| (s / 2.0).exp()).collect();
    let sigmas: Vec<f64> = if sigma_rows == 1 {
        vec![sigmas_raw[0]; c]
    } else {
        sigmas_raw.clone()
    };

    // Standard CE on clean logits: grad_z = p − onehot(label).
    let p_clean = softmax(z.data());
    let ce = -p_clean[label].ln();
    let mut grad_z: Vec<f64> = p_clean
        .iter()
        .enumerate()
        .map(|(j, p)| weights.ce * (p - if j == label { 1.0 } else { 0.0 }))
        .collect();
    let mut grad_log_var = vec![0.0; sigma_rows];
    let mut total = weights.ce * ce;

    if train_sigma && weights.bayes > 0.0 {
        let shape = eps.shape();
        if shape.len() != 2 || shape[1] != c {
            return Err(Error::Dimension(format!(
                "noise shape {shape:?} does not match [T × {c}]"
            )));
        }
        let mc_samples = shape[0];
        if mc_samples == 0 {
            return Err(Error::Domain("Monte Carlo sample count must be ≥ 1".into()));
        }
        // Per-draw softmax and true-class log-prob.
        let mut per_draw_probs = vec![0.0; mc_samples * c];
        let mut log_probs = Vec::with_capacity(mc_samples);
        let mut row = vec![0.0; c];
        for t in 0..mc_samples {
            for j in 0..c {
                row[j] = z.data()[j] + sigmas[j] * eps.at2(t, j);
            }
            let lse = log_sum_exp(&row)?;
            log_probs.push(row[label] - lse);
            for j in 0..c {
                per_draw_probs[t * c + j] = (row[j] - lse).exp();
            }
        }
        let bayes = (mc_samples as f64).ln() - log_sum_exp(&log_probs)?;
        total += weights.bayes * bayes;

        // Draw weights w_t = softmax over t of the true-class log-probs;
        // then dL/dẑ_{t,j} = w_t (p_{t,j} − δ_{j,label}).
        let draw_weights = softmax(&log_probs);
        let mut grad_sigma_per_class = vec![0.0; c];
        for t in 0..mc_samples {
            let w = weights.bayes * draw_weights[t];
            for j in 0..c {
                let g = w * (per_draw_probs[t * c + j] - if j == label { 1.0 } else { 0.0 });
                grad_z[j] += g;
                grad_sigma_per_class[j] += g * eps.at2(t, j);
            }
        }
        // dσ/d(log σ²) = σ/2.
        if sigma_rows == 1 {
            grad_log_var[0] =
                grad_sigma_per_class.iter().sum::<f64>() * sigmas[0] / 2.0;
        } else {
            for j in 0..c {
                grad_log_var[j] = grad_sigma_per_class[j] * sigmas[j] / 2.0;
            }
        }
    }

    let grad_z = Tensor::from_parts(vec![c], grad_z);
    let (grad_in_logit, logit_grads) = head.logit.backward(&grad_z, &logit_cache)?;
    let grad_s = Tensor::from_parts(vec![sigma_rows], grad_log_var);
    let (grad_in_sigma, sigma_grads) = head.sigma.backward(&grad_s, &sigma_cache)?;
    let grad_input = grad_in_logit.add(&grad_in_sigma)?;
    Ok((
        total,
        HeadGrads {
            logit: logit_grads,
            sigma: sigma_grads,
            input: grad_input,
        },
    ))
}
