//! Adam optimization of the full network under the combined loss, with
//! validation-AUC model selection, early stopping, ensembles, and binary
//! checkpoints.

use serde::{Deserialize, Serialize};

use crate::bayes::{LossWeights, Prediction};
use crate::container::Container;
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::eval::{auc, ScoredInstance};
use crate::model::{FullModel, ModelConfig, Variant};
use crate::rng::{streams, RngStream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-AUC improvement before stopping.
    pub patience: usize,
    /// Monte Carlo draws per instance for the attenuated loss and for
    /// bayesian-variant predictions.
    pub mc_samples: usize,
    pub bayes_loss_weight: f64,
    pub ce_loss_weight: f64,
    /// Reweights the loss by inverse class frequency. Off by default to
    /// match plain cross-entropy on the imbalanced cohort.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            mc_samples: 100,
            bayes_loss_weight: 0.2,
            ce_loss_weight: 1.0,
            class_weighting: false,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.mc_samples < 1 {
            return Err(Error::Config("mc_samples must be ≥ 1".into()));
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return Err(Error::Config("batch size and epochs must be ≥ 1".into()));
        }
        if self.bayes_loss_weight < 0.0 || self.ce_loss_weight < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            bayes: self.bayes_loss_weight,
            ce: self.ce_loss_weight,
        }
    }

    fn adam_hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

// ---------------------------------------------------------------- adam

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First/second moment estimates, aligned with the model's parameter
/// order, plus the step counter for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new_for(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction:
/// `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`, `θ ← θ − lr·m̂/(√v̂ + ε)`.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), (m, v)) in params
        .iter()
        .zip(grads)
        .zip(state.m.iter().zip(&state.v))
    {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::Dimension(format!(
                "adam: parameter shape {:?} does not match gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let m_correction = 1.0 - hyper.beta1.powi(t);
    let v_correction = 1.0 - hyper.beta2.powi(t);
    for (idx, param) in params.iter_mut().enumerate() {
        let g = grads[idx].data();
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        for ((p, &g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / m_correction;
            let v_hat = *v / v_correction;
            *p -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

// ------------------------------------------------------------ datasets

/// Encoded instances ready for the network.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<bool>,
    pub ids: Vec<u64>,
}

impl LabeledSet {
    pub fn from_matrices(matrices: &[FeatureMatrix]) -> Self {
        LabeledSet {
            inputs: matrices.iter().map(|m| m.to_input()).collect(),
            labels: matrices.iter().map(|m| m.label).collect(),
            ids: matrices.iter().map(|m| m.patient_id).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

// ---------------------------------------------------------- checkpoint

/// Saved state of one trained member: best-validation model weights,
/// optimizer moments, configs, and the training streams' states at the
/// snapshot.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FullModel,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub variant: Variant,
    pub epoch: usize,
    pub val_auc: f64,
    pub member_seed: u64,
    pub adam: AdamState,
    pub rng_states: Vec<RngStateRecord>,
    /// Hash of the run configuration that produced this member; set by
    /// the CLI before saving.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngStateRecord {
    pub name: String,
    pub seed: String,
    pub state: [String; 4],
}

impl RngStateRecord {
    pub fn of(name: &str, stream: &RngStream) -> Self {
        let s = stream.state();
        RngStateRecord {
            name: name.to_string(),
            seed: format!("{:016x}", stream.seed()),
            state: [
                format!("{:016x}", s[0]),
                format!("{:016x}", s[1]),
                format!("{:016x}", s[2]),
                format!("{:016x}", s[3]),
            ],
        }
    }

    pub fn to_stream(&self) -> Result<RngStream> {
        let parse = |s: &str| {
            u64::from_str_radix(s, 16)
                .map_err(|_| Error::Data(format!("bad RNG state {s:?} in checkpoint")))
        };
        Ok(RngStream::from_parts(
            parse(&self.seed)?,
            [
                parse(&self.state[0])?,
                parse(&self.state[1])?,
                parse(&self.state[2])?,
                parse(&self.state[3])?,
            ],
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    variant: Variant,
    epoch: usize,
    val_auc: f64,
    member_seed: u64,
    adam_step: u64,
    model_config: ModelConfig,
    train_config: TrainConfig,
    rng_states: Vec<RngStateRecord>,
    #[serde(default)]
    config_hash: String,
}

impl Checkpoint {
    /// Scores one encoded instance under this member's variant, with its
    /// configured Monte Carlo sample count.
    pub fn predict(&self, input: &Tensor, eval_rng: &mut RngStream) -> Result<Prediction> {
        self.model
            .predict(input, self.train_config.mc_samples, eval_rng, self.variant)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "checkpoint".into(),
            variant: self.variant,
            epoch: self.epoch,
            val_auc: self.val_auc,
            member_seed: self.member_seed,
            adam_step: self.adam.step,
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            rng_states: self.rng_states.clone(),
            config_hash: self.config_hash.clone(),
        };
        let mut container =
            Container::new(serde_json::to_string(&meta).expect("meta serializes"));
        let names = self.model.param_names();
        for (name, tensor) in names.iter().zip(self.model.params()) {
            container.push(name, tensor.clone());
        }
        for (name, tensor) in self.model.buffers() {
            container.push(name, tensor.clone());
        }
        for ((name, m), v) in names.iter().zip(&self.adam.m).zip(&self.adam.v) {
            container.push(&format!("adam.m.{name}"), m.clone());
            container.push(&format!("adam.v.{name}"), v.clone());
        }
        container.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let container = Container::load(path)?;
        let meta: CheckpointMeta = serde_json::from_str(&container.meta)
            .map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))?;
        if meta.kind != "checkpoint" {
            return Err(Error::Data(format!(
                "expected a checkpoint, found {:?}",
                meta.kind
            )));
        }
        // Rebuild the architecture, then overwrite every tensor.
        let mut scratch = RngStream::from_seed(0);
        let mut model = FullModel::init(&meta.model_config, &mut scratch)?;
        let names = model.param_names();
        let mut adam = AdamState {
            m: Vec::with_capacity(names.len()),
            v: Vec::with_capacity(names.len()),
            step: meta.adam_step,
        };
        for name in &names {
            adam.m.push(load_tensor(&container, &format!("adam.m.{name}"))?);
            adam.v.push(load_tensor(&container, &format!("adam.v.{name}"))?);
        }
        for (name, param) in names.iter().zip(model.params_mut()) {
            *param = load_tensor(&container, name)?;
        }
        for (name, buffer) in model.buffers_mut() {
            *buffer = load_tensor(&container, name)?;
        }
        Ok(Checkpoint {
            model,
            model_config: meta.model_config,
            train_config: meta.train_config,
            variant: meta.variant,
            epoch: meta.epoch,
            val_auc: meta.val_auc,
            member_seed: meta.member_seed,
            adam,
            rng_states: meta.rng_states,
            config_hash: meta.config_hash,
        })
    }
}

fn load_tensor(container: &Container, name: &str) -> Result<Tensor> {
    Ok(container.get(name)?.clone())
}

// ------------------------------------------------------------ training

/// One line of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Trains one member to the best validation AUC. Deterministic given
/// `member_seed`; all randomness (init, shuffling, dropout, Monte Carlo
/// noise, validation noise) flows through named sub-streams of it.
pub fn train(
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    model_config: &ModelConfig,
    config: &TrainConfig,
    variant: Variant,
    member_seed: u64,
) -> Result<TrainOutcome> {
    train_with_progress(
        train_set,
        val_set,
        model_config,
        config,
        variant,
        member_seed,
        |_| {},
    )
}

/// [`train`] with a per-epoch callback for live logging.
pub fn train_with_progress(
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    model_config: &ModelConfig,
    config: &TrainConfig,
    variant: Variant,
    member_seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Domain("empty validation set".into()));
    }
    let root = RngStream::from_seed(member_seed);
    let mut init_rng = root.derive(streams::INIT);
    let mut model = FullModel::init(model_config, &mut init_rng)?;
    let mut adam = AdamState::new_for(&model.params());
    let hyper = config.adam_hyper();
    let weights = config.loss_weights();

    let class_weights = if config.class_weighting {
        let positives = train_set.labels.iter().filter(|&&l| l).count().max(1);
        let negatives = (train_set.len() - positives).max(1);
        let n = train_set.len() as f64;
        Some((n / (2.0 * negatives as f64), n / (2.0 * positives as f64)))
    } else {
        None
    };

    let mut best: Option<(FullModel, AdamState, usize, f64)> = None;
    let mut log = Vec::new();
    let mut epochs_since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        root.derive(streams::SHUFFLE).derive(epoch as u64).shuffle(&mut order);
        let mut dropout_rng = root.derive(streams::DROPOUT).derive(epoch as u64);
        let mut mc_rng = root.derive(streams::MC_NOISE).derive(epoch as u64);

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<Tensor> =
                batch.iter().map(|&i| train_set.inputs[i].clone()).collect();
            let labels: Vec<usize> =
                batch.iter().map(|&i| usize::from(train_set.labels[i])).collect();
            let instance_weights: Option<Vec<f64>> = class_weights.map(|(w_neg, w_pos)| {
                labels
                    .iter()
                    .map(|&l| if l == 1 { w_pos } else { w_neg })
                    .collect()
            });
            let noise = model.sample_batch_noise(
                batch.len(),
                config.mc_samples,
                &mut dropout_rng,
                &mut mc_rng,
            );
            let (loss, grads) = model
                .batch_loss_and_grads(
                    &inputs,
                    &labels,
                    &noise,
                    weights,
                    variant,
                    instance_weights.as_deref(),
                )
                .map_err(|e| {
                    Error::Training(format!(
                        "epoch {epoch}, batch {batch_idx}: {e}"
                    ))
                })?;
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut model.params_mut(), &grads.tensors, &mut adam, &hyper)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let val_auc = validation_auc(&model, val_set, config, variant, &root)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_auc,
        };
        on_epoch(&record);
        log.push(record);

        let improved = best.as_ref().is_none_or(|(_, _, _, b)| val_auc > *b);
        if improved {
            best = Some((model.clone(), adam.clone(), epoch, val_auc));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }

    let (best_model, best_adam, best_epoch, best_auc) = best.expect("at least one epoch ran");
    let rng_states = vec![
        RngStateRecord::of("init", &init_rng),
        RngStateRecord::of("root", &root),
    ];
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: best_model,
            model_config: model_config.clone(),
            train_config: config.clone(),
            variant,
            epoch: best_epoch,
            val_auc: best_auc,
            member_seed,
            adam: best_adam,
            rng_states,
            config_hash: String::new(),
        },
        log,
    })
}

/// Validation AUC under the member's variant, with per-instance noise
/// streams (parallel-safe, subset-stable).
fn validation_auc(
    model: &FullModel,
    val_set: &LabeledSet,
    config: &TrainConfig,
    variant: Variant,
    member_root: &RngStream,
) -> Result<f64> {
    use rayon::prelude::*;
    let eval_root = member_root.derive(streams::EVAL_NOISE);
    let scored: Vec<Result<ScoredInstance>> = (0..val_set.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = eval_root.derive(val_set.ids[i]);
            let pred = model.predict(&val_set.inputs[i], config.mc_samples, &mut rng, variant)?;
            Ok(ScoredInstance {
                instance_id: val_set.ids[i],
                label: val_set.labels[i],
                probability: pred.probs[1],
                aleatoric_variance: pred.aleatoric_variance,
            })
        })
        .collect();
    let scored: Result<Vec<ScoredInstance>> = scored.into_iter().collect();
    auc(&scored?).map_err(|e| Error::Training(format!("validation AUC: {e}")))
}

/// Trains `n_models` independent members with seeds derived from the
/// config seed. Member `i`'s seed is the `ENSEMBLE`-stream child `i`.
pub fn train_ensemble(
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    model_config: &ModelConfig,
    config: &TrainConfig,
    variant: Variant,
    n_models: usize,
) -> Result<Vec<TrainOutcome>> {
    if n_models == 0 {
        return Err(Error::Domain("ensemble needs at least one member".into()));
    }
    (0..n_models)
        .map(|i| {
            let member_seed = member_seed_for(config.seed, variant, i);
            train(train_set, val_set, model_config, config, variant, member_seed)
        })
        .collect()
}

/// Seed for ensemble member `i` of the given variant.
pub fn member_seed_for(config_seed: u64, variant: Variant, member: usize) -> u64 {
    let variant_label = match variant {
        Variant::Bayesian => 0,
        Variant::Benchmark => 1,
    };
    RngStream::from_seed(config_seed)
        .derive(streams::ENSEMBLE)
        .derive(variant_label)
        .derive(member as u64)
        .seed()
}
