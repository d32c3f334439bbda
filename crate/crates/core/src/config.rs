//! Run configuration: one TOML file mirroring every knob, overridable by
//! CLI flags (flags win). Unknown keys are rejected. All randomness in a
//! run derives from the single `seed` through named sub-streams, so
//! toggling one analysis never perturbs another.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::layers::{Padding, PoolKind};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every stream (generation, split, init, dropout, Monte
    /// Carlo noise, evaluation noise, injection) derives from it.
    pub seed: u64,
    /// Worker threads for parallel sections; 0 means all available
    /// cores. Results are identical for any thread count.
    pub threads: usize,
    /// Output directory for generated files, checkpoints, and reports.
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            threads: 0,
            output_dir: PathBuf::from("runs"),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Synthetic corpus size.
    pub patients: usize,
    /// Feature schema file; empty means the embedded 17-feature
    /// reference schema.
    pub schema: PathBuf,
    /// Events/labels files; relative paths resolve against `output_dir`.
    pub events: PathBuf,
    pub labels: PathBuf,
    /// Cache encoded matrices next to the checkpoints and reuse them on
    /// reruns with the same config.
    pub cache_matrices: bool,
    /// Train/validation/test fractions.
    pub split_fractions: (f64, f64, f64),
    #[serde(rename = "generator")]
    pub gen: GenConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            patients: 8000,
            schema: PathBuf::new(),
            events: PathBuf::from("events.csv"),
            labels: PathBuf::from("labels.csv"),
            cache_matrices: false,
            split_fractions: (0.7, 0.15, 0.15),
            gen: GenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub conv_filters: usize,
    pub kernel_width: usize,
    pub dropout_rate: f64,
    /// Conv padding along time: "same" or "valid".
    pub padding: Padding,
    /// Temporal pooling over the full axis: "max" or "mean".
    pub pooling: PoolKind,
    /// Feature-vector normalization: "batch" or "none".
    pub normalization: Normalization,
    /// One noise scale per class instead of a single isotropic σ.
    pub per_class_sigma: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            conv_filters: 50,
            kernel_width: 3,
            dropout_rate: 0.5,
            padding: Padding::Same,
            pooling: PoolKind::Max,
            normalization: Normalization::Batch,
            per_class_sigma: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Batch,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub mc_samples: usize,
    pub bayes_loss_weight: f64,
    pub ce_loss_weight: f64,
    pub class_weighting: bool,
    /// Ensemble size per variant.
    pub ensemble: usize,
    /// Which variants to train: "bayesian", "benchmark", or "both".
    pub variant: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            mc_samples: t.mc_samples,
            bayes_loss_weight: t.bayes_loss_weight,
            ce_loss_weight: t.ce_loss_weight,
            class_weighting: t.class_weighting,
            ensemble: 5,
            variant: "both".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Retention levels for the noise sweep, highest first.
    pub retentions: Vec<f64>,
    /// Baseline retention for the 16-cell grid analysis.
    pub grid_baseline_retention: f64,
    /// Analysis toggles for the eval command.
    pub median_split: bool,
    pub write_roc_points: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            retentions: vec![0.9, 0.7, 0.5, 0.3, 0.1],
            grid_baseline_retention: 0.5,
            median_split: true,
            write_roc_points: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.data.patients == 0 {
            return Err(Error::Config("data.patients must be ≥ 1".into()));
        }
        if self.train.ensemble == 0 {
            return Err(Error::Config("train.ensemble must be ≥ 1".into()));
        }
        match self.train.variant.as_str() {
            "both" | "bayesian" | "benchmark" => {}
            other => {
                return Err(Error::Config(format!(
                    "train.variant must be bayesian, benchmark, or both; got {other:?}"
                )))
            }
        }
        if self.eval.retentions.is_empty()
            || self
                .eval
                .retentions
                .iter()
                .any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(Error::Config(
                "eval.retentions must be a non-empty list inside [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.eval.grid_baseline_retention) {
            return Err(Error::Config(
                "eval.grid_baseline_retention must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.model.dropout_rate) {
            return Err(Error::Config("model.dropout_rate must lie in [0, 1)".into()));
        }
        if self.model.kernel_width.is_multiple_of(2) || self.model.conv_filters == 0 {
            return Err(Error::Config(
                "model.kernel_width must be odd and conv_filters ≥ 1".into(),
            ));
        }
        let (a, b, c) = self.data.split_fractions;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "data.split_fractions must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }

    /// Canonical TOML of the resolved config.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML, embedded in every output file.
    /// The thread count is excluded: it is an execution detail that
    /// cannot change any result.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.threads = 0;
        let mut hasher = Sha256::new();
        hasher.update(canonical.canonical_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn events_path(&self) -> PathBuf {
        resolve(&self.output_dir, &self.data.events)
    }

    pub fn labels_path(&self) -> PathBuf {
        resolve(&self.output_dir, &self.data.labels)
    }

    pub fn fitted_schema_path(&self) -> PathBuf {
        self.output_dir.join("schema_fitted.toml")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.output_dir.join("checkpoints")
    }

    pub fn checkpoint_path(&self, variant: crate::model::Variant, member: usize) -> PathBuf {
        let tag = match variant {
            crate::model::Variant::Bayesian => "bayesian",
            crate::model::Variant::Benchmark => "benchmark",
        };
        self.checkpoint_dir().join(format!("{tag}_{member}.ckpt"))
    }

    /// Loads the schema named by the config, or the embedded reference
    /// schema when the path is empty.
    pub fn load_schema(&self) -> Result<crate::data::Schema> {
        if self.data.schema.as_os_str().is_empty() {
            Ok(crate::data::Schema::reference())
        } else {
            crate::data::Schema::load(&self.data.schema)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            mc_samples: self.train.mc_samples,
            bayes_loss_weight: self.train.bayes_loss_weight,
            ce_loss_weight: self.train.ce_loss_weight,
            class_weighting: self.train.class_weighting,
            seed: self.seed,
        }
    }

    /// Architecture description for the given input channel count.
    pub fn model_config(&self, in_channels: usize) -> ModelConfig {
        ModelConfig {
            in_channels,
            time_steps: crate::data::WINDOW_HOURS,
            conv_filters: self.model.conv_filters,
            kernel_width: self.model.kernel_width,
            dropout_rate: self.model.dropout_rate,
            padding: self.model.padding,
            pool: self.model.pooling,
            batch_norm: self.model.normalization == Normalization::Batch,
            n_classes: 2,
            per_class_sigma: self.model.per_class_sigma,
        }
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_hash_is_stable() {
        let config = RunConfig::default();
        let text = config.canonical_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
        assert_eq!(config.hash(), back.hash());
        assert_eq!(config.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("not_a_key = 5").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("not_a_key"), "{msg}");
        assert!(toml::from_str::<RunConfig>("[train]\nbogus = 1").is_err());
    }

    #[test]
    fn flag_sensitive_fields_change_the_hash() {
        let base = RunConfig::default();
        let mut other = base.clone();
        other.seed = 43;
        assert_ne!(base.hash(), other.hash());
    }

    #[test]
    fn relative_paths_resolve_against_output_dir() {
        let config = RunConfig::default();
        assert_eq!(config.events_path(), PathBuf::from("runs/events.csv"));
        let mut abs = config.clone();
        abs.data.events = PathBuf::from("/tmp/e.csv");
        assert_eq!(abs.events_path(), PathBuf::from("/tmp/e.csv"));
    }

    #[test]
    fn bad_variant_is_rejected() {
        let mut config = RunConfig::default();
        config.train.variant = "quantum".into();
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }
}
