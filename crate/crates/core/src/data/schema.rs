//! Feature schema: names, kinds, categorical levels, imputation
//! defaults, normalization statistics, and synthesis parameters.
//!
//! Schemas live in TOML files (see `schema/reference_17.toml`, embedded
//! as the default). The channel ledger is: for each feature in schema
//! order, its encoded value channels (1 for continuous, one per level
//! for categorical) immediately followed by that feature's mask channel.
//! The 17-feature reference schema encodes to 59 value channels + 17
//! masks = 76 total.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// The reference schema shipped with the crate: 17 clinical features
/// (12 continuous, 5 categorical) totalling 76 encoded channels.
pub const REFERENCE_SCHEMA_TOML: &str = include_str!("../../schema/reference_17.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

/// Per-feature synthesis parameters for the generator. For continuous
/// features the trajectory is `mean + sd·(risk_shift·r + ar)` with a
/// unit-variance AR(1) component; for categorical features the same
/// latent severity is squashed onto the level ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "default_sd")]
    pub sd: f64,
    /// How strongly the patient's latent risk shifts this feature, in
    /// units of its own spread. Sign encodes direction.
    pub risk_shift: f64,
    /// Per-hour probability that the feature is observed.
    pub obs_prob: f64,
    /// AR(1) coefficient of the hour-to-hour trajectory noise.
    #[serde(default = "default_ar")]
    pub ar_coeff: f64,
}

fn default_sd() -> f64 {
    1.0
}

fn default_ar() -> f64 {
    0.85
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    /// Categorical levels, ordered benign → severe. Empty for continuous.
    #[serde(default)]
    pub levels: Vec<String>,
    /// Imputation default for bins before the first observation: a level
    /// name for categorical features, a number for continuous ones.
    pub normal_value: toml::Value,
    /// (mean, std) fitted on the training split; absent until fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthParams>,
}

impl Feature {
    /// Number of encoded value channels (excluding the mask).
    pub fn value_width(&self) -> usize {
        match self.kind {
            FeatureKind::Continuous => 1,
            FeatureKind::Categorical => self.levels.len(),
        }
    }

    pub fn normal_number(&self) -> Result<f64> {
        match &self.normal_value {
            toml::Value::Float(v) => Ok(*v),
            toml::Value::Integer(v) => Ok(*v as f64),
            other => Err(Error::Schema(format!(
                "feature {:?}: continuous normal value must be numeric, got {other}",
                self.name
            ))),
        }
    }

    pub fn normal_level(&self) -> Result<usize> {
        let name = match &self.normal_value {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        self.level_index(&name)
    }

    pub fn level_index(&self, level: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "feature {:?} has no level {level:?}",
                    self.name
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(rename = "feature")]
    pub features: Vec<Feature>,
}

impl Schema {
    /// The embedded 17-feature reference schema.
    pub fn reference() -> Schema {
        Schema::from_toml(REFERENCE_SCHEMA_TOML).expect("embedded schema is valid")
    }

    pub fn from_toml(text: &str) -> Result<Schema> {
        let schema: Schema =
            toml::from_str(text).map_err(|e| Error::Schema(format!("schema parse: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        Schema::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string(self).map_err(|e| Error::Schema(format!("schema serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema lists no features".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.features {
            if f.name.is_empty() || f.name.contains(',') || f.name.contains('\n') {
                return Err(Error::Schema(format!(
                    "feature name {:?} is empty or contains a delimiter",
                    f.name
                )));
            }
            if !seen.insert(&f.name) {
                return Err(Error::Schema(format!("duplicate feature {:?}", f.name)));
            }
            match f.kind {
                FeatureKind::Continuous => {
                    if !f.levels.is_empty() {
                        return Err(Error::Schema(format!(
                            "continuous feature {:?} must not list levels",
                            f.name
                        )));
                    }
                    let v = f.normal_number()?;
                    if !v.is_finite() {
                        return Err(Error::Schema(format!(
                            "feature {:?}: non-finite normal value",
                            f.name
                        )));
                    }
                    if let Some((_, std)) = f.normalization {
                        if std <= 0.0 {
                            return Err(Error::Schema(format!(
                                "feature {:?}: non-positive normalization std",
                                f.name
                            )));
                        }
                    }
                }
                FeatureKind::Categorical => {
                    if f.levels.len() < 2 {
                        return Err(Error::Schema(format!(
                            "categorical feature {:?} needs at least two levels",
                            f.name
                        )));
                    }
                    let mut level_seen = std::collections::HashSet::new();
                    for l in &f.levels {
                        if l.contains(',') || l.contains('\n') || !level_seen.insert(l) {
                            return Err(Error::Schema(format!(
                                "feature {:?}: invalid or duplicate level {l:?}",
                                f.name
                            )));
                        }
                    }
                    f.normal_level()?;
                }
            }
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown feature {name:?}")))
    }

    /// Encoded value channels across all features (masks excluded).
    pub fn value_channels(&self) -> usize {
        self.features.iter().map(|f| f.value_width()).sum()
    }

    /// Total encoded channels: value channels plus one mask per feature.
    pub fn total_channels(&self) -> usize {
        self.value_channels() + self.features.len()
    }

    /// True once every continuous feature carries fitted normalization
    /// statistics.
    pub fn is_fitted(&self) -> bool {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Continuous)
            .all(|f| f.normalization.is_some())
    }
}
