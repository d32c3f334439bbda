//! Clinical time-series preprocessing: hourly binning with
//! last-observation reduction, forward-fill + normal-value imputation
//! with missingness masks, one-hot encoding, training-split
//! normalization, missingness injection, and the synthetic-EHR
//! generator standing in for restricted-access sources.

mod io;
mod schema;
mod synth;

pub use io::{read_provenance, read_records, write_events, write_labels};
pub use schema::{Feature, FeatureKind, Schema, SynthParams, REFERENCE_SCHEMA_TOML};
pub use synth::{generate_synthetic, generate_with_latents, GenConfig};

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};
use crate::tensor::Tensor;

/// Observation window length in hourly bins.
pub const WINDOW_HOURS: usize = 48;

/// One raw observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    /// Hours since admission, in `[0, 48)`.
    pub hour: f64,
    /// Index into the schema's feature list.
    pub feature: usize,
    pub value: EventValue,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventValue {
    Number(f64),
    /// Index into the feature's level list.
    Level(usize),
}

/// Raw timestamped observations for one patient, plus the in-hospital
/// mortality label.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: u64,
    pub events: Vec<Event>,
    pub label: bool,
}

/// Binned, imputed, encoded record: `values [value_channels × 48]` and
/// `masks [features × 48]`, where `mask[f][t] = 1` iff at least one real
/// observation of feature `f` fell in hour `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub patient_id: u64,
    pub label: bool,
    pub values: Tensor,
    pub masks: Tensor,
    /// Encoded value-channel count per feature, in schema order (needed
    /// to interleave values with masks).
    pub value_widths: Vec<usize>,
}

impl FeatureMatrix {
    /// Network input `[total_channels × 48]`: each feature's value
    /// channel(s) immediately followed by that feature's mask channel.
    pub fn to_input(&self) -> Tensor {
        let time = WINDOW_HOURS;
        let total: usize = self.value_widths.iter().map(|w| w + 1).sum();
        let mut out = vec![0.0; total * time];
        let mut value_ch = 0;
        let mut out_ch = 0;
        for (f, &width) in self.value_widths.iter().enumerate() {
            for w in 0..width {
                out[out_ch * time..(out_ch + 1) * time]
                    .copy_from_slice(self.values.row(value_ch + w));
                out_ch += 1;
            }
            out[out_ch * time..(out_ch + 1) * time].copy_from_slice(self.masks.row(f));
            out_ch += 1;
            value_ch += width;
        }
        Tensor::from_parts(vec![total, time], out)
    }
}

/// Split membership tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// A split's encoded instances plus provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub matrices: Vec<FeatureMatrix>,
    pub split: SplitTag,
    pub provenance: String,
}

// ------------------------------------------------------------- binning

/// Per-bin reduced observation of a single feature.
enum BinValue {
    Number(f64),
    Level(usize),
}

/// Bins one feature's events: per hourly bin, the last observation wins
/// (latest hour; ties by input order).
fn bin_feature(record: &PatientRecord, feature_idx: usize) -> Vec<Option<(f64, usize, BinValue)>> {
    let mut bins: Vec<Option<(f64, usize, BinValue)>> = (0..WINDOW_HOURS).map(|_| None).collect();
    for (seq, event) in record.events.iter().enumerate() {
        if event.feature != feature_idx {
            continue;
        }
        let bin = event.hour.floor() as usize;
        let candidate = match &event.value {
            EventValue::Number(v) => BinValue::Number(*v),
            EventValue::Level(l) => BinValue::Level(*l),
        };
        let replace = match &bins[bin] {
            None => true,
            Some((hour, old_seq, _)) => (event.hour, seq) >= (*hour, *old_seq),
        };
        if replace {
            bins[bin] = Some((event.hour, seq, candidate));
        }
    }
    bins
}

fn validate_record(record: &PatientRecord, schema: &Schema) -> Result<()> {
    for event in &record.events {
        let feature = schema.features.get(event.feature).ok_or_else(|| {
            Error::Schema(format!(
                "patient {}: feature index {} outside the schema",
                record.patient_id, event.feature
            ))
        })?;
        if !(0.0..WINDOW_HOURS as f64).contains(&event.hour) {
            return Err(Error::Data(format!(
                "patient {}: hour {} outside the {WINDOW_HOURS}-hour window",
                record.patient_id, event.hour
            )));
        }
        match (&event.value, feature.kind) {
            (EventValue::Number(v), FeatureKind::Continuous) => {
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "patient {}: non-finite value for {:?}",
                        record.patient_id, feature.name
                    )));
                }
            }
            (EventValue::Level(l), FeatureKind::Categorical) => {
                if *l >= feature.levels.len() {
                    return Err(Error::Schema(format!(
                        "patient {}: level index {l} outside {:?}",
                        record.patient_id, feature.name
                    )));
                }
            }
            _ => {
                return Err(Error::Data(format!(
                    "patient {}: value kind does not match feature {:?}",
                    record.patient_id, feature.name
                )));
            }
        }
    }
    Ok(())
}

/// Bins, imputes, encodes, and normalizes one record.
///
/// Per feature and hourly bin: the last observation in the bin wins;
/// missing bins take the most recent prior value (forward fill); bins
/// before any observation take the schema's normal value. Masks record
/// which bins hold real observations. Categorical features are one-hot
/// encoded; continuous features are standardized with the schema's
/// training-split statistics when fitted.
pub fn bin_and_impute(record: &PatientRecord, schema: &Schema) -> Result<FeatureMatrix> {
    validate_record(record, schema)?;
    let time = WINDOW_HOURS;
    let value_channels = schema.value_channels();
    let mut values = vec![0.0; value_channels * time];
    let mut masks = vec![0.0; schema.features.len() * time];
    let mut channel = 0usize;
    for (f, feature) in schema.features.iter().enumerate() {
        let bins = bin_feature(record, f);
        match feature.kind {
            FeatureKind::Continuous => {
                let (mean, std) = feature.normalization.unwrap_or((0.0, 1.0));
                let mut carry: Option<f64> = None;
                for (t, bin) in bins.iter().enumerate() {
                    let raw = match bin {
                        Some((_, _, BinValue::Number(v))) => {
                            masks[f * time + t] = 1.0;
                            carry = Some(*v);
                            *v
                        }
                        Some(_) => unreachable!("validated kind"),
                        None => carry.unwrap_or(feature.normal_number()?),
                    };
                    values[channel * time + t] = (raw - mean) / std;
                }
                channel += 1;
            }
            FeatureKind::Categorical => {
                let width = feature.levels.len();
                let normal = feature.normal_level()?;
                let mut carry: Option<usize> = None;
                for (t, bin) in bins.iter().enumerate() {
                    let level = match bin {
                        Some((_, _, BinValue::Level(l))) => {
                            masks[f * time + t] = 1.0;
                            carry = Some(*l);
                            *l
                        }
                        Some(_) => unreachable!("validated kind"),
                        None => carry.unwrap_or(normal),
                    };
                    values[(channel + level) * time + t] = 1.0;
                }
                channel += width;
            }
        }
    }
    Ok(FeatureMatrix {
        patient_id: record.patient_id,
        label: record.label,
        values: Tensor::from_parts(vec![value_channels, time], values),
        masks: Tensor::from_parts(vec![schema.features.len(), time], masks),
        value_widths: schema.features.iter().map(|f| f.value_width()).collect(),
    })
}

/// Fits per-feature normalization statistics (population mean/std of the
/// binned observed values) on the given records — the training split
/// only — and writes them into the schema.
pub fn fit_normalization(schema: &mut Schema, train_records: &[PatientRecord]) -> Result<()> {
    for record in train_records {
        validate_record(record, schema)?;
    }
    for f in 0..schema.features.len() {
        if schema.features[f].kind != FeatureKind::Continuous {
            continue;
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for record in train_records {
            for bin in bin_feature(record, f).iter().flatten() {
                if let (_, _, BinValue::Number(v)) = bin {
                    sum += v;
                    sum_sq += v * v;
                    count += 1;
                }
            }
        }
        let stats = if count == 0 {
            (0.0, 1.0)
        } else {
            let mean = sum / count as f64;
            let var = (sum_sq / count as f64 - mean * mean).max(0.0);
            let std = var.sqrt();
            (mean, if std < 1e-12 { 1.0 } else { std })
        };
        schema.features[f].normalization = Some(stats);
    }
    Ok(())
}

// ----------------------------------------------------------- injection

/// Independently drops each raw event with probability `1 − retention`,
/// before any binning or imputation. The stream is derived per patient
/// from `parent`, so thinning any subset of records reproduces exactly
/// what thinning the full set would have produced for those patients.
pub fn inject_missingness(
    record: &PatientRecord,
    retention: f64,
    parent: &RngStream,
) -> Result<PatientRecord> {
    if !(0.0..=1.0).contains(&retention) {
        return Err(Error::Domain(format!(
            "retention must be in [0, 1], got {retention}"
        )));
    }
    let mut rng = parent.derive(record.patient_id);
    let events: Vec<Event> = record
        .events
        .iter()
        .filter(|_| rng.bernoulli(retention))
        .cloned()
        .collect();
    Ok(PatientRecord {
        patient_id: record.patient_id,
        events,
        label: record.label,
    })
}

// --------------------------------------------------------------- split

/// Seed-deterministic shuffle split into train/val/test. Sizes follow
/// the largest-remainder rule: floor each share, then hand the leftover
/// records to the splits with the largest fractional parts (ties in
/// train, val, test order).
pub fn split(
    records: Vec<PatientRecord>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<PatientRecord>, Vec<PatientRecord>, Vec<PatientRecord>)> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "split fractions must be non-negative and sum to 1, got ({ft}, {fv}, {fe})"
        )));
    }
    let n = records.len();
    let shares = [ft, fv, fe];
    let mut sizes: Vec<usize> = shares.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut leftovers: Vec<(usize, f64)> = shares
        .iter()
        .enumerate()
        .map(|(i, f)| (i, f * n as f64 - sizes[i] as f64))
        .collect();
    // Largest fractional part first; stable for ties (split order).
    leftovers.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite"));
    for k in 0..(n - assigned) {
        sizes[leftovers[k % 3].0] += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::from_seed(seed).derive(streams::SPLIT);
    rng.shuffle(&mut order);

    let mut slots: Vec<Option<PatientRecord>> = records.into_iter().map(Some).collect();
    let mut take = |indices: &[usize]| -> Vec<PatientRecord> {
        indices
            .iter()
            .map(|&i| slots[i].take().expect("each index used once"))
            .collect()
    };
    let train = take(&order[..sizes[0]]);
    let val = take(&order[sizes[0]..sizes[0] + sizes[1]]);
    let test = take(&order[sizes[0] + sizes[1]..]);
    Ok((train, val, test))
}

// -------------------------------------------------------- matrix cache

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    kind: String,
    split: SplitTag,
    provenance: String,
    value_widths: Vec<usize>,
}

impl Dataset {
    /// Serializes the encoded split into the shared binary tensor
    /// container (same format as checkpoints).
    pub fn save_cache(&self, path: &std::path::Path) -> Result<()> {
        let n = self.matrices.len();
        let meta = CacheMeta {
            kind: "matrix-cache".into(),
            split: self.split,
            provenance: self.provenance.clone(),
            value_widths: self
                .matrices
                .first()
                .map(|m| m.value_widths.clone())
                .unwrap_or_default(),
        };
        let mut container = Container::new(
            serde_json::to_string(&meta).expect("meta serializes"),
        );
        let mut ids = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut values = Vec::new();
        let mut masks = Vec::new();
        let (vc, fc) = match self.matrices.first() {
            Some(m) => (m.values.shape()[0], m.masks.shape()[0]),
            None => (0, 0),
        };
        for m in &self.matrices {
            ids.push(m.patient_id as f64);
            labels.push(if m.label { 1.0 } else { 0.0 });
            values.extend_from_slice(m.values.data());
            masks.extend_from_slice(m.masks.data());
        }
        container.push("ids", Tensor::from_parts(vec![n], ids));
        container.push("labels", Tensor::from_parts(vec![n], labels));
        container.push("values", Tensor::from_parts(vec![n, vc, WINDOW_HOURS], values));
        container.push("masks", Tensor::from_parts(vec![n, fc, WINDOW_HOURS], masks));
        container.save(path)
    }

    pub fn load_cache(path: &std::path::Path) -> Result<Dataset> {
        let container = Container::load(path)?;
        let meta: CacheMeta = serde_json::from_str(&container.meta)
            .map_err(|e| Error::Data(format!("matrix cache metadata: {e}")))?;
        if meta.kind != "matrix-cache" {
            return Err(Error::Data(format!(
                "expected a matrix cache, found {:?}",
                meta.kind
            )));
        }
        let ids = container.get("ids")?;
        let labels = container.get("labels")?;
        let values = container.get("values")?;
        let masks = container.get("masks")?;
        let n = ids.len();
        let vc = values.shape()[1];
        let fc = masks.shape()[1];
        let mut matrices = Vec::with_capacity(n);
        for i in 0..n {
            let v = values.data()[i * vc * WINDOW_HOURS..(i + 1) * vc * WINDOW_HOURS].to_vec();
            let m = masks.data()[i * fc * WINDOW_HOURS..(i + 1) * fc * WINDOW_HOURS].to_vec();
            matrices.push(FeatureMatrix {
                patient_id: ids.data()[i] as u64,
                label: labels.data()[i] != 0.0,
                values: Tensor::from_parts(vec![vc, WINDOW_HOURS], v),
                masks: Tensor::from_parts(vec![fc, WINDOW_HOURS], m),
                value_widths: meta.value_widths.clone(),
            });
        }
        Ok(Dataset {
            matrices,
            split: meta.split,
            provenance: meta.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_schema() -> Schema {
        Schema::from_toml(
            r#"
[[feature]]
name = "hr"
kind = "continuous"
normal_value = 80.0

[[feature]]
name = "gcs"
kind = "categorical"
levels = ["a", "b", "c", "d"]
normal_value = "a"
"#,
        )
        .unwrap()
    }

    fn record(id: u64, events: Vec<Event>, label: bool) -> PatientRecord {
        PatientRecord {
            patient_id: id,
            events,
            label,
        }
    }

    #[test]
    fn single_observation_imputation_rule() {
        // Observed only at hour 3: hours 0–2 take the normal value with
        // mask 0, hour 3 the value with mask 1, hours 4–47 carry it with
        // mask 0.
        let schema = minimal_schema();
        let r = record(
            1,
            vec![Event {
                hour: 3.5,
                feature: 0,
                value: EventValue::Number(100.0),
            }],
            false,
        );
        let m = bin_and_impute(&r, &schema).unwrap();
        for t in 0..3 {
            assert_eq!(m.values.at2(0, t), 80.0);
            assert_eq!(m.masks.at2(0, t), 0.0);
        }
        assert_eq!(m.values.at2(0, 3), 100.0);
        assert_eq!(m.masks.at2(0, 3), 1.0);
        for t in 4..48 {
            assert_eq!(m.values.at2(0, t), 100.0);
            assert_eq!(m.masks.at2(0, t), 0.0);
        }
    }

    #[test]
    fn categorical_one_hot_encoding() {
        let schema = minimal_schema();
        let r = record(
            1,
            vec![Event {
                hour: 5.0,
                feature: 1,
                value: EventValue::Level(2),
            }],
            false,
        );
        let m = bin_and_impute(&r, &schema).unwrap();
        // Channels 1..5 hold the 4 levels of "gcs".
        let one_hot: Vec<f64> = (0..4).map(|l| m.values.at2(1 + l, 5)).collect();
        assert_eq!(one_hot, vec![0.0, 0.0, 1.0, 0.0]);
        // Before the observation, the normal level "a" is imputed.
        assert_eq!(m.values.at2(1, 4), 1.0);
        assert_eq!(m.masks.at2(1, 5), 1.0);
    }

    #[test]
    fn last_observation_in_bin_wins() {
        let schema = minimal_schema();
        let r = record(
            1,
            vec![
                Event { hour: 2.25, feature: 0, value: EventValue::Number(1.0) },
                Event { hour: 2.75, feature: 0, value: EventValue::Number(2.0) },
                Event { hour: 2.5, feature: 0, value: EventValue::Number(3.0) },
            ],
            false,
        );
        let m = bin_and_impute(&r, &schema).unwrap();
        assert_eq!(m.values.at2(0, 2), 2.0);
    }

    #[test]
    fn reference_schema_yields_76_by_48() {
        let schema = Schema::reference();
        let r = record(
            7,
            vec![Event {
                hour: 0.0,
                feature: schema.feature_index("heart rate").unwrap(),
                value: EventValue::Number(90.0),
            }],
            true,
        );
        let m = bin_and_impute(&r, &schema).unwrap();
        let input = m.to_input();
        assert_eq!(input.shape(), &[76, 48]);
    }

    #[test]
    fn input_interleaves_each_feature_with_its_mask() {
        let schema = minimal_schema();
        let r = record(
            1,
            vec![
                Event { hour: 0.5, feature: 0, value: EventValue::Number(99.0) },
                Event { hour: 1.5, feature: 1, value: EventValue::Level(3) },
            ],
            false,
        );
        let m = bin_and_impute(&r, &schema).unwrap();
        let input = m.to_input();
        // Layout: hr value, hr mask, gcs level a..d, gcs mask → 7 channels.
        assert_eq!(input.shape(), &[7, 48]);
        assert_eq!(input.at2(0, 0), 99.0); // hr value
        assert_eq!(input.at2(1, 0), 1.0); // hr mask
        assert_eq!(input.at2(1, 1), 0.0);
        assert_eq!(input.at2(5, 1), 1.0); // level d at hour 1
        assert_eq!(input.at2(6, 1), 1.0); // gcs mask at hour 1
    }

    #[test]
    fn unknown_feature_index_is_schema_error() {
        let schema = minimal_schema();
        let r = record(
            1,
            vec![Event { hour: 0.0, feature: 9, value: EventValue::Number(1.0) }],
            false,
        );
        assert!(matches!(bin_and_impute(&r, &schema), Err(Error::Schema(_))));
    }

    #[test]
    fn non_finite_value_is_data_error() {
        let schema = minimal_schema();
        let r = record(
            1,
            vec![Event { hour: 0.0, feature: 0, value: EventValue::Number(f64::NAN) }],
            false,
        );
        assert!(matches!(bin_and_impute(&r, &schema), Err(Error::Data(_))));
    }

    #[test]
    fn binning_is_idempotent_on_dense_records() {
        // A fully dense record (one observation exactly on every bin
        // boundary) reproduces itself when its binned values are fed
        // back in as a new record.
        let schema = minimal_schema();
        let mut rng = RngStream::from_seed(3);
        let mut events = Vec::new();
        for t in 0..WINDOW_HOURS {
            events.push(Event {
                hour: t as f64,
                feature: 0,
                value: EventValue::Number(rng.uniform(50.0, 150.0)),
            });
            events.push(Event {
                hour: t as f64,
                feature: 1,
                value: EventValue::Level(rng.next_index(4)),
            });
        }
        let first = bin_and_impute(&record(1, events, false), &schema).unwrap();
        let mut replay = Vec::new();
        for t in 0..WINDOW_HOURS {
            replay.push(Event {
                hour: t as f64,
                feature: 0,
                value: EventValue::Number(first.values.at2(0, t)),
            });
            let level = (0..4).find(|&l| first.values.at2(1 + l, t) == 1.0).unwrap();
            replay.push(Event {
                hour: t as f64,
                feature: 1,
                value: EventValue::Level(level),
            });
        }
        let second = bin_and_impute(&record(1, replay, false), &schema).unwrap();
        assert_eq!(first, second);
        assert!(first.masks.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn injection_retention_one_is_identity() {
        let schema = minimal_schema();
        let _ = schema;
        let r = record(
            5,
            vec![
                Event { hour: 1.0, feature: 0, value: EventValue::Number(1.0) },
                Event { hour: 2.0, feature: 0, value: EventValue::Number(2.0) },
            ],
            true,
        );
        let parent = RngStream::from_seed(1);
        let out = inject_missingness(&r, 1.0, &parent).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn injection_retention_zero_empties_and_masks_are_zero() {
        let schema = minimal_schema();
        let r = record(
            5,
            vec![Event { hour: 1.0, feature: 0, value: EventValue::Number(1.0) }],
            true,
        );
        let parent = RngStream::from_seed(1);
        let out = inject_missingness(&r, 0.0, &parent).unwrap();
        assert!(out.events.is_empty());
        let m = bin_and_impute(&out, &schema).unwrap();
        assert!(m.masks.data().iter().all(|&v| v == 0.0));
        // All value bins hold the (unnormalized) normal value.
        for t in 0..WINDOW_HOURS {
            assert_eq!(m.values.at2(0, t), 80.0);
        }
    }

    #[test]
    fn injection_kept_count_concentrates() {
        let events: Vec<Event> = (0..10_000)
            .map(|i| Event {
                hour: (i % 48) as f64,
                feature: 0,
                value: EventValue::Number(1.0),
            })
            .collect();
        let r = record(99, events, false);
        let parent = RngStream::from_seed(7);
        let out = inject_missingness(&r, 0.5, &parent).unwrap();
        let kept = out.events.len() as f64;
        // Binomial(10⁴, 0.5): 3σ = 3·√(10⁴·0.25) = 150.
        assert!((kept - 5000.0).abs() < 150.0, "kept {kept}");
    }

    #[test]
    fn injection_never_creates_masks_and_density_scales_linearly() {
        // Monotone masks under injection plus the retention→density slope.
        let schema = minimal_schema();
        let events: Vec<Event> = (0..10_000)
            .map(|i| Event {
                hour: (i as f64 * 47.9 / 10_000.0),
                feature: 0,
                value: EventValue::Number(1.0),
            })
            .collect();
        let r = record(4, events, false);
        let full_mask = bin_and_impute(&r, &schema).unwrap().masks;
        let parent = RngStream::from_seed(11);
        for retention in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let thinned = inject_missingness(&r, retention, &parent).unwrap();
            let m = bin_and_impute(&thinned, &schema).unwrap().masks;
            for (a, b) in m.data().iter().zip(full_mask.data()) {
                assert!(a <= b, "injection created a mask bit");
            }
            // Events per bin ≈ 208, so an hourly bin stays observed unless
            // every event in it is dropped; kept-event density tracks
            // retention linearly. 3σ on 10⁴ Bernoulli(retention) draws.
            let kept = thinned.events.len() as f64 / 10_000.0;
            let sigma = (retention * (1.0 - retention) / 10_000.0).sqrt();
            assert!(
                (kept - retention).abs() < 3.0 * sigma + 1e-9,
                "retention {retention}: kept fraction {kept}"
            );
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let records: Vec<PatientRecord> = (0..100).map(|i| record(i, vec![], false)).collect();
        let (train, val, test) = split(records, (0.7, 0.15, 0.15), 42).unwrap();
        assert_eq!(train.len(), 70);
        assert_eq!(val.len(), 15);
        assert_eq!(test.len(), 15);
        let mut ids: Vec<u64> = train
            .iter()
            .chain(&val)
            .chain(&test)
            .map(|r| r.patient_id)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..100).collect::<Vec<u64>>());
    }

    #[test]
    fn split_sizes_follow_largest_remainder_rule() {
        let records: Vec<PatientRecord> = (0..21_139).map(|i| record(i, vec![], false)).collect();
        let (train, val, test) = split(records, (0.7, 0.15, 0.15), 1).unwrap();
        assert_eq!(train.len(), 14_797);
        assert_eq!(val.len(), 3_171);
        assert_eq!(test.len(), 3_171);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let records: Vec<PatientRecord> = (0..10).map(|i| record(i, vec![], false)).collect();
        assert!(matches!(
            split(records, (0.5, 0.2, 0.2), 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let make = || (0..50).map(|i| record(i, vec![], i % 7 == 0)).collect::<Vec<_>>();
        let (a1, b1, c1) = split(make(), (0.7, 0.15, 0.15), 9).unwrap();
        let (a2, b2, c2) = split(make(), (0.7, 0.15, 0.15), 9).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn normalization_fits_train_split_to_zero_mean_unit_std() {
        let mut schema = minimal_schema();
        let mut rng = RngStream::from_seed(21);
        let records: Vec<PatientRecord> = (0..40)
            .map(|i| {
                let events = (0..30)
                    .map(|_| Event {
                        hour: rng.uniform(0.0, 48.0),
                        feature: 0,
                        value: EventValue::Number(rng.uniform(40.0, 160.0)),
                    })
                    .collect();
                record(i, events, false)
            })
            .collect();
        fit_normalization(&mut schema, &records).unwrap();
        assert!(schema.is_fitted());
        // Observed (mask = 1) entries of the training split normalize to
        // mean 0, std 1.
        let mut observed = Vec::new();
        for r in &records {
            let m = bin_and_impute(r, &schema).unwrap();
            for t in 0..WINDOW_HOURS {
                if m.masks.at2(0, t) == 1.0 {
                    observed.push(m.values.at2(0, t));
                }
            }
        }
        let n = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / n;
        let std = (observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((std - 1.0).abs() < 1e-9, "std {std}");
    }

    #[test]
    fn matrix_cache_round_trips() {
        let schema = minimal_schema();
        let mut rng = RngStream::from_seed(5);
        let matrices: Vec<FeatureMatrix> = (0..4)
            .map(|i| {
                let events = vec![Event {
                    hour: rng.uniform(0.0, 48.0),
                    feature: 0,
                    value: EventValue::Number(rng.uniform(50.0, 150.0)),
                }];
                bin_and_impute(&record(i, events, i % 2 == 0), &schema).unwrap()
            })
            .collect();
        let dataset = Dataset {
            matrices,
            split: SplitTag::Test,
            provenance: "unit-test".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        dataset.save_cache(&path).unwrap();
        let back = Dataset::load_cache(&path).unwrap();
        assert_eq!(back.split, SplitTag::Test);
        assert_eq!(back.matrices.len(), 4);
        for (a, b) in dataset.matrices.iter().zip(&back.matrices) {
            assert_eq!(a, b);
        }
    }
}
