//! Python bindings: the synthetic corpus, training, scoring, and the
//! core uncertainty/metric operations, exposed as `bayescnn_py`.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use bayescnn::bayes;
use bayescnn::data::{self, PatientRecord, Schema as CoreSchema};
use bayescnn::error::Error;
use bayescnn::eval;
use bayescnn::layers;
use bayescnn::model::{ModelConfig, Variant};
use bayescnn::rng::RngStream;
use bayescnn::tensor::Tensor;
use bayescnn::train::{self, Checkpoint, LabeledSet, TrainConfig};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Feature schema (the embedded 17-feature reference by default).
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Schema {
    inner: CoreSchema,
}

#[pymethods]
impl Schema {
    /// The embedded 17-feature reference schema (76 encoded channels).
    #[staticmethod]
    fn reference() -> Schema {
        Schema {
            inner: CoreSchema::reference(),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Schema> {
        Ok(Schema {
            inner: CoreSchema::load(std::path::Path::new(path)).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn total_channels(&self) -> usize {
        self.inner.total_channels()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.features.iter().map(|f| f.name.clone()).collect()
    }
}

/// A set of raw patient records plus the schema they conform to.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Corpus {
    records: Vec<PatientRecord>,
    schema: CoreSchema,
}

#[pymethods]
impl Corpus {
    fn __len__(&self) -> usize {
        self.records.len()
    }

    #[getter]
    fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }

    #[getter]
    fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Seed-deterministic train/val/test split (largest-remainder sizes).
    fn split(
        &self,
        train_frac: f64,
        val_frac: f64,
        test_frac: f64,
        seed: u64,
    ) -> PyResult<(Corpus, Corpus, Corpus)> {
        let (a, b, c) = data::split(
            self.records.clone(),
            (train_frac, val_frac, test_frac),
            seed,
        )
        .map_err(to_py_err)?;
        let wrap = |records| Corpus {
            records,
            schema: self.schema.clone(),
        };
        Ok((wrap(a), wrap(b), wrap(c)))
    }

    /// Independently keeps each raw event with the given probability
    /// (missingness injection, before binning/imputation).
    fn inject_missingness(&self, retention: f64, seed: u64) -> PyResult<Corpus> {
        let parent = RngStream::from_seed(seed);
        let records: Result<Vec<_>, _> = self
            .records
            .iter()
            .map(|r| data::inject_missingness(r, retention, &parent))
            .collect();
        Ok(Corpus {
            records: records.map_err(to_py_err)?,
            schema: self.schema.clone(),
        })
    }
}

/// Generates a synthetic corpus with the reference schema and default
/// generator calibration (positive rate ≈ 13.2%).
#[pyfunction]
#[pyo3(signature = (patients, seed=42))]
fn generate_corpus(patients: usize, seed: u64) -> PyResult<Corpus> {
    let schema = CoreSchema::reference();
    let records =
        data::generate_synthetic(patients, &schema, &data::GenConfig::default(), seed)
            .map_err(to_py_err)?;
    Ok(Corpus { records, schema })
}

/// One trained ensemble member (bayesian or benchmark variant).
#[pyclass]
struct Model {
    checkpoint: Checkpoint,
    schema: CoreSchema,
}

#[pymethods]
impl Model {
    #[getter]
    fn val_auc(&self) -> f64 {
        self.checkpoint.val_auc
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.checkpoint.epoch
    }

    #[getter]
    fn variant(&self) -> &'static str {
        match self.checkpoint.variant {
            Variant::Bayesian => "bayesian",
            Variant::Benchmark => "benchmark",
        }
    }

    /// Scores a corpus: returns (instance_id, label, probability,
    /// aleatoric_variance) per record, with per-instance evaluation
    /// noise derived from `seed`.
    #[pyo3(signature = (corpus, seed=42))]
    fn score(&self, corpus: &Corpus, seed: u64) -> PyResult<Vec<(u64, bool, f64, f64)>> {
        let scored = eval::score_records(&self.checkpoint, &corpus.records, &self.schema, seed)
            .map_err(to_py_err)?;
        Ok(scored
            .into_iter()
            .map(|s| (s.instance_id, s.label, s.probability, s.aleatoric_variance))
            .collect())
    }

    /// Saves `<prefix>.ckpt` and `<prefix>.schema.toml`.
    fn save(&self, prefix: &str) -> PyResult<()> {
        self.checkpoint
            .save(std::path::Path::new(&format!("{prefix}.ckpt")))
            .map_err(to_py_err)?;
        self.schema
            .save(std::path::Path::new(&format!("{prefix}.schema.toml")))
            .map_err(to_py_err)
    }

    #[staticmethod]
    fn load(prefix: &str) -> PyResult<Model> {
        let checkpoint = Checkpoint::load(std::path::Path::new(&format!("{prefix}.ckpt")))
            .map_err(to_py_err)?;
        let schema = CoreSchema::load(std::path::Path::new(&format!("{prefix}.schema.toml")))
            .map_err(to_py_err)?;
        Ok(Model { checkpoint, schema })
    }
}

/// Trains one member on the given corpora. Normalization statistics are
/// fitted on `train` only; `member` selects the ensemble seed.
#[pyfunction]
#[pyo3(signature = (train, val, variant="bayesian", seed=42, member=0, max_epochs=100,
                    patience=10, mc_samples=100, batch_size=64, learning_rate=0.001,
                    conv_filters=50, dropout_rate=0.5))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    train: &Corpus,
    val: &Corpus,
    variant: &str,
    seed: u64,
    member: usize,
    max_epochs: usize,
    patience: usize,
    mc_samples: usize,
    batch_size: usize,
    learning_rate: f64,
    conv_filters: usize,
    dropout_rate: f64,
) -> PyResult<Model> {
    let variant: Variant = variant.parse().map_err(to_py_err)?;
    let mut schema = train.schema.clone();
    data::fit_normalization(&mut schema, &train.records).map_err(to_py_err)?;
    let encode = |records: &[PatientRecord]| -> Result<LabeledSet, Error> {
        let matrices: Result<Vec<_>, _> = records
            .iter()
            .map(|r| data::bin_and_impute(r, &schema))
            .collect();
        Ok(LabeledSet::from_matrices(&matrices?))
    };
    let train_set = encode(&train.records).map_err(to_py_err)?;
    let val_set = encode(&val.records).map_err(to_py_err)?;
    let model_config = ModelConfig {
        in_channels: schema.total_channels(),
        time_steps: data::WINDOW_HOURS,
        conv_filters,
        kernel_width: 3,
        dropout_rate,
        padding: layers::Padding::Same,
        pool: layers::PoolKind::Max,
        batch_norm: true,
        n_classes: 2,
        per_class_sigma: false,
    };
    let train_config = TrainConfig {
        learning_rate,
        batch_size,
        max_epochs,
        patience,
        mc_samples,
        seed,
        ..TrainConfig::default()
    };
    let member_seed = train::member_seed_for(seed, variant, member);
    let outcome = train::train(
        &train_set,
        &val_set,
        &model_config,
        &train_config,
        variant,
        member_seed,
    )
    .map_err(to_py_err)?;
    Ok(Model {
        checkpoint: outcome.checkpoint,
        schema,
    })
}

/// Mann–Whitney AUC from labels and scores (ties counted half).
#[pyfunction]
fn auc(labels: Vec<bool>, scores: Vec<f64>) -> PyResult<f64> {
    if labels.len() != scores.len() {
        return Err(PyValueError::new_err("labels and scores differ in length"));
    }
    let instances: Vec<eval::ScoredInstance> = labels
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, (&label, &probability))| eval::ScoredInstance {
            instance_id: i as u64,
            label,
            probability,
            aleatoric_variance: 0.0,
        })
        .collect();
    eval::auc(&instances).map_err(to_py_err)
}

/// Median-uncertainty split: returns
/// ((low_auc, low_positives), (high_auc, high_positives)).
#[pyfunction]
fn median_split(
    labels: Vec<bool>,
    scores: Vec<f64>,
    variances: Vec<f64>,
) -> PyResult<((f64, usize), (f64, usize))> {
    if labels.len() != scores.len() || labels.len() != variances.len() {
        return Err(PyValueError::new_err("inputs differ in length"));
    }
    let instances: Vec<eval::ScoredInstance> = (0..labels.len())
        .map(|i| eval::ScoredInstance {
            instance_id: i as u64,
            label: labels[i],
            probability: scores[i],
            aleatoric_variance: variances[i],
        })
        .collect();
    let report = eval::median_split_analysis(&instances).map_err(to_py_err)?;
    Ok((
        (report.low.auc, report.low.positives),
        (report.high.auc, report.high.positives),
    ))
}

/// Numerically stable `log Σ exp(x)`.
#[pyfunction]
fn log_sum_exp(values: Vec<f64>) -> PyResult<f64> {
    bayescnn::tensor::log_sum_exp(&values).map_err(to_py_err)
}

/// Max-shifted softmax.
#[pyfunction]
fn softmax(logits: Vec<f64>) -> Vec<f64> {
    layers::softmax(&logits)
}

/// Attenuated Monte Carlo cross-entropy of pre-corrupted logit rows:
/// `−log[(1/T) Σ_t softmax(row_t)[label]]`.
#[pyfunction]
fn bayes_ce_loss(corrupted_logits: Vec<Vec<f64>>, label: usize) -> PyResult<f64> {
    let rows = corrupted_logits.len();
    if rows == 0 {
        return Err(PyValueError::new_err("need at least one Monte Carlo row"));
    }
    let cols = corrupted_logits[0].len();
    let mut flat = Vec::with_capacity(rows * cols);
    for row in &corrupted_logits {
        if row.len() != cols {
            return Err(PyValueError::new_err("ragged logit rows"));
        }
        flat.extend_from_slice(row);
    }
    let tensor = Tensor::from_vec(&[rows, cols], flat).map_err(to_py_err)?;
    bayes::bayes_ce_loss(&tensor, label).map_err(to_py_err)
}

/// Standard-normal draws from the seeded, platform-stable stream.
#[pyfunction]
fn standard_normal(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = RngStream::from_seed(seed);
    (0..count).map(|_| rng.standard_normal()).collect()
}

#[pymodule]
fn bayescnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Schema>()?;
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(median_split, m)?)?;
    m.add_function(wrap_pyfunction!(log_sum_exp, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(bayes_ce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(standard_normal, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
