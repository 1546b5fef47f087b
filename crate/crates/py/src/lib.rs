//! Python bindings: worlds, datasets, embeddings, reward models and
//! experiment grids.
//!
//!     import recouple_py as rc
//!     world = rc.World(open("configs/confound2.json").read())
//!     train = world.generate("train")
//!     emb = rc.EmbeddingTable.synthetic(world.strings(), dim=64)
//!     model = rc.RewardModel.train(train, emb, method="ReCouPLe-EC", epochs=50)
//!     model.accuracy(world.generate("val_ood"), emb)

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;

use recouple::datastore::{read_dataset, write_dataset, PreferenceDataset};
use recouple::embedding::{load_table, save_table, Embeddings, SyntheticMode, SyntheticProvider};
use recouple::encoder::TrajectorySegment;
use recouple::harness::{self, ExperimentConfig, ExperimentName, RunCache, TrainConfig, TrainedModel};
use recouple::objectives::Method;
use recouple::worlds::{LabeledPair, Split, WorldConfig};

fn py_err(e: recouple::Error) -> PyErr {
    match &e {
        e if e.is_numeric() => PyArithmeticError::new_err(e.to_string()),
        recouple::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        recouple::Error::MissingEmbedding(_) => PyKeyError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_split(s: &str) -> PyResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val_id" => Ok(Split::ValId),
        "val_ood" => Ok(Split::ValOod),
        _ => Err(PyValueError::new_err(format!("unknown split {s:?}; expected train, val_id or val_ood"))),
    }
}

/// A synthetic world (ConfoundWorld or FeatureWorld) built from its JSON config.
#[pyclass(module = "recouple_py")]
struct World {
    cfg: WorldConfig,
}

#[pymethods]
impl World {
    #[new]
    fn new(config_json: &str) -> PyResult<Self> {
        let cfg: WorldConfig = serde_json::from_str(config_json).map_err(json_err)?;
        cfg.validate().map_err(py_err)?;
        Ok(World { cfg })
    }

    /// Copy of this world with a different master seed.
    fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.cfg.clone();
        cfg.set_seed(seed);
        World { cfg }
    }

    fn generate(&self, split: &str) -> PyResult<Dataset> {
        let records = self.cfg.generate(parse_split(split)?).map_err(py_err)?;
        let hash = self.cfg.hash().map_err(py_err)?;
        Ok(Dataset {
            inner: PreferenceDataset::new(hash, self.cfg.seed(), records).map_err(py_err)?,
        })
    }

    /// Task strings followed by rationale strings, without repeats.
    fn strings(&self) -> Vec<String> {
        let mut out = self.cfg.task_strings();
        for r in self.cfg.reason_strings() {
            if !out.contains(&r) {
                out.push(r);
            }
        }
        out
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.cfg).map_err(json_err)
    }

    fn __repr__(&self) -> String {
        format!("World(seed={}, tasks={})", self.cfg.seed(), self.cfg.task_strings().len())
    }
}

/// Labeled preference pairs with their provenance header.
#[pyclass(module = "recouple_py")]
struct Dataset {
    inner: PreferenceDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            inner: read_dataset(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_dataset(&self.inner, path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn tasks(&self) -> Vec<String> {
        self.inner.tasks()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.records.iter().map(|r| r.y).collect()
    }

    fn reasons(&self) -> Vec<Option<String>> {
        self.inner.records.iter().map(|r| r.reason.clone()).collect()
    }

    /// `(segA, segB, y, task, reason)` of record `index`.
    #[allow(clippy::type_complexity)]
    fn pair(&self, index: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, u8, String, Option<String>)> {
        let r: &LabeledPair = self
            .inner
            .records
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        Ok((r.seg_a.steps.clone(), r.seg_b.steps.clone(), r.y, r.task.clone(), r.reason.clone()))
    }

    /// Keeps rationales on `floor(keep_fraction * n)` random records.
    fn mask_rationales(&self, keep_fraction: f64, seed: u64) -> PyResult<Self> {
        Ok(Dataset {
            inner: recouple::datastore::mask_rationales(&self.inner, keep_fraction, seed).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Dataset(len={}, tasks={})", self.inner.len(), self.inner.tasks().len())
    }
}

/// Frozen string embeddings.
#[pyclass(module = "recouple_py")]
struct EmbeddingTable {
    inner: recouple::embedding::EmbeddingTable,
}

#[pymethods]
impl EmbeddingTable {
    /// Offline embeddings; `mode` is "compose" (sum of word vectors) or "hash".
    #[staticmethod]
    #[pyo3(signature = (strings, dim=64, seed=0, mode="compose"))]
    fn synthetic(strings: Vec<String>, dim: usize, seed: u64, mode: &str) -> PyResult<Self> {
        let mode: SyntheticMode =
            serde_json::from_value(serde_json::Value::String(mode.to_string())).map_err(json_err)?;
        let provider = SyntheticProvider {
            dim,
            seed,
            mode,
            ..SyntheticProvider::default()
        };
        Ok(EmbeddingTable {
            inner: provider.build_table(strings.iter().map(String::as_str)).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(EmbeddingTable {
            inner: load_table(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_table(&self.inner, path).map_err(py_err)
    }

    fn lookup(&self, key: &str) -> PyResult<Vec<f64>> {
        self.inner.lookup(key).map(<[f64]>::to_vec).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn checksum(&self) -> String {
        self.inner.checksum()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, key: &str) -> bool {
        self.inner.contains(key)
    }
}

/// A trained trajectory encoder (shared, or one per task for BT).
#[pyclass(module = "recouple_py")]
struct RewardModel {
    model: TrainedModel,
    losses: Vec<(String, Vec<f64>)>,
}

#[pymethods]
impl RewardModel {
    /// Trains on `dataset`. `config_json` is a full training config; the
    /// keyword arguments override it.
    #[staticmethod]
    #[pyo3(signature = (dataset, embeddings, config_json=None, method=None, epochs=None, seed=None))]
    fn train(
        py: Python<'_>,
        dataset: &Dataset,
        embeddings: &EmbeddingTable,
        config_json: Option<&str>,
        method: Option<&str>,
        epochs: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut cfg: TrainConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => TrainConfig::default(),
        };
        if let Some(m) = method {
            cfg.method = m.parse::<Method>().map_err(py_err)?;
        }
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let pairs = &dataset.inner.records;
        let table = &embeddings.inner;
        let out = py.detach(|| harness::train(&cfg, pairs, table)).map_err(py_err)?;
        let losses = out
            .history
            .iter()
            .map(|h| {
                let mut v = vec![h.initial];
                v.extend(&h.epochs);
                (h.label.clone(), v)
            })
            .collect();
        Ok(RewardModel {
            model: out.model,
            losses,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(RewardModel {
            model: harness::load_model(path).map_err(py_err)?,
            losses: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        harness::save_model(&self.model, path).map_err(py_err)
    }

    /// Reward of a segment (a list of per-step feature vectors) under `task`.
    fn reward(&self, steps: Vec<Vec<f64>>, task: &str, embeddings: &EmbeddingTable) -> PyResult<f64> {
        let seg = TrajectorySegment::new(steps, task).map_err(py_err)?;
        self.model.reward(&embeddings.inner, task, &seg).map_err(py_err)
    }

    /// Fraction of pairs whose preferred segment gets the higher reward.
    fn accuracy(&self, py: Python<'_>, dataset: &Dataset, embeddings: &EmbeddingTable) -> PyResult<f64> {
        let (pairs, table) = (&dataset.inner.records, &embeddings.inner);
        py.detach(|| harness::reward_accuracy(&self.model, pairs, table))
            .map_err(py_err)
    }

    /// Per-encoder loss curves, epoch 0 first.
    fn loss_history(&self) -> Vec<(String, Vec<f64>)> {
        self.losses.clone()
    }

    fn checksum(&self) -> String {
        self.model.checksum()
    }
}

/// Aggregated results of an experiment grid.
#[pyclass(module = "recouple_py")]
struct Report {
    inner: harness::EvalReport,
}

#[pymethods]
impl Report {
    fn mean(&self, method: &str, task: &str, split: &str) -> Option<f64> {
        self.inner.mean(method, task, split)
    }

    fn split_mean(&self, method: &str, split: &str) -> Option<f64> {
        self.inner.split_mean(method, split)
    }

    fn tasks(&self) -> Vec<String> {
        self.inner.tasks()
    }

    fn csv(&self) -> PyResult<String> {
        let bytes = self.inner.to_csv().map_err(py_err)?;
        String::from_utf8(bytes).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn summary_json(&self) -> String {
        self.inner.summary_json().to_string()
    }

    fn write(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        self.inner.write(&dir).map_err(py_err)
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.config_hash.clone()
    }

    fn __str__(&self) -> String {
        self.inner.render()
    }
}

#[pyfunction]
fn experiment_names() -> Vec<&'static str> {
    ExperimentName::ALL.map(ExperimentName::name).to_vec()
}

/// The built-in config of a named experiment, as JSON.
#[pyfunction]
fn default_experiment(name: &str) -> PyResult<String> {
    let name: ExperimentName = name.parse().map_err(py_err)?;
    serde_json::to_string_pretty(&harness::default_experiment(name)).map_err(json_err)
}

/// Runs an experiment config (JSON) over its seeds with `jobs` threads.
#[pyfunction]
#[pyo3(signature = (config_json, jobs=1))]
fn run_experiment(py: Python<'_>, config_json: &str, jobs: usize) -> PyResult<Report> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let inner = py
        .detach(|| harness::run_experiment(&cfg, jobs, &RunCache::new()))
        .map_err(py_err)?;
    Ok(Report { inner })
}

/// `(parallel, perpendicular)` components of `phi` along `psi`.
#[pyfunction]
fn project_decompose(phi: Vec<f64>, psi: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let d = recouple::geometry::project_decompose(&phi, &psi).map_err(py_err)?;
    Ok((d.parallel, d.perpendicular))
}

/// P(A preferred over B) under the Bradley-Terry model.
#[pyfunction]
fn bt_probability(reward_a: f64, reward_b: f64) -> PyResult<f64> {
    recouple::geometry::bt_probability(reward_a, reward_b).map_err(py_err)
}

#[pymodule]
fn recouple_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<World>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<EmbeddingTable>()?;
    m.add_class::<RewardModel>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(experiment_names, m)?)?;
    m.add_function(wrap_pyfunction!(default_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(project_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(bt_probability, m)?)?;
    Ok(())
}
