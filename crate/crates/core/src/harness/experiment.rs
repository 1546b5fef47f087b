use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{EvalReport, ReportRow};
use super::train::{train, LossHistory};
use super::{reward_accuracy, EmbeddingSpec, TrainConfig};
use crate::datastore::{mask_rationales, PreferenceDataset};
use crate::embedding::{SyntheticMode, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::io::config_hash;
use crate::objectives::{LossWeights, Method};
use crate::worlds::confound::{four_task_suite, PARAPHRASES};
use crate::worlds::{ConfoundWorldConfig, FeatureWorldConfig, LabeledPair, Split, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    #[serde(rename = "confusion_2task")]
    Confusion2Task,
    #[serde(rename = "confusion_4task")]
    Confusion4Task,
    Transfer,
    Ablation,
    Sparse,
    Diversity,
    Scaling,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 7] = [
        ExperimentName::Confusion2Task,
        ExperimentName::Confusion4Task,
        ExperimentName::Transfer,
        ExperimentName::Ablation,
        ExperimentName::Sparse,
        ExperimentName::Diversity,
        ExperimentName::Scaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentName::Confusion2Task => "confusion_2task",
            ExperimentName::Confusion4Task => "confusion_4task",
            ExperimentName::Transfer => "transfer",
            ExperimentName::Ablation => "ablation",
            ExperimentName::Sparse => "sparse",
            ExperimentName::Diversity => "diversity",
            ExperimentName::Scaling => "scaling",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| Error::Unknown {
            kind: "experiment",
            name: s.to_string(),
            valid: Self::ALL.map(ExperimentName::name).join(", "),
        })
    }
}

/// One row label of an experiment: a method plus overrides of the base
/// world and training configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub label: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<LossWeights>,
    /// Fraction of training pairs that keep their rationale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_per_task: Option<usize>,
    /// Rationale paraphrases (ConfoundWorld only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrases: Option<Vec<String>>,
}

impl Variant {
    pub fn new(label: impl Into<String>, method: Method) -> Self {
        Variant {
            label: label.into(),
            method,
            weights: None,
            keep_fraction: None,
            pairs_per_task: None,
            paraphrases: None,
        }
    }

    pub fn method(method: Method) -> Self {
        Variant::new(method.name(), method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    pub world: WorldConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
    pub variants: Vec<Variant>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("an experiment needs at least one variant and one seed"));
        }
        crate::worlds::check_distinct(self.variants.iter().map(|v| v.label.as_str()), "variant label")?;
        for v in &self.variants {
            if let Some(w) = &v.weights {
                w.validate()?;
            }
            if let Some(k) = v.keep_fraction {
                if !(0.0..=1.0).contains(&k) {
                    return Err(Error::config("keep_fraction must lie in [0, 1]"));
                }
            }
            if v.paraphrases.is_some() && !matches!(self.world, WorldConfig::Confound(_)) {
                return Err(Error::config("paraphrase variants need a confound world"));
            }
            if v.method == Method::Bt && matches!(&self.world, WorldConfig::Feature(f) if f.held_out.is_some()) {
                return Err(Error::config("single-task BT has no encoder for a held-out task"));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    /// Fully resolved inputs of one (variant, seed) run.
    pub fn run_key(&self, variant: &Variant, seed: u64) -> RunKey {
        let mut world = self.world.clone();
        world.set_seed(seed);
        match &mut world {
            WorldConfig::Confound(c) => {
                if let Some(n) = variant.pairs_per_task {
                    c.pairs_per_task = n;
                }
                if let Some(p) = &variant.paraphrases {
                    c.paraphrases = p.clone();
                }
            }
            WorldConfig::Feature(f) => {
                if let Some(n) = variant.pairs_per_task {
                    f.pairs_per_task = n;
                }
            }
        }
        let mut train = self.train.clone();
        train.method = variant.method;
        train.seed = seed;
        if let Some(w) = variant.weights {
            train.weights = w;
        }
        RunKey {
            world,
            train,
            embedding: self.embedding.clone(),
            keep_fraction: variant.keep_fraction.unwrap_or(1.0),
        }
    }
}

fn methods(ms: &[Method]) -> Vec<Variant> {
    ms.iter().map(|&m| Variant::method(m)).collect()
}

fn confound(cfg: ConfoundWorldConfig) -> WorldConfig {
    WorldConfig::Confound(cfg)
}

/// The shipped configuration of a named experiment.
pub fn default_experiment(name: ExperimentName) -> ExperimentConfig {
    let base = ExperimentConfig {
        name,
        world: confound(ConfoundWorldConfig::default()),
        train: TrainConfig::default(),
        embedding: EmbeddingSpec::default(),
        variants: methods(&Method::ALL),
        seeds: default_seeds(),
    };
    let ec = || Variant::method(Method::RecoupleEc);
    match name {
        ExperimentName::Confusion2Task => base,
        ExperimentName::Confusion4Task => ExperimentConfig {
            world: confound(ConfoundWorldConfig {
                tasks: four_task_suite(),
                ..ConfoundWorldConfig::default()
            }),
            ..base
        },
        ExperimentName::Transfer => ExperimentConfig {
            world: WorldConfig::Feature(FeatureWorldConfig::default()),
            embedding: EmbeddingSpec::Synthetic {
                dim: DEFAULT_DIM,
                seed: 0,
                mode: SyntheticMode::Hash,
                paraphrase_scale: 0.3,
                task_own_weight: Some(2.0),
            },
            train: TrainConfig {
                epochs: TRANSFER_EPOCHS,
                ..TrainConfig::default()
            },
            variants: methods(&[Method::BtMulti, Method::Rfp, Method::RecoupleEc, Method::RecoupleIc]),
            ..base
        },
        ExperimentName::Ablation => {
            let no_eq = LossWeights {
                lambda_eq: 0.0,
                ..LossWeights::default()
            };
            let no_eq_ratio = LossWeights {
                lambda_ratio: 0.0,
                ..no_eq
            };
            ExperimentConfig {
                variants: vec![
                    ec(),
                    Variant {
                        weights: Some(no_eq),
                        ..Variant::new("ReCouPLe-no-consistency", Method::RecoupleEc)
                    },
                    Variant {
                        weights: Some(no_eq_ratio),
                        ..Variant::new("ReCouPLe-no-consistency-no-ratio", Method::RecoupleEc)
                    },
                ],
                ..base
            }
        }
        ExperimentName::Sparse => {
            let mut variants = vec![Variant::method(Method::BtMulti)];
            for (pct, k) in [(25, 0.25), (50, 0.5), (100, 1.0)] {
                variants.push(Variant {
                    keep_fraction: Some(k),
                    ..Variant::new(format!("ReCouPLe-EC ({pct}%)"), Method::RecoupleEc)
                });
            }
            ExperimentConfig { variants, ..base }
        }
        ExperimentName::Diversity => ExperimentConfig {
            variants: vec![
                Variant::method(Method::BtMulti),
                ec(),
                Variant {
                    paraphrases: Some(PARAPHRASES.iter().map(|s| s.to_string()).collect()),
                    ..Variant::new("ReCouPLe-EC (paraphrased)", Method::RecoupleEc)
                },
            ],
            ..base
        },
        ExperimentName::Scaling => ExperimentConfig {
            variants: [200, 500, 1000, 2000]
                .into_iter()
                .map(|n| Variant {
                    pairs_per_task: Some(n),
                    ..Variant::new(format!("ReCouPLe-EC ({n})"), Method::RecoupleEc)
                })
                .collect(),
            ..base
        },
    }
}

/// Epochs for the transfer suite, whose trajectories are eight times longer
/// and datasets three times larger than the confound suite's.
pub const TRANSFER_EPOCHS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub embedding: EmbeddingSpec,
    pub keep_fraction: f64,
}

impl RunKey {
    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

/// Accuracy of one trained run on every (task, split) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub cells: Vec<(String, String, f64)>,
    pub history: Vec<LossHistory>,
    pub wall_seconds: f64,
}

/// Completed runs keyed by the hash of their resolved inputs, shared
/// between experiments that repeat a run.
#[derive(Debug, Clone, Default)]
pub struct RunCache {
    runs: Arc<Mutex<HashMap<String, Arc<RunOutput>>>>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.lock().expect("run cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &str) -> Option<Arc<RunOutput>> {
        self.runs.lock().expect("run cache poisoned").get(key).cloned()
    }

    fn insert(&self, key: String, out: Arc<RunOutput>) {
        self.runs.lock().expect("run cache poisoned").insert(key, out);
    }
}

fn split_label(split: Split) -> &'static str {
    match split {
        Split::ValId => "ID",
        _ => "OOD",
    }
}

fn tasks_in(pairs: &[LabeledPair]) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for p in pairs {
        if !out.contains(&p.task.as_str()) {
            out.push(&p.task);
        }
    }
    out
}

/// Generates data, trains and evaluates one run.
pub fn execute_run(key: &RunKey) -> Result<RunOutput> {
    let start = Instant::now();
    let emb = key.embedding.build(&key.world)?;
    let checksum = emb.checksum();
    let mut pairs = key.world.generate(Split::Train)?;
    if key.keep_fraction < 1.0 {
        let ds = PreferenceDataset::new(key.world.hash()?, key.world.seed(), pairs)?;
        pairs = mask_rationales(&ds, key.keep_fraction, key.world.seed())?.records;
    }
    let out = train(&key.train, &pairs, &emb)?;
    let mut cells = Vec::new();
    for split in [Split::ValId, Split::ValOod] {
        let val = key.world.generate(split)?;
        for task in tasks_in(&val) {
            let subset: Vec<LabeledPair> = val.iter().filter(|p| p.task == task).cloned().collect();
            let acc = reward_accuracy(&out.model, &subset, &emb)?;
            cells.push((task.to_string(), split_label(split).to_string(), acc));
        }
    }
    debug_assert_eq!(checksum, emb.checksum());
    Ok(RunOutput {
        cells,
        history: out.history,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains every variant over every seed on `jobs` worker threads, reusing
/// runs already present in `cache`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize, cache: &RunCache) -> Result<EvalReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut plan = Vec::new();
    for v in &cfg.variants {
        for &seed in &cfg.seeds {
            let key = cfg.run_key(v, seed);
            let hash = key.hash()?;
            plan.push((v, seed, key, hash));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let outputs: Vec<Arc<RunOutput>> = pool.install(|| {
        plan.par_iter()
            .map(|(_, _, key, hash)| {
                if let Some(hit) = cache.get(hash) {
                    return Ok(hit);
                }
                let out = Arc::new(execute_run(key)?);
                cache.insert(hash.clone(), out.clone());
                Ok(out)
            })
            .collect::<Result<_>>()
    })?;
    let mut rows = Vec::new();
    let mut histories = Vec::new();
    for ((v, seed, _, _), out) in plan.iter().zip(&outputs) {
        for (task, split, acc) in &out.cells {
            rows.push(ReportRow {
                experiment: cfg.name.to_string(),
                method: v.label.clone(),
                task: task.clone(),
                split: split.clone(),
                seed: *seed,
                accuracy: *acc,
            });
        }
        histories.push((v.label.clone(), *seed, out.history.clone()));
    }
    Ok(EvalReport {
        experiment: cfg.name.to_string(),
        config_hash: cfg.hash()?,
        seeds: cfg.seeds.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
        rows,
        histories,
    })
}
