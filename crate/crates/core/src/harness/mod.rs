//! Training, evaluation and the experiment drivers.

mod eval;
mod experiment;
mod optim;
mod report;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::embedding::{load_table, CompositeSpec, EmbeddingTable, SemanticGroupSpec, SyntheticMode, SyntheticProvider, DEFAULT_DIM};
use crate::encoder::Architecture;
use crate::error::{Error, Result};
use crate::objectives::{LossWeights, Method};
use crate::worlds::WorldConfig;

pub use eval::{greedy_selection_success, reward_accuracy, CandidateSet};
pub use experiment::{
    default_experiment, execute_run, run_experiment, ExperimentConfig, ExperimentName, RunCache, RunKey, RunOutput,
    Variant, TRANSFER_EPOCHS,
};
pub use optim::Adam;
pub use report::{write_loss_csv, Aggregate, EvalReport, ReportRow};
pub use train::{load_model, objective, save_model, train, LossHistory, TrainOutput, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub discount: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::RecoupleEc,
            weights: LossWeights::default(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 64,
            epochs: 300,
            seed: 0,
            hidden: vec![64, 64],
            discount: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("moment decay rates must lie in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("adam_epsilon must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be positive"));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize, output_dim: usize) -> Architecture {
        Architecture {
            discount: self.discount,
            ..Architecture::new(input_dim, self.hidden.clone(), output_dim)
        }
    }
}

/// Where the frozen task and rationale embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSpec {
    Synthetic {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        mode: SyntheticMode,
        /// Spread of paraphrases around their canonical rationale.
        #[serde(default = "default_paraphrase_scale")]
        paraphrase_scale: f64,
        /// When set, task strings of worlds with component structure embed
        /// as the sum of their components' rationale embeddings plus this
        /// multiple of their own.
        #[serde(default = "default_task_own_weight")]
        task_own_weight: Option<f64>,
    },
    File {
        path: PathBuf,
    },
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

fn default_paraphrase_scale() -> f64 {
    0.3
}

fn default_task_own_weight() -> Option<f64> {
    Some(1.0)
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::Synthetic {
            dim: DEFAULT_DIM,
            seed: 0,
            mode: SyntheticMode::Compose,
            paraphrase_scale: default_paraphrase_scale(),
            task_own_weight: default_task_own_weight(),
        }
    }
}

impl EmbeddingSpec {
    /// Embeds every task and rationale string of `world`. Confound paraphrases
    /// are grouped around the canonical rationale.
    pub fn build(&self, world: &WorldConfig) -> Result<EmbeddingTable> {
        match self {
            EmbeddingSpec::File { path } => load_table(path),
            EmbeddingSpec::Synthetic {
                dim,
                seed,
                mode,
                paraphrase_scale,
                task_own_weight,
            } => {
                let mut groups = Vec::new();
                if let WorldConfig::Confound(c) = world {
                    let members: Vec<String> = c.paraphrases.iter().filter(|p| **p != c.reason).cloned().collect();
                    if !members.is_empty() {
                        groups.push(SemanticGroupSpec {
                            group_id: c.reason.clone(),
                            centroid_seed: *seed,
                            member_strings: members,
                            perturbation_scale: *paraphrase_scale,
                        });
                    }
                }
                let provider = SyntheticProvider {
                    dim: *dim,
                    seed: *seed,
                    mode: *mode,
                    groups,
                    composites: task_own_weight
                        .map(|own_weight| {
                            world
                                .task_skills()
                                .into_iter()
                                .map(|(string, parts)| CompositeSpec {
                                    string,
                                    parts,
                                    own_weight,
                                })
                                .collect()
                        })
                        .unwrap_or_default(),
                };
                let mut strings = world.task_strings();
                strings.extend(world.reason_strings());
                let mut seen = std::collections::BTreeSet::new();
                strings.retain(|s| seen.insert(s.clone()));
                provider.build_table(strings.iter().map(String::as_str))
            }
        }
    }
}
