//! Synthetic preference data generators.
//!
//! [`confound`] builds two-cube scenes where object size decides the label
//! and cube color is a spurious cue that flips in the OOD split.
//! [`feature`] builds component-decomposed rewards with softmax-sampled
//! rationales and a compositional held-out task.

pub mod confound;
pub mod feature;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::TrajectorySegment;
use crate::error::{Error, Result};

pub use confound::ConfoundWorldConfig;
pub use feature::FeatureWorldConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValId,
    ValOod,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::ValId, Split::ValOod];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValId => "val_id",
            Split::ValOod => "val_ood",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::Unknown {
            kind: "split",
            name: s.to_string(),
            valid: Split::ALL.map(Split::name).join(", "),
        })
    }
}

/// Two segments of one task with a preference label and optional rationale.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub seg_a: TrajectorySegment,
    pub seg_b: TrajectorySegment,
    /// 1 when A is preferred.
    pub y: u8,
    pub task: String,
    pub reason: Option<String>,
    pub split: Split,
    /// Ground-truth component totals, kept for label audits where known.
    pub totals: Option<(Vec<f64>, Vec<f64>)>,
}

impl LabeledPair {
    pub fn preferred(&self) -> &TrajectorySegment {
        if self.y == 1 {
            &self.seg_a
        } else {
            &self.seg_b
        }
    }
}

/// Independent generator for one pair, derived from the master seed and a
/// path of indices so output does not depend on generation order.
pub fn substream(seed: u64, tag: &str, path: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"recouple/substream/v1\0");
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    for p in path {
        h.update(p.to_le_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Either world, tagged by `"world"` in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "world", rename_all = "snake_case")]
pub enum WorldConfig {
    Confound(ConfoundWorldConfig),
    Feature(FeatureWorldConfig),
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            WorldConfig::Confound(c) => c.validate(),
            WorldConfig::Feature(c) => c.validate(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            WorldConfig::Confound(c) => c.seed,
            WorldConfig::Feature(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            WorldConfig::Confound(c) => c.seed = seed,
            WorldConfig::Feature(c) => c.seed = seed,
        }
    }

    pub fn step_dim(&self) -> usize {
        match self {
            WorldConfig::Confound(c) => c.step_dim(),
            WorldConfig::Feature(c) => c.step_dim(),
        }
    }

    pub fn task_strings(&self) -> Vec<String> {
        match self {
            WorldConfig::Confound(c) => c.tasks.iter().map(|t| t.task.clone()).collect(),
            WorldConfig::Feature(c) => c.tasks.iter().map(|t| t.task.clone()).collect(),
        }
    }

    /// Every rationale string the world can emit.
    pub fn reason_strings(&self) -> Vec<String> {
        match self {
            WorldConfig::Confound(c) => c.reason_strings(),
            WorldConfig::Feature(c) => c.components.iter().map(|x| x.rationale.clone()).collect(),
        }
    }

    /// Each task string with the rationales of the components it rewards.
    /// Empty for worlds without component structure.
    pub fn task_skills(&self) -> Vec<(String, Vec<String>)> {
        match self {
            WorldConfig::Confound(_) => Vec::new(),
            WorldConfig::Feature(c) => c
                .tasks
                .iter()
                .map(|t| {
                    let parts = c
                        .components
                        .iter()
                        .filter(|x| t.weights.get(&x.name).is_some_and(|w| *w != 0.0))
                        .map(|x| x.rationale.clone())
                        .collect();
                    (t.task.clone(), parts)
                })
                .collect(),
        }
    }

    /// Hex hash of the canonical config JSON.
    pub fn hash(&self) -> Result<String> {
        crate::io::config_hash(self)
    }

    /// All pairs of one split, ordered by task then pair index.
    pub fn generate(&self, split: Split) -> Result<Vec<LabeledPair>> {
        match self {
            WorldConfig::Confound(c) => confound::gen_confound_pairs(c, c.pairs_for(split), split),
            WorldConfig::Feature(c) => feature::gen_split(c, split),
        }
    }
}

pub(crate) fn check_distinct<'a, I>(strings: I, what: &str) -> Result<()>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = std::collections::BTreeSet::new();
    for s in strings {
        if s.is_empty() {
            return Err(Error::config(format!("empty {what}")));
        }
        if !seen.insert(s) {
            return Err(Error::config(format!("duplicate {what} {s:?}")));
        }
    }
    Ok(())
}
