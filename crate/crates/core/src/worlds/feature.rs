//! Component-decomposed rewards. Each task weights a shared set of reward
//! components; per-step component features are monotone progress curves
//! whose speed drops with the trajectory's optimality noise. Components a
//! task ignores still move, at an independently drawn level, the way play
//! data from other behaviors would. Rationales are sampled from a softmax
//! over the weighted component advantages.
//!
//! Step features are the component values in config order followed by
//! `nuisance_dim` Gaussian dims.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_distinct, substream, LabeledPair, Split};
use crate::encoder::TrajectorySegment;
use crate::error::{Error, Result};
use crate::geometry::{dot, softmax};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTask {
    pub task: String,
    /// Weight per component name; absent components weigh zero.
    pub weights: BTreeMap<String, f64>,
}

/// Task strings `[a, b, c]` whose weights compose the held-out task as
/// `w_held_out = w_c − (w_b − w_a)`.
pub type Composition = [String; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureWorldConfig {
    pub components: Vec<Component>,
    pub tasks: Vec<FeatureTask>,
    /// Task that gets validation pairs only.
    pub held_out: Option<String>,
    pub composition: Option<Composition>,
    pub horizon: usize,
    pub optimality_levels: Vec<f64>,
    pub nuisance_dim: usize,
    pub noise_scale: f64,
    pub seed: u64,
    pub pairs_per_task: usize,
    pub val_pairs_per_task: usize,
    /// Whether zero-weight components progress (as distractors) or stay at 0.
    pub inactive_progress: bool,
    /// Probability that a weighted component ignores the segment's
    /// optimality level and draws its own.
    pub component_mixing: f64,
}

fn component(name: &str, rationale: &str) -> Component {
    Component {
        name: name.to_string(),
        rationale: rationale.to_string(),
    }
}

fn feature_task(task: &str, weights: &[(&str, f64)]) -> FeatureTask {
    FeatureTask {
        task: task.to_string(),
        weights: weights.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

pub const PUSH: &str = "make contact and push puck to goal";
pub const PUSH_WALL: &str = "make contact, bypass wall via waypoint, and push puck to goal";
pub const PICK_PLACE_WALL: &str = "pick up puck, use waypoint to bypass wall, and place it on goal";
pub const PICK_PLACE: &str = "pick up puck, lift it, and place it on goal";

impl Default for FeatureWorldConfig {
    fn default() -> Self {
        let components = vec![
            component("contact", "makes contact with puck sooner"),
            component("push_progress", "pushes puck closer to goal"),
            component("waypoint", "guides puck past wall"),
            component("grasp", "maintains firm grip on puck"),
            component("lift", "lifts puck cleanly"),
            component("carry", "carries puck toward goal while lifted"),
            component("goal", "finishes at goal spot"),
        ];
        let tasks = vec![
            feature_task(PUSH, &[("contact", 1.0), ("push_progress", 1.5), ("goal", 2.0)]),
            feature_task(
                PUSH_WALL,
                &[("contact", 1.0), ("push_progress", 1.5), ("waypoint", 5.0), ("goal", 2.0)],
            ),
            feature_task(
                PICK_PLACE_WALL,
                &[("grasp", 1.0), ("lift", 1.2), ("carry", 1.5), ("waypoint", 5.0), ("goal", 2.0)],
            ),
            feature_task(PICK_PLACE, &[("grasp", 1.0), ("lift", 1.2), ("carry", 1.5), ("goal", 2.0)]),
        ];
        FeatureWorldConfig {
            components,
            tasks,
            held_out: Some(PICK_PLACE.to_string()),
            composition: Some([PUSH.to_string(), PUSH_WALL.to_string(), PICK_PLACE_WALL.to_string()]),
            horizon: 32,
            optimality_levels: vec![0.1, 0.3, 0.5, 1.0],
            nuisance_dim: 8,
            noise_scale: 0.1,
            seed: 0,
            pairs_per_task: 2000,
            val_pairs_per_task: 100,
            inactive_progress: true,
            component_mixing: 1.0,
        }
    }
}

impl FeatureWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.tasks.is_empty() {
            return Err(Error::config("feature world needs components and tasks"));
        }
        check_distinct(self.components.iter().map(|c| c.name.as_str()), "component name")?;
        check_distinct(self.components.iter().map(|c| c.rationale.as_str()), "rationale")?;
        check_distinct(self.tasks.iter().map(|t| t.task.as_str()), "task string")?;
        for t in &self.tasks {
            for (name, w) in &t.weights {
                if !self.components.iter().any(|c| &c.name == name) {
                    return Err(Error::config(format!("task {:?} weights unknown component {name:?}", t.task)));
                }
                if !w.is_finite() {
                    return Err(Error::config("weights must be finite"));
                }
            }
            if t.weights.values().all(|w| *w == 0.0) {
                return Err(Error::config(format!("task {:?} has an all-zero weight vector", t.task)));
            }
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.optimality_levels.is_empty() || self.optimality_levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::config("optimality levels must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.component_mixing) {
            return Err(Error::config("component_mixing must lie in [0, 1]"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::config("noise_scale must be nonnegative"));
        }
        if let Some(h) = &self.held_out {
            self.task_index(h)?;
        }
        if let Some(c) = &self.composition {
            for t in c {
                self.task_index(t)?;
            }
        }
        Ok(())
    }

    pub fn step_dim(&self) -> usize {
        self.components.len() + self.nuisance_dim
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks.iter().position(|t| t.task == task).ok_or_else(|| Error::Unknown {
            kind: "task",
            name: task.to_string(),
            valid: self.tasks.iter().map(|t| t.task.as_str()).collect::<Vec<_>>().join(", "),
        })
    }

    /// Weight vector of a task in component order.
    pub fn weight_vector(&self, task: &str) -> Result<Vec<f64>> {
        let t = &self.tasks[self.task_index(task)?];
        Ok(self
            .components
            .iter()
            .map(|c| t.weights.get(&c.name).copied().unwrap_or(0.0))
            .collect())
    }

    pub fn training_tasks(&self) -> Vec<&FeatureTask> {
        self.tasks
            .iter()
            .filter(|t| self.held_out.as_deref() != Some(t.task.as_str()))
            .collect()
    }

    /// Largest componentwise violation of the composition identity.
    pub fn composition_error(&self) -> Result<f64> {
        let (Some(held), Some([a, b, c])) = (&self.held_out, &self.composition) else {
            return Err(Error::config("transfer suite needs held_out and composition"));
        };
        let (wa, wb, wc, wh) = (
            self.weight_vector(a)?,
            self.weight_vector(b)?,
            self.weight_vector(c)?,
            self.weight_vector(held)?,
        );
        Ok((0..wa.len())
            .map(|j| (wh[j] - (wc[j] - (wb[j] - wa[j]))).abs())
            .fold(0.0, f64::max))
    }
}

/// One segment of `task` at noise level `optimality` in `[0, 1]`, with the
/// per-component sums of its step features.
pub fn gen_featureworld_trajectory<R: Rng>(
    cfg: &FeatureWorldConfig,
    task: &str,
    optimality: f64,
    rng: &mut R,
) -> Result<(TrajectorySegment, Vec<f64>)> {
    let w = cfg.weight_vector(task)?;
    let h = cfg.horizon;
    let n = cfg.components.len();
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut steps = vec![vec![0.0; cfg.step_dim()]; h];
    let mut totals = vec![0.0; n];
    for j in 0..n {
        let start = rng.random_range(0.0..0.4);
        let speed = rng.random_range(0.3..0.9) / h as f64;
        let own = cfg.optimality_levels[rng.random_range(0..cfg.optimality_levels.len())];
        let mixed = rng.random_bool(cfg.component_mixing);
        let (moves, noise) = match (w[j] != 0.0, cfg.inactive_progress) {
            (true, _) => (true, if mixed { own } else { optimality }),
            (false, true) => (true, own),
            (false, false) => (false, 0.0),
        };
        let mut level: f64 = start;
        for (t, step) in steps.iter_mut().enumerate() {
            let jitter: f64 = rng.random_range(-0.5..0.5);
            if moves {
                if t > 0 {
                    level = (level + (1.0 - noise) * speed * (1.0 + jitter)).min(1.0);
                }
                step[j] = level;
            }
            totals[j] += step[j];
        }
    }
    for step in &mut steps {
        for v in &mut step[n..] {
            *v = cfg.noise_scale * gauss.sample(rng);
        }
    }
    Ok((
        TrajectorySegment {
            steps,
            source_task: task.to_string(),
        },
        totals,
    ))
}

/// `1` iff `wᵀtotals_a > wᵀtotals_b`; exact ties are a fair coin.
pub fn label_preference<R: Rng>(totals_a: &[f64], totals_b: &[f64], w: &[f64], rng: &mut R) -> Result<u8> {
    if totals_a.len() != w.len() || totals_b.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            actual: totals_a.len().min(totals_b.len()),
        });
    }
    let (ra, rb) = (dot(w, totals_a), dot(w, totals_b));
    Ok(if ra > rb {
        1
    } else if ra < rb {
        0
    } else {
        u8::from(rng.random_bool(0.5))
    })
}

/// Index of the component cited as the reason for preferring the winner,
/// drawn from a softmax over `Δ_j = w_j (f_j(winner) − f_j(loser))`
/// restricted to `active`.
pub fn sample_rationale<R: Rng>(
    totals_a: &[f64],
    totals_b: &[f64],
    w: &[f64],
    y: u8,
    active: &[usize],
    rng: &mut R,
) -> Result<usize> {
    if active.is_empty() {
        return Err(Error::Empty("active components"));
    }
    let (win, lose) = if y == 1 { (totals_a, totals_b) } else { (totals_b, totals_a) };
    let delta: Vec<f64> = active.iter().map(|&j| w[j] * (win[j] - lose[j])).collect();
    let probs = softmax(&delta)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(active[k]);
        }
    }
    Ok(*active.last().expect("nonempty"))
}

fn gen_task_pairs(cfg: &FeatureWorldConfig, task: &str, n: usize, split: Split) -> Result<Vec<LabeledPair>> {
    let ti = cfg.task_index(task)?;
    let w = cfg.weight_vector(task)?;
    let active: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
    let tag = format!("feature/{}", split.name());
    let levels = &cfg.optimality_levels;
    (0..n)
        .map(|j| {
            let mut rng = substream(cfg.seed, &tag, &[ti as u64, j as u64]);
            let la = levels[rng.random_range(0..levels.len())];
            let lb = levels[rng.random_range(0..levels.len())];
            let (seg_a, ta) = gen_featureworld_trajectory(cfg, task, la, &mut rng)?;
            let (seg_b, tb) = gen_featureworld_trajectory(cfg, task, lb, &mut rng)?;
            let y = label_preference(&ta, &tb, &w, &mut rng)?;
            let k = sample_rationale(&ta, &tb, &w, y, &active, &mut rng)?;
            Ok(LabeledPair {
                seg_a,
                seg_b,
                y,
                task: task.to_string(),
                reason: Some(cfg.components[k].rationale.clone()),
                split,
                totals: Some((ta, tb)),
            })
        })
        .collect()
}

/// Training tasks for `Train` and `ValId`; the held-out task for `ValOod`.
pub fn gen_split(cfg: &FeatureWorldConfig, split: Split) -> Result<Vec<LabeledPair>> {
    cfg.validate()?;
    let mut out = Vec::new();
    match split {
        Split::Train | Split::ValId => {
            let n = if split == Split::Train {
                cfg.pairs_per_task
            } else {
                cfg.val_pairs_per_task
            };
            for t in cfg.training_tasks() {
                out.extend(gen_task_pairs(cfg, &t.task, n, split)?);
            }
        }
        Split::ValOod => {
            if let Some(h) = &cfg.held_out {
                out.extend(gen_task_pairs(cfg, h, cfg.val_pairs_per_task, split)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TransferSuite {
    pub train: Vec<LabeledPair>,
    pub val_train_tasks: Vec<LabeledPair>,
    pub held_out: Vec<LabeledPair>,
    pub held_out_task: String,
}

/// Training pairs for every non-held-out task plus validation pairs for all
/// tasks. Fails if the held-out weights are not the declared composition.
pub fn build_transfer_suite(cfg: &FeatureWorldConfig) -> Result<TransferSuite> {
    cfg.validate()?;
    let err = cfg.composition_error()?;
    if err > 1e-9 {
        return Err(Error::config(format!("held-out weights break the composition identity by {err}")));
    }
    Ok(TransferSuite {
        train: gen_split(cfg, Split::Train)?,
        val_train_tasks: gen_split(cfg, Split::ValId)?,
        held_out: gen_split(cfg, Split::ValOod)?,
        held_out_task: cfg.held_out.clone().expect("checked by composition_error"),
    })
}
