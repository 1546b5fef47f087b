//! Two-cube tabletop scenes. Each task prefers manipulating the larger cube,
//! and during training the larger cube always has one fixed color per task.
//! The OOD split swaps the colors while keeping everything else.
//!
//! Step feature layout (`step_dim = 20 + nuisance_dim`):
//!
//! | offset | width | content |
//! |---|---|---|
//! | 0, 6 | 6 each | slot: red, blue, size, x, y, z |
//! | 12 | 3 | gripper position |
//! | 15 | 3 | gripper velocity |
//! | 18 | 2 | gripper distance to each slot |
//! | 20 | nuisance_dim | Gaussian noise |

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_distinct, substream, LabeledPair, Split};
use crate::encoder::TrajectorySegment;
use crate::error::{Error, Result};

pub const SLOT_WIDTH: usize = 6;
pub const COLOR_RED: usize = 0;
pub const COLOR_BLUE: usize = 1;
pub const SIZE: usize = 2;
pub const POSE: usize = 3;
pub const GRIPPER: usize = 12;
pub const VELOCITY: usize = 15;
pub const DISTANCE: usize = 18;
pub const NUISANCE: usize = 20;

const GRIPPER_NOISE: f64 = 0.01;

pub const CANONICAL_REASON: &str = "the cube is larger";

/// Sixteen rephrasings of the canonical rationale for the diversity runs.
pub const PARAPHRASES: [&str; 16] = [
    "cube is bigger",
    "object is larger",
    "the cube is bigger",
    "the object is bigger",
    "the bigger cube is chosen",
    "larger cube is handled",
    "larger cube is manipulated",
    "larger object is selected",
    "the chosen cube is larger",
    "robot uses the larger cube",
    "robot goes for the bigger object",
    "it moves the bigger cube",
    "the larger block is used",
    "smaller cube is not handled",
    "tinier object is not chosen",
    "smaller object is ignored",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeColor {
    Red,
    Blue,
}

impl CubeColor {
    pub fn other(self) -> Self {
        match self {
            CubeColor::Red => CubeColor::Blue,
            CubeColor::Blue => CubeColor::Red,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Pick,
    Place,
    Push,
    Pull,
}

impl Verb {
    /// Offset of the gripper's approach point from the cube center.
    fn approach_offset(self) -> [f64; 3] {
        match self {
            Verb::Pick => [0.0, 0.0, 0.1],
            Verb::Place => [0.0, 0.0, 0.2],
            Verb::Push => [-0.15, 0.0, 0.0],
            Verb::Pull => [0.15, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundTask {
    pub task: String,
    pub verb: Verb,
    pub larger_color: CubeColor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Larger,
    Smaller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfoundWorldConfig {
    pub tasks: Vec<ConfoundTask>,
    pub horizon: usize,
    pub nuisance_dim: usize,
    pub noise_scale: f64,
    pub seed: u64,
    pub reason: String,
    /// When nonempty, each pair's rationale is drawn uniformly from here.
    pub paraphrases: Vec<String>,
    pub pairs_per_task: usize,
    pub val_pairs_per_task: usize,
    /// Magnitude of the color one-hot features.
    pub color_scale: f64,
    pub larger_size: [f64; 2],
    pub smaller_size: [f64; 2],
}

impl Default for ConfoundWorldConfig {
    fn default() -> Self {
        ConfoundWorldConfig {
            tasks: two_task_suite(),
            horizon: 4,
            nuisance_dim: 8,
            noise_scale: 0.1,
            seed: 0,
            reason: CANONICAL_REASON.to_string(),
            paraphrases: Vec::new(),
            pairs_per_task: 1000,
            val_pairs_per_task: 150,
            color_scale: 2.5,
            larger_size: [0.52, 0.62],
            smaller_size: [0.38, 0.48],
        }
    }
}

fn task(s: &str, verb: Verb, larger_color: CubeColor) -> ConfoundTask {
    ConfoundTask {
        task: s.to_string(),
        verb,
        larger_color,
    }
}

pub fn two_task_suite() -> Vec<ConfoundTask> {
    vec![
        task("pick up larger cube to target sphere", Verb::Pick, CubeColor::Red),
        task("place larger cube in target bin", Verb::Place, CubeColor::Blue),
    ]
}

pub fn four_task_suite() -> Vec<ConfoundTask> {
    let mut t = two_task_suite();
    t.push(task("push larger cube toward target line", Verb::Push, CubeColor::Blue));
    t.push(task("pull larger cube toward green line", Verb::Pull, CubeColor::Red));
    t
}

impl ConfoundWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("confound world needs at least one task"));
        }
        check_distinct(self.tasks.iter().map(|t| t.task.as_str()), "task string")?;
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.reason.is_empty() {
            return Err(Error::config("empty rationale"));
        }
        if !self.paraphrases.is_empty() {
            check_distinct(self.paraphrases.iter().map(String::as_str), "paraphrase")?;
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::config("noise_scale must be nonnegative"));
        }
        if !(self.color_scale.is_finite() && self.color_scale > 0.0) {
            return Err(Error::config("color_scale must be positive"));
        }
        let [ll, lh] = self.larger_size;
        let [sl, sh] = self.smaller_size;
        if !(0.0 < sl && sl < sh && sh <= ll && ll < lh) {
            return Err(Error::config("size ranges must satisfy 0 < smaller < larger"));
        }
        Ok(())
    }

    pub fn step_dim(&self) -> usize {
        NUISANCE + self.nuisance_dim
    }

    pub fn pairs_for(&self, split: Split) -> usize {
        match split {
            Split::Train => self.pairs_per_task,
            _ => self.val_pairs_per_task,
        }
    }

    pub fn reason_strings(&self) -> Vec<String> {
        let mut out = vec![self.reason.clone()];
        out.extend(self.paraphrases.iter().filter(|p| **p != self.reason).cloned());
        out
    }

    fn find_task(&self, name: &str) -> Result<&ConfoundTask> {
        self.tasks.iter().find(|t| t.task == name).ok_or_else(|| Error::Unknown {
            kind: "task",
            name: name.to_string(),
            valid: self.tasks.iter().map(|t| t.task.as_str()).collect::<Vec<_>>().join(", "),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Cube {
    size: f64,
    pos: [f64; 3],
}

/// Everything two trajectories of one pair share.
#[derive(Debug, Clone, Copy)]
struct Scene {
    larger: Cube,
    smaller: Cube,
    gripper: [f64; 3],
    phase: f64,
    rate: f64,
}

fn sample_scene<R: Rng>(cfg: &ConfoundWorldConfig, rng: &mut R) -> Scene {
    let larger_size = rng.random_range(cfg.larger_size[0]..cfg.larger_size[1]);
    let smaller_size = rng.random_range(cfg.smaller_size[0]..cfg.smaller_size[1]);
    let place = |rng: &mut R| -> [f64; 2] { [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)] };
    let a = place(rng);
    let mut b = place(rng);
    // Keep the cubes apart so the two targets are distinguishable.
    while (a[0] - b[0]).hypot(a[1] - b[1]) < 0.5 {
        b = place(rng);
    }
    let gripper = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.8..1.2)];
    Scene {
        larger: Cube {
            size: larger_size,
            pos: [a[0], a[1], larger_size / 2.0],
        },
        smaller: Cube {
            size: smaller_size,
            pos: [b[0], b[1], smaller_size / 2.0],
        },
        gripper,
        phase: rng.random_range(0.0..0.4),
        rate: rng.random_range(0.3..0.5),
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn render<R: Rng>(
    cfg: &ConfoundWorldConfig,
    task: &ConfoundTask,
    scene: &Scene,
    target: Target,
    swapped: bool,
    rng: &mut R,
) -> TrajectorySegment {
    let larger_color = if swapped {
        task.larger_color.other()
    } else {
        task.larger_color
    };
    let cubes = [(scene.larger, larger_color), (scene.smaller, larger_color.other())];
    let goal = match target {
        Target::Larger => scene.larger.pos,
        Target::Smaller => scene.smaller.pos,
    };
    let off = task.verb.approach_offset();
    let approach = [goal[0] + off[0], goal[1] + off[1], goal[2] + off[2]];
    let flip = rng.random_bool(0.5);
    let order = if flip { [1, 0] } else { [0, 1] };
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let h = cfg.horizon as f64;
    let at = |p: f64| -> [f64; 3] {
        let p = p.min(1.0);
        std::array::from_fn(|k| scene.gripper[k] + p * (approach[k] - scene.gripper[k]))
    };
    let mut prev = at(scene.phase);
    let mut steps = Vec::with_capacity(cfg.horizon);
    for t in 0..cfg.horizon {
        let mut g = at(scene.phase + scene.rate * (t as f64 + 1.0) / h);
        for v in &mut g {
            *v += GRIPPER_NOISE * gauss.sample(rng);
        }
        let mut f = vec![0.0; cfg.step_dim()];
        for (slot, &ci) in order.iter().enumerate() {
            let (cube, color) = cubes[ci];
            let base = slot * SLOT_WIDTH;
            let ch = if color == CubeColor::Red { COLOR_RED } else { COLOR_BLUE };
            f[base + ch] = cfg.color_scale;
            f[base + SIZE] = cube.size;
            f[base + POSE..base + POSE + 3].copy_from_slice(&cube.pos);
            f[DISTANCE + slot] = dist(&g, &cube.pos);
        }
        f[GRIPPER..GRIPPER + 3].copy_from_slice(&g);
        for k in 0..3 {
            f[VELOCITY + k] = g[k] - prev[k];
        }
        for v in &mut f[NUISANCE..] {
            *v = cfg.noise_scale * gauss.sample(rng);
        }
        prev = g;
        steps.push(f);
    }
    TrajectorySegment {
        steps,
        source_task: task.task.clone(),
    }
}

/// One segment in a freshly sampled scene.
pub fn gen_confound_trajectory<R: Rng>(
    cfg: &ConfoundWorldConfig,
    task: &str,
    target: Target,
    swapped: bool,
    rng: &mut R,
) -> Result<TrajectorySegment> {
    let t = cfg.find_task(task)?;
    let scene = sample_scene(cfg, rng);
    Ok(render(cfg, t, &scene, target, swapped, rng))
}

/// `n_per_task` minimal-difference pairs per task: both segments share a
/// scene and differ in which cube the gripper heads for. `y` marks the
/// larger-cube segment. Colors are swapped for [`Split::ValOod`].
pub fn gen_confound_pairs(cfg: &ConfoundWorldConfig, n_per_task: usize, split: Split) -> Result<Vec<LabeledPair>> {
    cfg.validate()?;
    if n_per_task == 0 {
        return Err(Error::config("pairs per task must be at least 1"));
    }
    let swapped = split == Split::ValOod;
    let tag = format!("confound/{}", split.name());
    let mut out = Vec::with_capacity(n_per_task * cfg.tasks.len());
    for (ti, task) in cfg.tasks.iter().enumerate() {
        for j in 0..n_per_task {
            let mut rng = substream(cfg.seed, &tag, &[ti as u64, j as u64]);
            let scene = sample_scene(cfg, &mut rng);
            let larger_first = rng.random_bool(0.5);
            let reason = if cfg.paraphrases.is_empty() {
                cfg.reason.clone()
            } else {
                cfg.paraphrases[rng.random_range(0..cfg.paraphrases.len())].clone()
            };
            let big = render(cfg, task, &scene, Target::Larger, swapped, &mut rng);
            let small = render(cfg, task, &scene, Target::Smaller, swapped, &mut rng);
            let (seg_a, seg_b) = if larger_first { (big, small) } else { (small, big) };
            out.push(LabeledPair {
                seg_a,
                seg_b,
                y: u8::from(larger_first),
                task: task.task.clone(),
                reason: Some(reason),
                split,
                totals: None,
            });
        }
    }
    Ok(out)
}
