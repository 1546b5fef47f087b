//! Trajectory encoder: a per-step MLP whose outputs are summed (optionally
//! discounted) over the segment, and the task-conditioned reward built on it.

use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::{check_dim, check_finite, dot, project_decompose};
use crate::io::write_atomic;

/// A fixed-length slice of per-step state–action features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub steps: Vec<Vec<f64>>,
    pub source_task: String,
}

impl TrajectorySegment {
    pub fn new(steps: Vec<Vec<f64>>, source_task: impl Into<String>) -> Result<Self> {
        let seg = TrajectorySegment {
            steps,
            source_task: source_task.into(),
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn step_dim(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.steps.first() else {
            return Err(Error::Empty("trajectory segment"));
        };
        for s in &self.steps {
            check_dim(first.len(), s.len())?;
            check_finite(s, "step features")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Per-step weight `discount^t` in the trajectory sum.
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_discount() -> f64 {
    1.0
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden,
            output_dim,
            discount: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("encoder layer widths must be positive"));
        }
        if !(self.discount.is_finite() && self.discount > 0.0) {
            return Err(Error::config("discount must be positive and finite"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }
}

/// One affine layer; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(inp: usize, out: usize) -> Self {
        Layer {
            weights: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CheckpointFile", into = "CheckpointFile")]
pub struct EncoderParams {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

/// Fan-in scaled uniform weights, zero biases.
pub fn init_params(seed: u64, arch: &Architecture) -> Result<EncoderParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = arch.widths();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (inp, out) = (w[0], w[1]);
            let bound = 1.0 / (inp as f64).sqrt();
            let weights = Array2::from_shape_fn((out, inp), |_| rng.random_range(-bound..bound));
            Layer {
                weights,
                bias: Array1::zeros(out),
            }
        })
        .collect();
    Ok(EncoderParams {
        arch: arch.clone(),
        layers,
    })
}

impl EncoderParams {
    pub fn from_layers(arch: Architecture, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        let widths = arch.widths();
        if layers.len() != widths.len() - 1 {
            return Err(Error::config(format!(
                "expected {} layers, got {}",
                widths.len() - 1,
                layers.len()
            )));
        }
        for (l, w) in layers.iter().zip(widths.windows(2)) {
            if l.weights.dim() != (w[1], w[0]) || l.bias.len() != w[1] {
                return Err(Error::config("layer shape does not match architecture"));
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("encoder parameters"));
            }
        }
        Ok(EncoderParams { arch, layers })
    }

    /// All-zero parameters for the given architecture.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch.widths().windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(EncoderParams {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Weights then bias of each layer, in layer order.
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        check_dim(self.num_params(), values.len())?;
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap_or_default());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap_or_default());
        }
        Ok(())
    }

    /// Hex SHA-256 over the parameter bits.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for x in self.flat() {
            h.update(x.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Registers every weight and bias as a leaf of `g`.
    pub fn to_graph(&self, g: &mut Graph) -> ParamVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = g.leaf(l.weights.clone());
                let b = g.leaf(l.bias.clone().insert_axis(ndarray::Axis(0)));
                (w, b)
            })
            .collect();
        ParamVars { layers }
    }
}

/// Graph handles for the parameters of one encoder.
#[derive(Debug, Clone)]
pub struct ParamVars {
    layers: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn weight(&self, layer: usize) -> Var {
        self.layers[layer].0
    }

    pub fn bias(&self, layer: usize) -> Var {
        self.layers[layer].1
    }

    /// Per-step embeddings for the rows of `x` (`n × input_dim`).
    pub fn forward_steps(&self, g: &mut Graph, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul_t(h, *w);
            h = g.add_row(z, *b);
            if i < last {
                h = g.tanh(h);
            }
        }
        h
    }
}

/// Segments stacked into one step matrix plus the row range of each segment.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub rows: Array2<f64>,
    pub ranges: Vec<Range<usize>>,
}

impl StepBatch {
    pub fn new<'a, I>(segments: I, step_dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TrajectorySegment>,
    {
        let mut data = Vec::new();
        let mut ranges = Vec::new();
        let mut n = 0;
        for seg in segments {
            if seg.steps.is_empty() {
                return Err(Error::Empty("trajectory segment"));
            }
            let start = n;
            for s in &seg.steps {
                check_dim(step_dim, s.len())?;
                data.extend_from_slice(s);
                n += 1;
            }
            ranges.push(start..n);
        }
        let rows = Array2::from_shape_vec((n, step_dim), data).map_err(|_| Error::Empty("step batch"))?;
        Ok(StepBatch { rows, ranges })
    }
}

/// Trajectory embeddings (one row per segment) for a stacked batch.
pub fn embed_batch(g: &mut Graph, pv: &ParamVars, batch: &StepBatch, discount: f64) -> Var {
    let x = g.constant(batch.rows.clone());
    let e = pv.forward_steps(g, x);
    g.segment_sum(e, batch.ranges.clone(), discount)
}

fn check_step(params: &EncoderParams, step: &[f64]) -> Result<()> {
    check_dim(params.arch.input_dim, step.len())?;
    check_finite(step, "step features")
}

/// Forward pass of the per-step MLP: tanh on hidden layers, linear output.
pub fn encode_step(params: &EncoderParams, step: &[f64]) -> Result<Vec<f64>> {
    check_step(params, step)?;
    let last = params.layers.len() - 1;
    let mut h = step.to_vec();
    for (i, l) in params.layers.iter().enumerate() {
        let mut z: Vec<f64> = l
            .weights
            .rows()
            .into_iter()
            .zip(l.bias.iter())
            .map(|(row, b)| row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        if i < last {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        h = z;
    }
    Ok(h)
}

/// `φ(τ) = Σ_t discount^t · e(s_t, a_t)`.
pub fn encode_trajectory(params: &EncoderParams, segment: &TrajectorySegment) -> Result<Vec<f64>> {
    if segment.steps.is_empty() {
        return Err(Error::Empty("trajectory segment"));
    }
    let mut phi = vec![0.0; params.output_dim()];
    let mut w = 1.0;
    for step in &segment.steps {
        let e = encode_step(params, step)?;
        phi.iter_mut().zip(&e).for_each(|(p, x)| *p += w * x);
        w *= params.arch.discount;
    }
    Ok(phi)
}

/// `r(τ, task) = φ(τ)ᵀθ`.
pub fn reward(params: &EncoderParams, segment: &TrajectorySegment, theta: &[f64]) -> Result<f64> {
    check_dim(params.output_dim(), theta.len())?;
    let phi = encode_trajectory(params, segment)?;
    Ok(dot(&phi, theta))
}

/// Trajectory embedding split along a rationale axis, with the matching
/// split of the task reward.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardDecomposition {
    pub phi: Vec<f64>,
    pub phi_parallel: Vec<f64>,
    pub phi_perpendicular: Vec<f64>,
    pub reward: f64,
    pub reward_parallel: f64,
    pub reward_perpendicular: f64,
}

pub fn decomposed_reward(
    params: &EncoderParams,
    segment: &TrajectorySegment,
    theta: &[f64],
    psi: &[f64],
) -> Result<RewardDecomposition> {
    check_dim(params.output_dim(), theta.len())?;
    let phi = encode_trajectory(params, segment)?;
    let parts = project_decompose(&phi, psi)?;
    let reward_parallel = dot(&parts.parallel, theta);
    let reward_perpendicular = dot(&parts.perpendicular, theta);
    Ok(RewardDecomposition {
        reward: reward_parallel + reward_perpendicular,
        phi,
        phi_parallel: parts.parallel,
        phi_perpendicular: parts.perpendicular,
        reward_parallel,
        reward_perpendicular,
    })
}

/// Exact gradient of a scalar loss built on `g` from the encoder parameters.
///
/// The closure receives a fresh graph with every parameter registered as a
/// leaf and returns the `1 × 1` loss node.
pub fn gradients<F>(params: &EncoderParams, loss: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&mut Graph, &ParamVars) -> Result<Var>,
{
    let mut g = Graph::new();
    let pv = params.to_graph(&mut g);
    let out = loss(&mut g, &pv)?;
    let value = g.scalar(out);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let mut adj = g.backward(out);
    let layers = pv
        .layers
        .iter()
        .map(|(w, b)| {
            let weights = adj.take(*w);
            let bias = adj.take(*b).row(0).to_owned();
            Layer { weights, bias }
        })
        .collect();
    Ok((value, Gradients { layers }))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    architecture: Architecture,
    layers: Vec<LayerFile>,
}

impl From<EncoderParams> for CheckpointFile {
    fn from(p: EncoderParams) -> Self {
        CheckpointFile {
            architecture: p.arch,
            layers: p
                .layers
                .into_iter()
                .map(|l| LayerFile {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<CheckpointFile> for EncoderParams {
    type Error = Error;

    fn try_from(file: CheckpointFile) -> Result<Self> {
        let layers = file
            .layers
            .into_iter()
            .map(|l| {
                let weights = Array2::from_shape_vec((l.rows, l.cols), l.weights)
                    .map_err(|_| Error::config("checkpoint weight array has wrong length"))?;
                Ok(Layer {
                    weights,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EncoderParams::from_layers(file.architecture, layers)
    }
}

pub fn save_checkpoint(params: &EncoderParams, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = serde_json::to_vec(params)?;
    bytes.push(b'\n');
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalized;
    use ndarray::Array2;

    fn random_segment(rng: &mut ChaCha8Rng, h: usize, dim: usize) -> TrajectorySegment {
        let steps = (0..h)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        TrajectorySegment::new(steps, "t").unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let arch = Architecture::new(5, vec![4, 3], 6);
        let p = EncoderParams::zeros(&arch).unwrap();
        assert_eq!(encode_step(&p, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn identity_linear_layer_is_identity() {
        let arch = Architecture::new(3, vec![], 3);
        let layer = Layer {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let p = EncoderParams::from_layers(arch, vec![layer]).unwrap();
        assert_eq!(encode_step(&p, &[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
    }

    /// Same arithmetic written independently against the flat parameter vector.
    fn reference_forward(flat: &[f64], widths: &[usize], x: &[f64]) -> Vec<f64> {
        let mut off = 0;
        let mut h = x.to_vec();
        for (li, w) in widths.windows(2).enumerate() {
            let (inp, out) = (w[0], w[1]);
            let wts = &flat[off..off + inp * out];
            let bias = &flat[off + inp * out..off + inp * out + out];
            off += inp * out + out;
            let mut z = vec![0.0; out];
            for o in 0..out {
                let mut acc = bias[o];
                for i in 0..inp {
                    acc += wts[o * inp + i] * h[i];
                }
                z[o] = if li + 2 < widths.len() { acc.tanh() } else { acc };
            }
            h = z;
        }
        h
    }

    #[test]
    fn forward_matches_reference_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let arch = Architecture::new(7, vec![16, 16], 5);
        let p = init_params(9, &arch).unwrap();
        let widths = [7, 16, 16, 5];
        for _ in 0..20 {
            let x = random_vec(&mut rng, 7);
            let a = encode_step(&p, &x).unwrap();
            let b = reference_forward(&p.flat(), &widths, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn graph_forward_matches_scalar_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = Architecture {
            discount: 0.9,
            ..Architecture::new(4, vec![8], 6)
        };
        let p = init_params(1, &arch).unwrap();
        let segs: Vec<_> = (0..3).map(|i| random_segment(&mut rng, 2 + i, 4)).collect();
        let batch = StepBatch::new(&segs, 4).unwrap();
        let mut g = Graph::new();
        let pv = p.to_graph(&mut g);
        let phi = embed_batch(&mut g, &pv, &batch, 0.9);
        for (i, s) in segs.iter().enumerate() {
            let direct = encode_trajectory(&p, s).unwrap();
            for (k, d) in direct.iter().enumerate() {
                assert!((g.value(phi)[[i, k]] - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trajectory_aggregation_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = init_params(2, &Architecture::new(3, vec![8, 8], 4)).unwrap();
        let step = random_vec(&mut rng, 3);
        let single = TrajectorySegment::new(vec![step.clone()], "t").unwrap();
        let double = TrajectorySegment::new(vec![step.clone(), step.clone()], "t").unwrap();
        let e = encode_step(&p, &step).unwrap();
        assert_eq!(encode_trajectory(&p, &single).unwrap(), e);
        let two = encode_trajectory(&p, &double).unwrap();
        for (a, b) in two.iter().zip(&e) {
            assert_eq!(*a, 2.0 * b);
        }
        let seg = random_segment(&mut rng, 4, 3);
        let mut rev = seg.clone();
        rev.steps.reverse();
        let (a, b) = (encode_trajectory(&p, &seg).unwrap(), encode_trajectory(&p, &rev).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        let empty = TrajectorySegment {
            steps: vec![],
            source_task: "t".into(),
        };
        assert!(encode_trajectory(&p, &empty).is_err());
    }

    #[test]
    fn reward_is_linear_in_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = init_params(3, &Architecture::new(3, vec![8], 4)).unwrap();
        let seg = random_segment(&mut rng, 3, 3);
        assert_eq!(reward(&p, &seg, &[0.0; 4]).unwrap(), 0.0);
        let phi = encode_trajectory(&p, &seg).unwrap();
        assert_eq!(reward(&p, &seg, &[0.0, 0.0, 1.0, 0.0]).unwrap(), phi[2]);
        let t1 = random_vec(&mut rng, 4);
        let t2 = random_vec(&mut rng, 4);
        let sum: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
        let lhs = reward(&p, &seg, &sum).unwrap();
        let rhs = reward(&p, &seg, &t1).unwrap() + reward(&p, &seg, &t2).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(matches!(reward(&p, &seg, &[1.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn decomposition_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = init_params(4, &Architecture::new(3, vec![8], 4)).unwrap();
        for _ in 0..50 {
            let seg = random_segment(&mut rng, 3, 3);
            let theta = random_vec(&mut rng, 4);
            let psi = random_vec(&mut rng, 4);
            let d = decomposed_reward(&p, &seg, &theta, &psi).unwrap();
            let r = reward(&p, &seg, &theta).unwrap();
            assert!((d.reward_parallel + d.reward_perpendicular - r).abs() <= 1e-10);
            assert!((d.reward - r).abs() <= 1e-10);
        }
        // psi equal to a unit theta: everything is reason-aligned.
        let seg = random_segment(&mut rng, 3, 3);
        let theta = normalized(&random_vec(&mut rng, 4)).unwrap();
        let d = decomposed_reward(&p, &seg, &theta, &theta).unwrap();
        let phi = encode_trajectory(&p, &seg).unwrap();
        assert!((d.reward_parallel - dot(&phi, &theta)).abs() < 1e-12);
        assert!(d.reward_perpendicular.abs() < 1e-12);
        assert!(matches!(
            decomposed_reward(&p, &seg, &theta, &[0.0; 4]),
            Err(Error::DegenerateAxis)
        ));
    }

    #[test]
    fn doubly_orthogonal_reward_vanishes() {
        // Linear encoder mapping the single step feature onto e_0.
        let arch = Architecture::new(1, vec![], 3);
        let layer = Layer {
            weights: Array2::from_shape_vec((3, 1), vec![1.0, 0.0, 0.0]).unwrap(),
            bias: Array1::zeros(3),
        };
        let p = EncoderParams::from_layers(arch, vec![layer]).unwrap();
        let seg = TrajectorySegment::new(vec![vec![2.0], vec![1.5]], "t").unwrap();
        let d = decomposed_reward(&p, &seg, &[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(d.reward_parallel, 0.0);
        assert_eq!(d.reward_perpendicular, 0.0);
        assert_eq!(d.reward, 0.0);
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let arch = Architecture::new(4, vec![8, 8], 3);
        assert_eq!(init_params(1, &arch).unwrap(), init_params(1, &arch).unwrap());
        assert_ne!(init_params(1, &arch).unwrap(), init_params(2, &arch).unwrap());
        let linear = init_params(1, &Architecture::new(4, vec![], 3)).unwrap();
        assert_eq!(linear.layers().len(), 1);
        assert_eq!(linear.layers()[0].weights.dim(), (3, 4));
        assert!(linear.layers()[0].bias.iter().all(|b| *b == 0.0));
        assert!(init_params(1, &Architecture::new(4, vec![0], 3)).is_err());
    }

    #[test]
    fn gradient_of_constant_and_single_parameter() {
        let p = init_params(5, &Architecture::new(3, vec![4], 2)).unwrap();
        let (v, g) = gradients(&p, |g, _| Ok(g.constant_scalar(3.5))).unwrap();
        assert_eq!(v, 3.5);
        assert!(g.flat().iter().all(|x| *x == 0.0));

        let (v, g) = gradients(&p, |g, pv| Ok(g.element(pv.weight(1), 1, 2))).unwrap();
        assert_eq!(v, p.layers()[1].weights[[1, 2]]);
        let flat = g.flat();
        // Layer 0 has 4x3 weights + 4 biases; layer 1 weights are 2x4 row-major.
        let idx = 12 + 4 + 4 + 2;
        assert_eq!(flat[idx], 1.0);
        assert_eq!(flat.iter().filter(|x| **x != 0.0).count(), 1);

        let err = gradients(&p, |g, _| Ok(g.constant_scalar(f64::NAN))).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn checkpoint_round_trip_reproduces_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = init_params(6, &Architecture::new(5, vec![16, 16], 8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        let seg = random_segment(&mut rng, 4, 5);
        let a = encode_trajectory(&p, &seg).unwrap();
        let b = encode_trajectory(&q, &seg).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
    }
}
