use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::TrainConfig;
use crate::autodiff::{Graph, Var};
use crate::embedding::Embeddings;
use crate::encoder::{embed_batch, gradients, init_params, reward, EncoderParams, ParamVars, StepBatch};
use crate::error::{Error, Result};
use crate::geometry::dot;
use crate::io::write_atomic;
use crate::objectives::tape::{self, PairColumns, PairMeta};
use crate::objectives::Method;
use crate::worlds::{substream, LabeledPair};

/// Learned encoder(s): one shared across tasks, or one per task for BT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "encoders", rename_all = "snake_case")]
pub enum TrainedModel {
    Shared(EncoderParams),
    PerTask(BTreeMap<String, EncoderParams>),
}

impl TrainedModel {
    pub fn encoder_for(&self, task: &str) -> Result<&EncoderParams> {
        match self {
            TrainedModel::Shared(p) => Ok(p),
            TrainedModel::PerTask(m) => m
                .get(task)
                .ok_or_else(|| Error::config(format!("no encoder trained for task {task:?}"))),
        }
    }

    /// Reward of `segment` under `task`.
    pub fn reward<E: Embeddings + ?Sized>(
        &self,
        emb: &E,
        task: &str,
        segment: &crate::encoder::TrajectorySegment,
    ) -> Result<f64> {
        reward(self.encoder_for(task)?, segment, emb.lookup(task)?)
    }

    pub fn checksum(&self) -> String {
        match self {
            TrainedModel::Shared(p) => p.checksum(),
            TrainedModel::PerTask(m) => {
                let joined: Vec<String> = m.iter().map(|(k, p)| format!("{k}={}", p.checksum())).collect();
                crate::io::sha256_hex(joined.join("\n").as_bytes())
            }
        }
    }
}

/// Mean training loss per epoch for one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Task name for per-task encoders, empty for a shared one.
    pub label: String,
    /// Full-dataset loss before the first update.
    pub initial: f64,
    pub epochs: Vec<f64>,
}

impl LossHistory {
    pub fn last(&self) -> f64 {
        self.epochs.last().copied().unwrap_or(self.initial)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: TrainedModel,
    pub history: Vec<LossHistory>,
}

/// Embedding rows resolved once per pair.
struct Resolved<'a> {
    pairs: Vec<&'a LabeledPair>,
    theta: Vec<&'a [f64]>,
    psi: Vec<Option<&'a [f64]>>,
}

fn resolve<'a, E: Embeddings + ?Sized>(
    method: Method,
    pairs: Vec<&'a LabeledPair>,
    emb: &'a E,
) -> Result<Resolved<'a>> {
    let theta = pairs.iter().map(|p| emb.lookup(&p.task)).collect::<Result<Vec<_>>>()?;
    let psi = pairs
        .iter()
        .map(|p| match (&p.reason, method.uses_reasons()) {
            (Some(r), true) => emb.lookup(r).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Resolved { pairs, theta, psi })
}

/// Coefficient rows: the task embedding, the reason-aligned part of it, and
/// the reason embedding (zero rows where there is no reason).
struct Coeffs {
    theta: Array2<f64>,
    along: Array2<f64>,
    psi: Array2<f64>,
}

fn coeffs(r: &Resolved, idx: &[usize], dim: usize) -> Coeffs {
    let n = idx.len();
    let mut theta = Array2::zeros((n, dim));
    let mut along = Array2::zeros((n, dim));
    let mut psi = Array2::zeros((n, dim));
    for (row, &i) in idx.iter().enumerate() {
        let t = r.theta[i];
        theta.row_mut(row).assign(&ndarray::aview1(t));
        if let Some(p) = r.psi[i] {
            let c = dot(p, t) / dot(p, p);
            for k in 0..dim {
                along[[row, k]] = c * p[k];
                psi[[row, k]] = p[k];
            }
        }
    }
    Coeffs { theta, along, psi }
}

fn batch_loss(
    g: &mut Graph,
    pv: &ParamVars,
    cfg: &TrainConfig,
    r: &Resolved,
    idx: &[usize],
    step_dim: usize,
    dim: usize,
) -> Result<Var> {
    let method = cfg.method;
    let discount = cfg.discount;
    let a = StepBatch::new(idx.iter().map(|&i| &r.pairs[i].seg_a), step_dim)?;
    let b = StepBatch::new(idx.iter().map(|&i| &r.pairs[i].seg_b), step_dim)?;
    let phi_a = embed_batch(g, pv, &a, discount);
    let phi_b = embed_batch(g, pv, &b, discount);
    let c = coeffs(r, idx, dim);
    let mut cols = PairColumns {
        reward_a: g.row_dot(phi_a, c.theta.clone()),
        reward_b: g.row_dot(phi_b, c.theta),
        parallel_a: None,
        parallel_b: None,
        score_a: None,
        score_b: None,
    };
    match method {
        Method::RecoupleEc | Method::RecoupleIc => {
            cols.parallel_a = Some(g.row_dot(phi_a, c.along.clone()));
            cols.parallel_b = Some(g.row_dot(phi_b, c.along));
        }
        Method::Rfp => {
            cols.score_a = Some(g.row_dot(phi_a, c.psi.clone()));
            cols.score_b = Some(g.row_dot(phi_b, c.psi));
        }
        Method::Bt | Method::BtMulti => {}
    }
    let meta = PairMeta {
        labels: idx.iter().map(|&i| r.pairs[i].y).collect(),
        has_reason: idx.iter().map(|&i| r.psi[i].is_some()).collect(),
    };
    tape::total_loss(g, method, &cols, &meta, &cfg.weights)
}

/// Builds the training objective of `cfg.method` over all of `pairs` on `g`.
pub fn objective<E: Embeddings + ?Sized>(
    g: &mut Graph,
    pv: &ParamVars,
    cfg: &TrainConfig,
    pairs: &[LabeledPair],
    emb: &E,
) -> Result<Var> {
    let first = pairs.first().ok_or(Error::Empty("pair batch"))?;
    let r = resolve(cfg.method, pairs.iter().collect(), emb)?;
    let idx: Vec<usize> = (0..pairs.len()).collect();
    batch_loss(g, pv, cfg, &r, &idx, first.seg_a.step_dim(), emb.dim())
}

fn dataset_loss(params: &EncoderParams, cfg: &TrainConfig, r: &Resolved, step_dim: usize, dim: usize) -> Result<f64> {
    let n = r.pairs.len();
    let mut total = 0.0;
    for chunk in (0..n).collect::<Vec<_>>().chunks(cfg.batch_size.max(256)) {
        let mut g = Graph::new();
        let pv = params.to_graph(&mut g);
        let l = batch_loss(&mut g, &pv, cfg, r, chunk, step_dim, dim)?;
        total += g.scalar(l) * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

fn fit(
    cfg: &TrainConfig,
    r: &Resolved,
    label: &str,
    step_dim: usize,
    dim: usize,
) -> Result<(EncoderParams, LossHistory)> {
    let mut params = init_params(cfg.seed, &cfg.architecture(step_dim, dim))?;
    let initial = dataset_loss(&params, cfg, r, step_dim, dim)?;
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
    let mut rng = substream(cfg.seed, &format!("shuffle/{label}"), &[]);
    let mut order: Vec<usize> = (0..r.pairs.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (value, grads) =
                gradients(&params, |g, pv| batch_loss(g, pv, cfg, r, idx, step_dim, dim)).map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged {
                        epoch,
                        batch,
                        value: f64::NAN,
                    },
                    other => other,
                })?;
            if grads.layers.iter().any(|l| l.weights.iter().chain(&l.bias).any(|x| !x.is_finite())) {
                return Err(Error::Diverged { epoch, batch, value });
            }
            adam.step(&mut params, &grads);
            if params.flat().iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged { epoch, batch, value });
            }
            sum += value * idx.len() as f64;
        }
        epochs.push(sum / r.pairs.len() as f64);
    }
    Ok((
        params,
        LossHistory {
            label: label.to_string(),
            initial,
            epochs,
        },
    ))
}

/// Trains the configured method on `pairs`. All task (and, for
/// rationale-aware methods, reason) strings are resolved before the first
/// update; BT and BT-Multi never look up reasons.
pub fn train<E: Embeddings + ?Sized>(cfg: &TrainConfig, pairs: &[LabeledPair], emb: &E) -> Result<TrainOutput> {
    cfg.validate()?;
    let first = pairs.first().ok_or(Error::Empty("training pairs"))?;
    let step_dim = first.seg_a.step_dim();
    let dim = emb.dim();
    if cfg.method == Method::Bt {
        let mut by_task: BTreeMap<&str, Vec<&LabeledPair>> = BTreeMap::new();
        for p in pairs {
            by_task.entry(p.task.as_str()).or_default().push(p);
        }
        let resolved = by_task
            .into_iter()
            .map(|(t, ps)| Ok((t, resolve(cfg.method, ps, emb)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut models = BTreeMap::new();
        let mut history = Vec::new();
        for (task, r) in &resolved {
            let (p, h) = fit(cfg, r, task, step_dim, dim)?;
            models.insert(task.to_string(), p);
            history.push(h);
        }
        return Ok(TrainOutput {
            model: TrainedModel::PerTask(models),
            history,
        });
    }
    let r = resolve(cfg.method, pairs.iter().collect(), emb)?;
    let (p, h) = fit(cfg, &r, "", step_dim, dim)?;
    Ok(TrainOutput {
        model: TrainedModel::Shared(p),
        history: vec![h],
    })
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_vec_pretty(model)?;
    write_atomic(path, &json)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{AccessLog, EmbeddingTable};
    use crate::encoder::TrajectorySegment;
    use crate::objectives::{loss_reason, LossWeights, PairEval};
    use crate::worlds::Split;

    fn table() -> EmbeddingTable {
        EmbeddingTable::from_entries(
            2,
            "test",
            false,
            vec![
                ("t".to_string(), vec![1.0, 1.0]),
                ("why".to_string(), vec![1.0, 0.0]),
            ],
        )
        .unwrap()
    }

    /// Pairs whose preferred segment has the larger first feature.
    fn separable(n: usize) -> Vec<LabeledPair> {
        (0..n)
            .map(|i| {
                let hi = 0.5 + 0.1 * i as f64;
                let lo = -hi;
                let noise = if i % 2 == 0 { 0.3 } else { -0.3 };
                let seg = |x: f64| TrajectorySegment::new(vec![vec![x, noise]], "t").unwrap();
                let y = (i % 2) as u8;
                let (a, b) = if y == 1 { (hi, lo) } else { (lo, hi) };
                LabeledPair {
                    seg_a: seg(a),
                    seg_b: seg(b),
                    y,
                    task: "t".into(),
                    reason: Some("why".into()),
                    split: Split::Train,
                    totals: None,
                }
            })
            .collect()
    }

    fn small(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            hidden: vec![8],
            epochs: 200,
            batch_size: 4,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn reason_loss_drops_on_separable_pairs() {
        let pairs = separable(8);
        let emb = table();
        let mut cfg = small(Method::RecoupleEc);
        cfg.weights = LossWeights {
            lambda_ratio: 0.0,
            lambda_eq: 0.0,
            ..LossWeights::default()
        };
        let out = train(&cfg, &pairs, &emb).unwrap();
        let TrainedModel::Shared(p) = &out.model else { panic!() };
        let evals: Vec<PairEval> = pairs
            .iter()
            .map(|pr| {
                let theta = emb.lookup("t").unwrap();
                let psi = emb.lookup("why").unwrap();
                let da = crate::encoder::decomposed_reward(p, &pr.seg_a, theta, psi).unwrap();
                let db = crate::encoder::decomposed_reward(p, &pr.seg_b, theta, psi).unwrap();
                PairEval::split(
                    da.reward_parallel,
                    da.reward_perpendicular,
                    db.reward_parallel,
                    db.reward_perpendicular,
                    pr.y,
                )
            })
            .collect();
        assert!(loss_reason(&evals).unwrap() < 0.1);
        assert!(out.history[0].last() <= out.history[0].initial);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let pairs = separable(8);
        let emb = table();
        let mut cfg = small(Method::RecoupleIc);
        cfg.epochs = 20;
        let a = train(&cfg, &pairs, &emb).unwrap();
        let b = train(&cfg, &pairs, &emb).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        cfg.seed = 1;
        let c = train(&cfg, &pairs, &emb).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn reasonless_methods_never_read_reasons() {
        let pairs = separable(8);
        let emb = table();
        for method in [Method::Bt, Method::BtMulti] {
            let log = AccessLog::new(&emb);
            let mut cfg = small(method);
            cfg.epochs = 2;
            train(&cfg, &pairs, &log).unwrap();
            assert!(!log.accessed().contains("why"), "{method}");
        }
        let log = AccessLog::new(&emb);
        let mut cfg = small(Method::Rfp);
        cfg.epochs = 2;
        train(&cfg, &pairs, &log).unwrap();
        assert!(log.accessed().contains("why"));
    }

    #[test]
    fn unresolvable_strings_fail_before_training() {
        let mut pairs = separable(4);
        pairs[3].reason = Some("unknown".into());
        let cfg = small(Method::RecoupleEc);
        assert!(matches!(
            train(&cfg, &pairs, &table()),
            Err(Error::MissingEmbedding(_))
        ));
        let cfg = small(Method::BtMulti);
        assert!(train(&cfg, &pairs, &table()).is_ok());
    }

    #[test]
    fn bt_trains_one_encoder_per_task() {
        let mut pairs = separable(8);
        for p in pairs.iter_mut().take(4) {
            p.task = "u".into();
        }
        let emb = EmbeddingTable::from_entries(
            2,
            "test",
            false,
            vec![("t".to_string(), vec![1.0, 1.0]), ("u".to_string(), vec![0.0, 1.0])],
        )
        .unwrap();
        let mut cfg = small(Method::Bt);
        cfg.epochs = 3;
        let out = train(&cfg, &pairs, &emb).unwrap();
        let TrainedModel::PerTask(m) = &out.model else { panic!() };
        assert_eq!(m.keys().collect::<Vec<_>>(), ["t", "u"]);
        assert_eq!(out.history.len(), 2);
    }

    #[test]
    fn divergence_reports_the_batch() {
        let pairs = separable(8);
        let mut cfg = small(Method::BtMulti);
        cfg.learning_rate = f64::MAX;
        cfg.epochs = 50;
        match train(&cfg, &pairs, &table()) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn model_round_trips_through_json() {
        let pairs = separable(8);
        let mut cfg = small(Method::Bt);
        cfg.epochs = 2;
        let out = train(&cfg, &pairs, &table()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&out.model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), out.model);
    }
}
