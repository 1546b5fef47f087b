//! Training objectives: Bradley–Terry cross-entropy, the reason-grounded
//! losses and the per-method composite objectives.
//!
//! Each loss comes in two forms. The functions over [`PairEval`] evaluate
//! plain numbers. The [`tape`] module builds the same quantities on an
//! autodiff graph so the encoder can be differentiated through them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::bt_probability;

/// Probabilities are clamped to at least this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BT")]
    Bt,
    #[serde(rename = "BT-Multi")]
    BtMulti,
    #[serde(rename = "RFP")]
    Rfp,
    #[serde(rename = "ReCouPLe-EC")]
    RecoupleEc,
    #[serde(rename = "ReCouPLe-IC")]
    RecoupleIc,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Bt, Method::BtMulti, Method::Rfp, Method::RecoupleEc, Method::RecoupleIc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bt => "BT",
            Method::BtMulti => "BT-Multi",
            Method::Rfp => "RFP",
            Method::RecoupleEc => "ReCouPLe-EC",
            Method::RecoupleIc => "ReCouPLe-IC",
        }
    }

    /// Whether training reads rationale strings.
    pub fn uses_reasons(self) -> bool {
        matches!(self, Method::Rfp | Method::RecoupleEc | Method::RecoupleIc)
    }

    /// BT trains a separate encoder per task.
    pub fn is_single_task(self) -> bool {
        self == Method::Bt
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Unknown {
                kind: "method",
                name: s.to_string(),
                valid: Method::ALL.map(Method::name).join(", "),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_ratio: f64,
    pub lambda_eq: f64,
    pub lambda_ineq: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub rfp_aux_weight: f64,
    /// Weight of the plain BCE term nested inside the inequality loss.
    pub ineq_bce_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ratio: 1.0,
            lambda_eq: 1.0,
            lambda_ineq: 1.0,
            alpha: 0.5,
            epsilon: 1e-8,
            rfp_aux_weight: 1.0,
            ineq_bce_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_ratio", self.lambda_ratio),
            ("lambda_eq", self.lambda_eq),
            ("lambda_ineq", self.lambda_ineq),
            ("rfp_aux_weight", self.rfp_aux_weight),
            ("ineq_bce_weight", self.ineq_bce_weight),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Rewards of one labelled pair, split along its rationale axis.
///
/// `y == 1` means A is preferred. Without a rationale the split fields are
/// ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEval {
    pub r_a: f64,
    pub r_b: f64,
    pub r_a_par: f64,
    pub r_b_par: f64,
    pub r_a_perp: f64,
    pub r_b_perp: f64,
    pub y: u8,
    pub has_reason: bool,
}

impl PairEval {
    /// A pair with no rationale split.
    pub fn plain(r_a: f64, r_b: f64, y: u8) -> Self {
        PairEval {
            r_a,
            r_b,
            r_a_par: 0.0,
            r_b_par: 0.0,
            r_a_perp: r_a,
            r_b_perp: r_b,
            y,
            has_reason: false,
        }
    }

    /// A pair whose totals are `par + perp`.
    pub fn split(r_a_par: f64, r_a_perp: f64, r_b_par: f64, r_b_perp: f64, y: u8) -> Self {
        PairEval {
            r_a: r_a_par + r_a_perp,
            r_b: r_b_par + r_b_perp,
            r_a_par,
            r_b_par,
            r_a_perp,
            r_b_perp,
            y,
            has_reason: true,
        }
    }
}

fn check_batch(batch: &[PairEval]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::Empty("pair batch"))
    } else {
        Ok(())
    }
}

fn require_reasons(batch: &[PairEval]) -> Result<()> {
    check_batch(batch)?;
    match batch.iter().position(|p| !p.has_reason) {
        Some(index) => Err(Error::MissingRationale { index }),
        None => Ok(()),
    }
}

/// Cross-entropy of label `y` under `P(A ≻ B) = σ(a − b)`.
pub fn bce_pair(a: f64, b: f64, y: u8) -> Result<f64> {
    let p = bt_probability(a, b)?;
    let q = bt_probability(b, a)?;
    let yf = f64::from(y);
    Ok(-(yf * p.max(PROB_FLOOR).ln() + (1.0 - yf) * q.max(PROB_FLOOR).ln()))
}

fn mean_of<F>(batch: &[PairEval], f: F) -> Result<f64>
where
    F: Fn(&PairEval) -> Result<f64>,
{
    check_batch(batch)?;
    let mut total = 0.0;
    for p in batch {
        total += f(p)?;
    }
    Ok(total / batch.len() as f64)
}

pub fn loss_bce_bt(batch: &[PairEval]) -> Result<f64> {
    mean_of(batch, |p| bce_pair(p.r_a, p.r_b, p.y))
}

/// BCE on the reason-aligned rewards only.
pub fn loss_reason(batch: &[PairEval]) -> Result<f64> {
    require_reasons(batch)?;
    mean_of(batch, |p| bce_pair(p.r_a_par, p.r_b_par, p.y))
}

pub fn loss_eq(batch: &[PairEval]) -> Result<f64> {
    require_reasons(batch)?;
    mean_of(batch, |p| Ok((p.r_a_perp - p.r_b_perp).powi(2)))
}

fn ineq_pair(p: &PairEval, w: &LossWeights) -> Result<f64> {
    let dpar = p.r_a_par - p.r_b_par;
    let dperp = p.r_a_perp - p.r_b_perp;
    Ok(bce_pair(dpar, dperp, p.y)? + w.ineq_bce_weight * bce_pair(p.r_a, p.r_b, p.y)?)
}

/// BCE on `S = σ(dpar − dperp)` plus the plain BCE term.
pub fn loss_ineq(batch: &[PairEval]) -> Result<f64> {
    loss_ineq_with(batch, &LossWeights::default())
}

pub fn loss_ineq_with(batch: &[PairEval], weights: &LossWeights) -> Result<f64> {
    require_reasons(batch)?;
    mean_of(batch, |p| ineq_pair(p, weights))
}

/// `ReLU(|par| / (|par| + |perp| + ε) − α)` for one trajectory.
pub fn ratio_term(par: f64, perp: f64, weights: &LossWeights) -> f64 {
    let r = par.abs() / (par.abs() + perp.abs() + weights.epsilon);
    (r - weights.alpha).max(0.0)
}

fn ratio_pair(p: &PairEval, w: &LossWeights) -> f64 {
    0.5 * (ratio_term(p.r_a_par, p.r_a_perp, w) + ratio_term(p.r_b_par, p.r_b_perp, w))
}

/// Mean of [`ratio_term`] over both trajectories of every pair.
pub fn loss_ratio(batch: &[PairEval], weights: &LossWeights) -> Result<f64> {
    require_reasons(batch)?;
    mean_of(batch, |p| Ok(ratio_pair(p, weights)))
}

/// BCE on the raw reason scores `q = φᵀψ`.
pub fn rfp_aux_loss(batch: &[PairEval], q_scores: &[(f64, f64)]) -> Result<f64> {
    require_reasons(batch)?;
    if q_scores.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            actual: q_scores.len(),
        });
    }
    let mut total = 0.0;
    for (p, (qa, qb)) in batch.iter().zip(q_scores) {
        total += bce_pair(*qa, *qb, p.y)?;
    }
    Ok(total / batch.len() as f64)
}

/// Per-method objective. Pairs without a rationale contribute plain BCE.
/// `q_scores` is required for RFP and ignored otherwise.
pub fn total_loss(
    method: Method,
    batch: &[PairEval],
    weights: &LossWeights,
    q_scores: Option<&[(f64, f64)]>,
) -> Result<f64> {
    check_batch(batch)?;
    if method == Method::Rfp {
        let q = q_scores.ok_or_else(|| Error::config("RFP needs reason scores"))?;
        check_len(batch.len(), q.len())?;
        let mut total = 0.0;
        for (p, (qa, qb)) in batch.iter().zip(q) {
            let mut v = bce_pair(p.r_a, p.r_b, p.y)?;
            if p.has_reason {
                v += weights.rfp_aux_weight * bce_pair(*qa, *qb, p.y)?;
            }
            total += v;
        }
        return Ok(total / batch.len() as f64);
    }
    mean_of(batch, |p| {
        if !p.has_reason || !method.uses_reasons() {
            return bce_pair(p.r_a, p.r_b, p.y);
        }
        let base = bce_pair(p.r_a_par, p.r_b_par, p.y)? + weights.lambda_ratio * ratio_pair(p, weights);
        Ok(match method {
            Method::RecoupleEc => base + weights.lambda_eq * (p.r_a_perp - p.r_b_perp).powi(2),
            _ => base + weights.lambda_ineq * ineq_pair(p, weights)?,
        })
    })
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// The same objectives as graph nodes over `n × 1` reward columns.
pub mod tape {
    use ndarray::Array2;

    use super::{LossWeights, Method, PROB_FLOOR};
    use crate::autodiff::{Graph, Var};
    use crate::error::{Error, Result};

    /// Reward columns for a batch of `n` pairs.
    ///
    /// `parallel_*` hold `r∥` (zero for pairs without a rationale) and
    /// `score_*` hold `q = φᵀψ`; both may be absent for methods that do not
    /// read rationales.
    #[derive(Debug, Clone, Copy)]
    pub struct PairColumns {
        pub reward_a: Var,
        pub reward_b: Var,
        pub parallel_a: Option<Var>,
        pub parallel_b: Option<Var>,
        pub score_a: Option<Var>,
        pub score_b: Option<Var>,
    }

    /// Labels and rationale mask of a batch.
    #[derive(Debug, Clone)]
    pub struct PairMeta {
        pub labels: Vec<u8>,
        pub has_reason: Vec<bool>,
    }

    impl PairMeta {
        fn column(&self, f: impl Fn(usize) -> f64) -> Array2<f64> {
            Array2::from_shape_fn((self.labels.len(), 1), |(i, _)| f(i))
        }

        fn signs(&self) -> Array2<f64> {
            self.column(|i| if self.labels[i] == 1 { 1.0 } else { -1.0 })
        }

        fn mask(&self) -> Array2<f64> {
            self.column(|i| if self.has_reason[i] { 1.0 } else { 0.0 })
        }
    }

    /// Per-pair BCE of the labels under `σ(a − b)`.
    pub fn bce_terms(g: &mut Graph, a: Var, b: Var, meta: &PairMeta) -> Var {
        let d = g.sub(a, b);
        let signed = g.mul_const(d, meta.signs());
        g.neg_log_sigmoid(signed, PROB_FLOOR)
    }

    fn ratio_column(g: &mut Graph, par: Var, total: Var, w: &LossWeights) -> Var {
        let perp = g.sub(total, par);
        let pa = g.abs(par);
        let pp = g.abs(perp);
        let denom = g.add(pa, pp);
        let denom = g.offset(denom, w.epsilon);
        let r = g.div(pa, denom);
        let r = g.offset(r, -w.alpha);
        g.relu(r)
    }

    /// Per-pair mean of the ratio penalty over both trajectories.
    pub fn ratio_terms(g: &mut Graph, cols: &PairColumns, w: &LossWeights) -> Result<Var> {
        let (pa, pb) = parallels(cols)?;
        let ra = ratio_column(g, pa, cols.reward_a, w);
        let rb = ratio_column(g, pb, cols.reward_b, w);
        let s = g.add(ra, rb);
        Ok(g.scale(s, 0.5))
    }

    pub fn eq_terms(g: &mut Graph, cols: &PairColumns) -> Result<Var> {
        let (pa, pb) = parallels(cols)?;
        let perp_a = g.sub(cols.reward_a, pa);
        let perp_b = g.sub(cols.reward_b, pb);
        let d = g.sub(perp_a, perp_b);
        Ok(g.square(d))
    }

    pub fn ineq_terms(g: &mut Graph, cols: &PairColumns, meta: &PairMeta, w: &LossWeights) -> Result<Var> {
        let (pa, pb) = parallels(cols)?;
        let perp_a = g.sub(cols.reward_a, pa);
        let perp_b = g.sub(cols.reward_b, pb);
        let dpar = g.sub(pa, pb);
        let dperp = g.sub(perp_a, perp_b);
        let s = bce_terms(g, dpar, dperp, meta);
        let bce = bce_terms(g, cols.reward_a, cols.reward_b, meta);
        let bce = g.scale(bce, w.ineq_bce_weight);
        Ok(g.add(s, bce))
    }

    fn parallels(cols: &PairColumns) -> Result<(Var, Var)> {
        match (cols.parallel_a, cols.parallel_b) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::config("reason-aligned rewards are required for this loss")),
        }
    }

    fn scores(cols: &PairColumns) -> Result<(Var, Var)> {
        match (cols.score_a, cols.score_b) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::config("RFP needs reason scores")),
        }
    }

    /// Mean over the batch of each pair's objective for `method`.
    pub fn total_loss(
        g: &mut Graph,
        method: Method,
        cols: &PairColumns,
        meta: &PairMeta,
        w: &LossWeights,
    ) -> Result<Var> {
        if meta.labels.is_empty() {
            return Err(Error::Empty("pair batch"));
        }
        let bce = bce_terms(g, cols.reward_a, cols.reward_b, meta);
        let any_reason = meta.has_reason.iter().any(|&h| h);
        let all_reason = meta.has_reason.iter().all(|&h| h);
        let per_pair = match method {
            Method::Bt | Method::BtMulti => bce,
            _ if !any_reason => bce,
            Method::Rfp => {
                let (qa, qb) = scores(cols)?;
                let aux = bce_terms(g, qa, qb, meta);
                let aux = g.mul_const(aux, meta.mask());
                let aux = g.scale(aux, w.rfp_aux_weight);
                g.add(bce, aux)
            }
            Method::RecoupleEc | Method::RecoupleIc => {
                let (pa, pb) = parallels(cols)?;
                let reason = bce_terms(g, pa, pb, meta);
                let ratio = ratio_terms(g, cols, w)?;
                let ratio = g.scale(ratio, w.lambda_ratio);
                let consistency = if method == Method::RecoupleEc {
                    let eq = eq_terms(g, cols)?;
                    g.scale(eq, w.lambda_eq)
                } else {
                    let ineq = ineq_terms(g, cols, meta, w)?;
                    g.scale(ineq, w.lambda_ineq)
                };
                let s = g.add(reason, ratio);
                let grounded = g.add(s, consistency);
                if all_reason {
                    grounded
                } else {
                    let mask = meta.mask();
                    let inv = mask.mapv(|m| 1.0 - m);
                    let kept = g.mul_const(grounded, mask);
                    let fallback = g.mul_const(bce, inv);
                    g.add(kept, fallback)
                }
            }
        };
        Ok(g.mean(per_pair))
    }
}
