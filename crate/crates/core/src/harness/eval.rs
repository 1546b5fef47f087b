use super::TrainedModel;
use crate::embedding::Embeddings;
use crate::encoder::TrajectorySegment;
use crate::error::{Error, Result};
use crate::worlds::LabeledPair;

/// Fraction of pairs whose preferred segment gets the higher reward; exact
/// ties count one half.
pub fn reward_accuracy<E: Embeddings + ?Sized>(model: &TrainedModel, pairs: &[LabeledPair], emb: &E) -> Result<f64> {
    accuracy_by(pairs, |p, seg| model.reward(emb, &p.task, seg))
}

pub(crate) fn accuracy_by<F>(pairs: &[LabeledPair], mut score: F) -> Result<f64>
where
    F: FnMut(&LabeledPair, &TrajectorySegment) -> Result<f64>,
{
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let mut hits = 0.0;
    for p in pairs {
        let ra = score(p, &p.seg_a)?;
        let rb = score(p, &p.seg_b)?;
        let (win, lose) = if p.y == 1 { (ra, rb) } else { (rb, ra) };
        hits += if win > lose {
            1.0
        } else if win == lose {
            0.5
        } else {
            0.0
        };
    }
    Ok(hits / pairs.len() as f64)
}

/// Candidate segments for one task with exactly one marked desirable.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub task: String,
    pub candidates: Vec<TrajectorySegment>,
    pub desirable: usize,
}

impl CandidateSet {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() < 2 {
            return Err(Error::config("a candidate set needs at least two segments"));
        }
        if self.desirable >= self.candidates.len() {
            return Err(Error::config("desirable index out of range"));
        }
        Ok(())
    }
}

/// Fraction of sets where the highest-reward candidate (lowest index among
/// ties) is the desirable one.
pub fn greedy_selection_success<E: Embeddings + ?Sized>(
    model: &TrainedModel,
    sets: &[CandidateSet],
    emb: &E,
) -> Result<f64> {
    selection_by(sets, |set, seg| model.reward(emb, &set.task, seg))
}

pub(crate) fn selection_by<F>(sets: &[CandidateSet], mut score: F) -> Result<f64>
where
    F: FnMut(&CandidateSet, &TrajectorySegment) -> Result<f64>,
{
    if sets.is_empty() {
        return Err(Error::Empty("candidate sets"));
    }
    let mut hits = 0usize;
    for set in sets {
        set.validate()?;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, seg) in set.candidates.iter().enumerate() {
            let r = score(set, seg)?;
            if r > best.1 {
                best = (i, r);
            }
        }
        hits += usize::from(best.0 == set.desirable);
    }
    Ok(hits as f64 / sets.len() as f64)
}
