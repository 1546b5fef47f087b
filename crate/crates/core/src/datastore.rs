//! Preference datasets on disk (JSON Lines with a metadata header) and the
//! in-memory transforms used by the experiments.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::TrajectorySegment;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::worlds::{substream, LabeledPair, Split};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema: u32,
    pub world_hash: String,
    pub seed: u64,
    pub step_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub meta: DatasetMeta,
    pub records: Vec<LabeledPair>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    task: String,
    reason: Option<String>,
    y: u8,
    #[serde(rename = "segA")]
    seg_a: Vec<Vec<f64>>,
    #[serde(rename = "segB")]
    seg_b: Vec<Vec<f64>>,
    split: Split,
    #[serde(rename = "totalsA", default, skip_serializing_if = "Option::is_none")]
    totals_a: Option<Vec<f64>>,
    #[serde(rename = "totalsB", default, skip_serializing_if = "Option::is_none")]
    totals_b: Option<Vec<f64>>,
}

impl PreferenceDataset {
    pub fn new(world_hash: impl Into<String>, seed: u64, records: Vec<LabeledPair>) -> Result<Self> {
        let step_dim = records
            .first()
            .map(|r| r.seg_a.step_dim())
            .ok_or(Error::Empty("preference dataset"))?;
        let ds = PreferenceDataset {
            meta: DatasetMeta {
                schema: SCHEMA_VERSION,
                world_hash: world_hash.into(),
                seed,
                step_dim,
            },
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Empty("preference dataset"));
        }
        for (i, r) in self.records.iter().enumerate() {
            check_record(r, self.meta.step_dim).map_err(|message| Error::Format {
                path: "<memory>".into(),
                line: i + 2,
                message,
            })?;
        }
        Ok(())
    }

    /// Records of one task, in order.
    pub fn for_task<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a LabeledPair> + 'a {
        self.records.iter().filter(move |r| r.task == task)
    }

    /// Distinct task strings in first-seen order.
    pub fn tasks(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.task) {
                out.push(r.task.clone());
            }
        }
        out
    }

    fn with_records(&self, records: Vec<LabeledPair>) -> Self {
        PreferenceDataset {
            meta: self.meta.clone(),
            records,
        }
    }
}

fn check_record(r: &LabeledPair, step_dim: usize) -> std::result::Result<(), String> {
    if r.y > 1 {
        return Err(format!("label must be 0 or 1, got {}", r.y));
    }
    if r.seg_a.horizon() != r.seg_b.horizon() || r.seg_a.steps.is_empty() {
        return Err("segments must be nonempty and of equal length".into());
    }
    for seg in [&r.seg_a, &r.seg_b] {
        for s in &seg.steps {
            if s.len() != step_dim {
                return Err(format!("step has {} features, header says {step_dim}", s.len()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err("non-finite step feature".into());
            }
        }
    }
    Ok(())
}

fn to_record(p: &LabeledPair) -> Record {
    let (totals_a, totals_b) = match &p.totals {
        Some((a, b)) => (Some(a.clone()), Some(b.clone())),
        None => (None, None),
    };
    Record {
        task: p.task.clone(),
        reason: p.reason.clone(),
        y: p.y,
        seg_a: p.seg_a.steps.clone(),
        seg_b: p.seg_b.steps.clone(),
        split: p.split,
        totals_a,
        totals_b,
    }
}

fn from_record(r: Record) -> LabeledPair {
    let totals = match (r.totals_a, r.totals_b) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    LabeledPair {
        seg_a: TrajectorySegment {
            steps: r.seg_a,
            source_task: r.task.clone(),
        },
        seg_b: TrajectorySegment {
            steps: r.seg_b,
            source_task: r.task.clone(),
        },
        y: r.y,
        task: r.task,
        reason: r.reason,
        split: r.split,
        totals,
    }
}

pub fn write_dataset(ds: &PreferenceDataset, path: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let mut buf = serde_json::to_vec(&ds.meta)?;
    buf.push(b'\n');
    for r in &ds.records {
        serde_json::to_writer(&mut buf, &to_record(r))?;
        buf.push(b'\n');
    }
    write_atomic(path.as_ref(), &buf)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<PreferenceDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(fail(1, "empty file".into())),
    };
    let meta: DatasetMeta = serde_json::from_str(&header).map_err(|e| fail(1, format!("bad header: {e}")))?;
    if meta.schema != SCHEMA_VERSION {
        return Err(fail(
            1,
            format!("schema version {} is not supported (expected {SCHEMA_VERSION})", meta.schema),
        ));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| fail(lineno, format!("record {}: {e}", i)))?;
        let pair = from_record(rec);
        check_record(&pair, meta.step_dim).map_err(|m| fail(lineno, format!("record {i}: {m}")))?;
        records.push(pair);
    }
    if records.is_empty() {
        return Err(fail(2, "dataset has no records".into()));
    }
    Ok(PreferenceDataset { meta, records })
}

/// Keeps the rationale on exactly `floor(keep_fraction · n)` uniformly chosen
/// records and removes it from the rest.
pub fn mask_rationales(ds: &PreferenceDataset, keep_fraction: f64, seed: u64) -> Result<PreferenceDataset> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(Error::config("keep_fraction must lie in [0, 1]"));
    }
    let n = ds.records.len();
    let keep = ((keep_fraction * n as f64) + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "mask", &[]));
    let mut kept = vec![false; n];
    for &i in &idx[..keep.min(n)] {
        kept[i] = true;
    }
    let records = ds
        .records
        .iter()
        .zip(&kept)
        .map(|(r, &k)| {
            let mut r = r.clone();
            if !k {
                r.reason = None;
            }
            r
        })
        .collect();
    Ok(ds.with_records(records))
}

/// Disjoint random partitions with `floor(f_i · n)` records each; the last
/// partition takes the remainder. Record order is preserved within each.
pub fn split_dataset(ds: &PreferenceDataset, fractions: &[f64], seed: u64) -> Result<Vec<PreferenceDataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::config("split fractions must be positive"));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("split fractions must sum to 1"));
    }
    let n = ds.records.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "split", &[]));
    let mut out = Vec::with_capacity(fractions.len());
    let mut start = 0;
    for (k, f) in fractions.iter().enumerate() {
        let size = if k + 1 == fractions.len() {
            n - start
        } else {
            ((f * n as f64) + 1e-9).floor() as usize
        };
        let mut part: Vec<usize> = idx[start..start + size].to_vec();
        part.sort_unstable();
        start += size;
        out.push(ds.with_records(part.into_iter().map(|i| ds.records[i].clone()).collect()));
    }
    Ok(out)
}
