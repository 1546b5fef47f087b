use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::LossHistory;
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub method: String,
    pub task: String,
    pub split: String,
    pub seed: u64,
    pub accuracy: f64,
}

/// Mean and sample standard deviation over seeds of one (method, task, split) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub task: String,
    pub split: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub experiment: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub wall_seconds: f64,
    pub rows: Vec<ReportRow>,
    /// Loss histories per (method label, seed).
    pub histories: Vec<(String, u64, Vec<LossHistory>)>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    /// Aggregates in first-appearance order of their cells.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(&str, &str, &str)> = Vec::new();
        for r in &self.rows {
            let k = (r.method.as_str(), r.task.as_str(), r.split.as_str());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(m, t, s)| {
                let xs: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == m && r.task == t && r.split == s)
                    .map(|r| r.accuracy)
                    .collect();
                let (mean, std) = mean_std(&xs);
                Aggregate {
                    method: m.into(),
                    task: t.into(),
                    split: s.into(),
                    mean,
                    std,
                    n: xs.len(),
                }
            })
            .collect()
    }

    /// Mean accuracy over seeds of one cell.
    pub fn mean(&self, method: &str, task: &str, split: &str) -> Option<f64> {
        self.aggregates()
            .into_iter()
            .find(|a| a.method == method && a.task == task && a.split == split)
            .map(|a| a.mean)
    }

    /// Mean over seeds and tasks for one method and split.
    pub fn split_mean(&self, method: &str, split: &str) -> Option<f64> {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.split == split)
            .map(|r| r.accuracy)
            .collect();
        (!xs.is_empty()).then(|| mean_std(&xs).0)
    }

    pub fn tasks(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.task) {
                out.push(r.task.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::config(format!("csv buffer: {e}")))
    }

    pub fn rows_from_csv(bytes: &[u8]) -> Result<Vec<ReportRow>> {
        csv::Reader::from_reader(bytes)
            .deserialize()
            .map(|r| r.map_err(Error::from))
            .collect()
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "wall_seconds": self.wall_seconds,
            "aggregates": self.aggregates(),
        })
    }

    /// Human-readable table of the aggregates.
    pub fn render(&self) -> String {
        let aggs = self.aggregates();
        let mw = aggs.iter().map(|a| a.method.len()).max().unwrap_or(6).max(6);
        let tw = aggs.iter().map(|a| a.task.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:mw$}  {:tw$}  split  mean    std\n", "method", "task");
        for a in aggs {
            out += &format!(
                "{:mw$}  {:tw$}  {:5}  {:.3}  {:.3}\n",
                a.method, a.task, a.split, a.mean, a.std
            );
        }
        out
    }

    /// Writes `report.csv`, `summary.json` and one loss CSV per run under
    /// `dir`; returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let csv_path = dir.join("report.csv");
        write_atomic(&csv_path, &self.to_csv()?)?;
        written.push(csv_path);
        let summary = dir.join("summary.json");
        write_atomic(&summary, &serde_json::to_vec_pretty(&self.summary_json())?)?;
        written.push(summary);
        for (label, seed, hist) in &self.histories {
            let name: String = label
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                .collect();
            let path = dir.join("losses").join(format!("{name}_seed{seed}.csv"));
            write_loss_csv(hist, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// One row per (encoder, epoch); epoch 0 is the loss before training.
pub fn write_loss_csv(history: &[LossHistory], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["encoder", "epoch", "loss"])?;
    for h in history {
        let label = if h.label.is_empty() { "shared" } else { &h.label };
        w.write_record([label, "0", &h.initial.to_string()])?;
        for (i, l) in h.epochs.iter().enumerate() {
            w.write_record([label, &(i + 1).to_string(), &l.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::config(format!("csv buffer: {e}")))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, split: &str, seed: u64, accuracy: f64) -> ReportRow {
        ReportRow {
            experiment: "x".into(),
            method: method.into(),
            task: "t".into(),
            split: split.into(),
            seed,
            accuracy,
        }
    }

    fn report() -> EvalReport {
        EvalReport {
            experiment: "x".into(),
            config_hash: "h".into(),
            seeds: vec![0, 1, 2],
            wall_seconds: 1.0,
            rows: vec![
                row("A", "ID", 0, 1.0),
                row("A", "ID", 1, 0.9),
                row("A", "ID", 2, 0.8),
                row("A", "OOD", 0, 0.5),
            ],
            histories: vec![(
                "A".into(),
                0,
                vec![LossHistory {
                    label: String::new(),
                    initial: 0.7,
                    epochs: vec![0.5, 0.25],
                }],
            )],
        }
    }

    #[test]
    fn aggregates_use_sample_std() {
        let aggs = report().aggregates();
        assert_eq!(aggs.len(), 2);
        assert!((aggs[0].mean - 0.9).abs() < 1e-12);
        assert!((aggs[0].std - 0.1).abs() < 1e-12);
        assert_eq!((aggs[1].n, aggs[1].std), (1, 0.0));
        assert_eq!(report().split_mean("A", "OOD"), Some(0.5));
    }

    #[test]
    fn csv_round_trips() {
        let r = report();
        let bytes = r.to_csv().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("experiment,method,task,split,seed,accuracy\n"));
        assert_eq!(EvalReport::rows_from_csv(&bytes).unwrap(), r.rows);
    }

    #[test]
    fn writes_all_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let paths = report().write(dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let loss = std::fs::read_to_string(dir.path().join("losses/A_seed0.csv")).unwrap();
        assert_eq!(loss, "encoder,epoch,loss\nshared,0,0.7\nshared,1,0.5\nshared,2,0.25\n");
        let summary: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["aggregates"][0]["n"], 3);
    }
}
