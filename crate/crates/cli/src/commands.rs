use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;

use recouple::datastore::{read_dataset, write_dataset, PreferenceDataset};
use recouple::embedding::{load_table, save_table, EmbeddingTable, SemanticGroupSpec, SyntheticProvider};
use recouple::harness::{
    default_experiment, load_model, reward_accuracy, run_experiment, save_model, train as fit, write_loss_csv,
    EvalReport, ExperimentConfig, RunCache, TrainConfig, TrainedModel,
};
use recouple::io::write_atomic;
use recouple::worlds::{LabeledPair, Split, WorldConfig};

use crate::manifest::RunManifest;
use crate::{EmbedSynthArgs, EvalArgs, ExperimentArgs, GenDataArgs, ReportArgs, TrainArgs};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Lowercase ASCII words joined by `-`.
pub fn slug(s: &str) -> String {
    s.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut world: WorldConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        world.set_seed(seed);
    }
    world.validate()?;
    let hash = world.hash()?;
    let mut manifest = RunManifest::new("gen-data", Some(&args.config), &world, &args.out)?;
    manifest.input(&args.config)?;

    let slugs: Vec<String> = world.task_strings().iter().map(|t| slug(t)).collect();
    if slugs.iter().collect::<BTreeSet<_>>().len() != slugs.len() {
        bail!("task strings do not map to distinct file names");
    }
    for split in [Split::Train, Split::ValId, Split::ValOod] {
        let pairs = world.generate(split)?;
        for (task, name) in world.task_strings().iter().zip(&slugs) {
            let records: Vec<LabeledPair> = pairs.iter().filter(|p| &p.task == task).cloned().collect();
            if records.is_empty() {
                continue;
            }
            let path = args.out.join(split.name()).join(format!("{name}.jsonl"));
            write_dataset(&PreferenceDataset::new(hash.clone(), world.seed(), records)?, &path)?;
            manifest.outputs.push(path);
        }
    }
    let mut strings = world.task_strings();
    strings.extend(world.reason_strings());
    let mut seen = BTreeSet::new();
    strings.retain(|s| seen.insert(s.clone()));
    let path = args.out.join("strings.txt");
    write_atomic(&path, (strings.join("\n") + "\n").as_bytes())?;
    manifest.outputs.push(path);
    manifest.write()?;
    println!("wrote {} files to {}", manifest.outputs.len(), args.out.display());
    Ok(())
}

pub fn embed_synth(args: EmbedSynthArgs) -> Result<()> {
    let mut provider: SyntheticProvider = match &args.config {
        Some(p) => read_json(p)?,
        None => SyntheticProvider::default(),
    };
    if let Some(dim) = args.dim {
        provider.dim = dim;
    }
    if let Some(seed) = args.seed {
        provider.seed = seed;
    }
    if let Some(mode) = args.mode {
        provider.mode = mode;
    }
    if let Some(p) = &args.groups {
        let groups: Vec<SemanticGroupSpec> = read_json(p)?;
        provider.groups.extend(groups);
    }
    let text = std::fs::read_to_string(&args.strings).with_context(|| format!("reading {}", args.strings.display()))?;
    let strings: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if strings.is_empty() {
        bail!("{} lists no strings", args.strings.display());
    }
    let table = provider.build_table(strings.iter().copied())?;

    let mut manifest = RunManifest::new("embed-synth", args.config.as_deref(), &provider, &args.out)?;
    for p in [Some(&args.strings), args.config.as_ref(), args.groups.as_ref()].into_iter().flatten() {
        manifest.input(p)?;
    }
    let path = args.out.join("embeddings.json");
    save_table(&table, &path)?;
    manifest.outputs.push(path);
    manifest.write()?;
    println!("embedded {} strings (dim {})", table.len(), provider.dim);
    Ok(())
}

/// Dataset files named directly plus every `.jsonl` inside named directories.
fn dataset_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            if found.is_empty() {
                bail!("{} contains no .jsonl datasets", p.display());
            }
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_pairs(paths: &[PathBuf], manifest: &mut RunManifest) -> Result<Vec<LabeledPair>> {
    let mut pairs = Vec::new();
    for f in dataset_files(paths)? {
        manifest.input(&f)?;
        pairs.extend(read_dataset(&f)?.records);
    }
    Ok(pairs)
}

/// Accuracy per (task, split) in first-appearance order, as CSV.
fn metrics_csv(model: &TrainedModel, pairs: &[LabeledPair], emb: &EmbeddingTable) -> Result<String> {
    let mut cells: Vec<(&str, Split)> = Vec::new();
    for p in pairs {
        if !cells.contains(&(p.task.as_str(), p.split)) {
            cells.push((p.task.as_str(), p.split));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "split", "n", "accuracy"])?;
    for (task, split) in cells {
        let group: Vec<LabeledPair> = pairs
            .iter()
            .filter(|p| p.task == task && p.split == split)
            .cloned()
            .collect();
        let acc = reward_accuracy(model, &group, emb)?;
        w.write_record([task, split.name(), &group.len().to_string(), &acc.to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(method) = args.method {
        cfg.method = method;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate()?;
    let mut manifest = RunManifest::new("train", args.config.as_deref(), &cfg, &args.out)?;
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    manifest.input(&args.embeddings)?;
    let emb = load_table(&args.embeddings)?;
    let pairs = load_pairs(&args.data, &mut manifest)?;
    if pairs.is_empty() {
        bail!("no training pairs");
    }

    let out = fit(&cfg, &pairs, &emb)?;
    let model_path = args.out.join("model.json");
    save_model(&out.model, &model_path)?;
    let loss_path = args.out.join("losses.csv");
    write_loss_csv(&out.history, &loss_path)?;
    manifest.outputs.extend([model_path, loss_path]);
    for h in &out.history {
        println!("{} loss {:.4} -> {:.4}", if h.label.is_empty() { "shared" } else { &h.label }, h.initial, h.last());
    }
    if !args.val.is_empty() {
        let val = load_pairs(&args.val, &mut manifest)?;
        let csv = metrics_csv(&out.model, &val, &emb)?;
        let path = args.out.join("metrics.csv");
        write_atomic(&path, csv.as_bytes())?;
        manifest.outputs.push(path);
        print!("{csv}");
    }
    manifest.write()?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let mut manifest = RunManifest::new(
        "eval",
        None,
        &serde_json::json!({ "model_checksum": model.checksum() }),
        &args.out,
    )?;
    manifest.input(&args.model)?;
    manifest.input(&args.embeddings)?;
    let emb = load_table(&args.embeddings)?;
    let pairs = load_pairs(&args.data, &mut manifest)?;
    if pairs.is_empty() {
        bail!("no evaluation pairs");
    }
    let csv = metrics_csv(&model, &pairs, &emb)?;
    let path = args.out.join("metrics.csv");
    write_atomic(&path, csv.as_bytes())?;
    manifest.outputs.push(path);
    manifest.write()?;
    print!("{csv}");
    Ok(())
}

pub fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = match (&args.config, args.name) {
        (Some(p), name) => {
            let cfg: ExperimentConfig = read_json(p)?;
            if name.is_some_and(|n| n != cfg.name) {
                bail!("--config describes experiment {}, not {}", cfg.name, name.unwrap());
            }
            cfg
        }
        (None, Some(name)) => default_experiment(name),
        (None, None) => bail!("name an experiment or pass --config"),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(seeds) = args.seeds {
        cfg.seeds = seeds;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    cfg.validate()?;
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let mut manifest = RunManifest::new("experiment", args.config.as_deref(), &cfg, &args.out)?;
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    let report = run_experiment(&cfg, jobs, &RunCache::new())?;
    manifest.outputs = report.write(&args.out)?;
    manifest.write()?;
    print!("{}", report.render());
    eprintln!("{:.1}s, config {}", report.wall_seconds, &report.config_hash[..12]);
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<()> {
    let (csv_path, dir) = if args.input.is_dir() {
        (args.input.join("report.csv"), Some(args.input.clone()))
    } else {
        (args.input.clone(), args.input.parent().map(Path::to_path_buf))
    };
    let bytes = std::fs::read(&csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let rows = EvalReport::rows_from_csv(&bytes)?;
    let Some(first) = rows.first() else {
        bail!("{} has no rows", csv_path.display());
    };
    let summary: Option<serde_json::Value> = dir
        .map(|d| d.join("summary.json"))
        .filter(|p| p.is_file())
        .map(|p| read_json(&p))
        .transpose()?;
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect::<BTreeSet<_>>().into_iter().collect();
    seeds.sort_unstable();
    let report = EvalReport {
        experiment: first.experiment.clone(),
        config_hash: summary
            .as_ref()
            .and_then(|s| s["config_hash"].as_str())
            .unwrap_or_default()
            .to_string(),
        seeds,
        wall_seconds: summary.as_ref().and_then(|s| s["wall_seconds"].as_f64()).unwrap_or(0.0),
        rows,
        histories: Vec::new(),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report.summary_json())?);
    } else {
        print!("{}", report.render());
    }
    if let Some(out) = &args.out {
        let mut manifest = RunManifest::new("report", None, &serde_json::json!({ "input": csv_path }), out)?;
        manifest.input(&csv_path)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for a in report.aggregates() {
            w.serialize(a)?;
        }
        let path = out.join("aggregates.csv");
        write_atomic(&path, &w.into_inner()?)?;
        manifest.outputs.push(path);
        manifest.write()?;
    }
    Ok(())
}
