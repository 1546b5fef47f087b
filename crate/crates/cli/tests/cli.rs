use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use recouple::embedding::load_table;
use recouple::geometry::{cosine, norm};

fn recouple(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recouple"))
        .args(args)
        .output()
        .expect("spawn recouple")
}

fn ok(args: &[&str]) -> String {
    let out = recouple(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn write_json(path: &Path, v: &Value) -> String {
    std::fs::write(path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

/// The shipped two-task confound world, shrunk for speed.
fn small_world(dir: &Path) -> String {
    let mut w = read_json(&configs().join("confound2.json"));
    w["pairs_per_task"] = json!(40);
    w["val_pairs_per_task"] = json!(20);
    write_json(&dir.join("world.json"), &w)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn jsonl_count(dir: &Path) -> usize {
    std::fs::read_dir(dir).map_or(0, |d| d.count())
}

#[test]
fn gen_data_writes_per_task_files_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let world = small_world(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen-data", "--config", &world, "--out", a.to_str().unwrap()]);
    ok(&["gen-data", "--config", &world, "--out", b.to_str().unwrap()]);
    assert_eq!(jsonl_count(&a.join("train")), 2);
    assert_eq!(jsonl_count(&a.join("val_ood")), 2);
    assert_eq!(jsonl_count(&a.join("val_id")), 2);
    for f in files_under(&a).into_iter().filter(|f| f.extension().is_some_and(|x| x == "jsonl")) {
        let twin = b.join(f.strip_prefix(&a).unwrap());
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(&twin).unwrap(), "{}", f.display());
    }
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["pairs_per_task"], 40);

    let c = tmp.path().join("c");
    ok(&["gen-data", "--config", &world, "--out", c.to_str().unwrap(), "--seed", "5"]);
    let first = |d: &Path| std::fs::read(files_under(&d.join("train"))[0].clone()).unwrap();
    assert_ne!(first(&a), first(&c));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut w = read_json(&configs().join("confound2.json"));
    w["seed"] = json!("zero");
    let bad = write_json(&tmp.path().join("bad.json"), &w);
    let out = recouple(&["gen-data", "--config", &bad, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = recouple(&["experiment", "confusion_9task", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("confusion_2task") && err.contains("scaling"), "{err}");

    let out = recouple(&["train", "--data", "missing.jsonl", "--embeddings", "missing.json", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn embed_synth_writes_unit_vectors_and_respects_groups() {
    let tmp = tempfile::tempdir().unwrap();
    let strings = tmp.path().join("strings.txt");
    std::fs::write(
        &strings,
        "the cube is larger\nthe cube is bigger\nfinishes at goal spot\nlifts puck cleanly\npick up larger cube\n",
    )
    .unwrap();
    let groups = write_json(
        &tmp.path().join("groups.json"),
        &json!([{
            "group_id": "size",
            "centroid_seed": 4,
            "member_strings": ["the cube is larger", "the cube is bigger"],
            "perturbation_scale": 0.3
        }]),
    );
    let run = |out: &str| {
        ok(&[
            "embed-synth",
            "--strings",
            strings.to_str().unwrap(),
            "--dim",
            "64",
            "--seed",
            "1",
            "--groups",
            &groups,
            "--out",
            out,
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(a.to_str().unwrap());
    run(b.to_str().unwrap());
    let file = a.join("embeddings.json");
    assert_eq!(std::fs::read(&file).unwrap(), std::fs::read(b.join("embeddings.json")).unwrap());
    let table = load_table(&file).unwrap();
    assert_eq!(table.len(), 5);
    for (_, v) in table.iter() {
        assert_eq!(v.len(), 64);
        assert!((norm(v) - 1.0).abs() < 1e-12);
    }
    let e = |s: &str| table.iter().find(|(k, _)| *k == s).unwrap().1.to_vec();
    let intra = cosine(&e("the cube is larger"), &e("the cube is bigger"));
    let inter = cosine(&e("the cube is larger"), &e("finishes at goal spot"));
    assert!(intra > inter, "{intra} vs {inter}");

    std::fs::write(&strings, "same\nsame\n").unwrap();
    let out = recouple(&["embed-synth", "--strings", strings.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_eval_reproduces_metrics_without_touching_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let world = small_world(tmp.path());
    let data = tmp.path().join("data");
    ok(&["gen-data", "--config", &world, "--out", data.to_str().unwrap()]);
    let emb = tmp.path().join("emb");
    ok(&[
        "embed-synth",
        "--strings",
        data.join("strings.txt").to_str().unwrap(),
        "--dim",
        "16",
        "--out",
        emb.to_str().unwrap(),
    ]);
    let mut cfg = read_json(&configs().join("train_ec.json"));
    cfg["hidden"] = json!([16]);
    let cfg = write_json(&tmp.path().join("train.json"), &cfg);
    let before: Vec<(PathBuf, Vec<u8>)> = files_under(&data).into_iter().map(|f| (f.clone(), std::fs::read(f).unwrap())).collect();

    let run = tmp.path().join("run");
    let emb_file = emb.join("embeddings.json");
    ok(&[
        "train",
        "--config",
        &cfg,
        "--data",
        data.join("train").to_str().unwrap(),
        "--val",
        data.join("val_id").to_str().unwrap(),
        data.join("val_ood").to_str().unwrap(),
        "--embeddings",
        emb_file.to_str().unwrap(),
        "--epochs",
        "20",
        "--out",
        run.to_str().unwrap(),
    ]);
    let trained = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(trained.lines().count(), 1 + 4);
    assert!(trained.contains(",val_ood,20,"));
    let manifest = read_json(&run.join("manifest.json"));
    assert_eq!(manifest["config"]["epochs"], 20);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1 + 1 + 2 + 4);

    let again = tmp.path().join("eval");
    ok(&[
        "eval",
        "--model",
        run.join("model.json").to_str().unwrap(),
        "--data",
        data.join("val_id").to_str().unwrap(),
        data.join("val_ood").to_str().unwrap(),
        "--embeddings",
        emb_file.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read_to_string(again.join("metrics.csv")).unwrap(), trained);
    for (f, bytes) in before {
        assert_eq!(std::fs::read(&f).unwrap(), bytes, "{} changed", f.display());
    }

    let mut hot = read_json(&configs().join("train_ec.json"));
    hot["learning_rate"] = json!(f64::MAX);
    hot["hidden"] = json!([4]);
    let hot = write_json(&tmp.path().join("hot.json"), &hot);
    let out = recouple(&[
        "train",
        "--config",
        &hot,
        "--data",
        data.join("train").to_str().unwrap(),
        "--embeddings",
        emb_file.to_str().unwrap(),
        "--epochs",
        "3",
        "--out",
        tmp.path().join("hot").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn experiment_report_covers_every_method_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&configs().join("experiment_confusion_2task.json"));
    cfg["world"]["pairs_per_task"] = json!(16);
    cfg["world"]["val_pairs_per_task"] = json!(8);
    cfg["train"]["hidden"] = json!([8]);
    let cfg = write_json(&tmp.path().join("exp.json"), &cfg);
    let out = tmp.path().join("exp");
    let table = ok(&[
        "experiment",
        "confusion_2task",
        "--config",
        &cfg,
        "--epochs",
        "2",
        "--seeds",
        "0,1",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("experiment,method,task,split,seed,accuracy"));
    for method in ["BT", "BT-Multi", "RFP", "ReCouPLe-EC", "ReCouPLe-IC"] {
        for split in ["ID", "OOD"] {
            assert!(csv.contains(&format!(",{method},")) && csv.contains(&format!(",{split},")));
            assert!(table.lines().any(|l| l.starts_with(&format!("{method} ")) && l.contains(&format!(" {split} "))));
        }
    }
    assert_eq!(csv.lines().count(), 1 + 5 * 2 * 2 * 2);
    assert!(out.join("summary.json").is_file() && out.join("manifest.json").is_file());

    let summary = tmp.path().join("summary");
    let rendered = ok(&["report", out.to_str().unwrap(), "--out", summary.to_str().unwrap()]);
    assert_eq!(rendered, table);
    assert_eq!(std::fs::read_to_string(summary.join("aggregates.csv")).unwrap().lines().count(), 1 + 5 * 2 * 2);
}
