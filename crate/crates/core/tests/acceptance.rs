//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! `RECOUPLE_JOBS` sets the number of training threads (default: all cores).

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recouple::harness::{default_experiment, run_experiment, EvalReport, ExperimentConfig, ExperimentName, RunCache};
use recouple::worlds::feature::sample_rationale;
use recouple::worlds::{Split, WorldConfig};

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn jobs() -> usize {
    std::env::var("RECOUPLE_JOBS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn run(cfg: &ExperimentConfig, cache: &RunCache, tag: &str) -> (EvalReport, Duration) {
    let start = Instant::now();
    let report = run_experiment(cfg, jobs(), cache).unwrap_or_else(|e| panic!("{tag}: {e}"));
    let elapsed = start.elapsed();
    report.write(&out_dir(tag)).expect("write report");
    eprintln!("--- {tag} ({:.0}s)\n{}", elapsed.as_secs_f64(), report.render());
    (report, elapsed)
}

fn keep(mut cfg: ExperimentConfig, labels: &[&str]) -> ExperimentConfig {
    cfg.variants.retain(|v| labels.contains(&v.label.as_str()));
    assert_eq!(cfg.variants.len(), labels.len());
    cfg
}

fn mean(r: &EvalReport, method: &str, task: &str, split: &str) -> f64 {
    r.mean(method, task, split)
        .unwrap_or_else(|| panic!("no cell {method}/{task}/{split}"))
}

fn split_mean(r: &EvalReport, method: &str, split: &str) -> f64 {
    r.split_mean(method, split)
        .unwrap_or_else(|| panic!("no cells {method}/{split}"))
}

fn p1() -> Outcome {
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let start = Instant::now();
    let status = Command::new(cargo)
        .args([
            "test",
            "-p",
            "recouple-core",
            "--lib",
            "--test",
            "gradients",
            "--test",
            "properties",
            "-q",
        ])
        .status();
    let elapsed = start.elapsed().as_secs_f64();
    let ok = matches!(&status, Ok(s) if s.success());
    Outcome {
        id: "P1",
        title: "property suites",
        pass: ok && elapsed <= 120.0,
        detail: format!("suites {}, {elapsed:.1}s (limit 120s)", if ok { "passed" } else { "FAILED" }),
    }
}

fn p2(cache: &RunCache) -> Outcome {
    let cfg = default_experiment(ExperimentName::Confusion2Task);
    let (r, elapsed) = run(&cfg, cache, "confusion_2task");
    let mut pass = elapsed.as_secs_f64() <= 15.0 * 60.0;
    let mut detail = Vec::new();
    let mut min_id: f64 = 1.0;
    for v in &cfg.variants {
        for t in r.tasks() {
            min_id = min_id.min(mean(&r, &v.label, &t, "ID"));
        }
    }
    pass &= min_id >= 0.95;
    detail.push(format!("min ID {min_id:.3} (>= 0.95)"));
    for t in r.tasks() {
        let ec = mean(&r, "ReCouPLe-EC", &t, "OOD");
        let bt = mean(&r, "BT-Multi", &t, "OOD");
        pass &= ec - bt >= 0.10;
        detail.push(format!("{t:?}: EC OOD {ec:.3} vs BT-Multi {bt:.3}, gap {:+.3} (>= 0.10)", ec - bt));
    }
    detail.push(format!("{:.0}s (limit 900s)", elapsed.as_secs_f64()));
    Outcome {
        id: "P2",
        title: "causal-confusion trend",
        pass,
        detail: detail.join("; "),
    }
}

fn p3(cache: &RunCache) -> Outcome {
    let cfg = keep(
        default_experiment(ExperimentName::Ablation),
        &["ReCouPLe-EC", "ReCouPLe-no-consistency"],
    );
    let (r, _) = run(&cfg, cache, "ablation");
    let full = split_mean(&r, "ReCouPLe-EC", "OOD");
    let ablated = split_mean(&r, "ReCouPLe-no-consistency", "OOD");
    Outcome {
        id: "P3",
        title: "ablation trend",
        pass: full - ablated >= 0.05,
        detail: format!("EC OOD {full:.3}, without consistency {ablated:.3}, drop {:+.3} (>= 0.05)", full - ablated),
    }
}

fn p4(cache: &RunCache) -> Outcome {
    let cfg = keep(
        default_experiment(ExperimentName::Transfer),
        &["BT-Multi", "ReCouPLe-EC", "ReCouPLe-IC"],
    );
    let WorldConfig::Feature(world) = &cfg.world else {
        unreachable!("transfer runs on the feature world")
    };
    let held_out = world.held_out.clone().expect("held-out task");
    let leaked = cfg.seeds.iter().any(|&s| {
        let mut w = cfg.world.clone();
        w.set_seed(s);
        w.generate(Split::Train).expect("train split").iter().any(|p| p.task == held_out)
    });
    let (r, _) = run(&cfg, cache, "transfer");
    let bt = mean(&r, "BT-Multi", &held_out, "OOD");
    let ec = mean(&r, "ReCouPLe-EC", &held_out, "OOD");
    let ic = mean(&r, "ReCouPLe-IC", &held_out, "OOD");
    Outcome {
        id: "P4",
        title: "transfer trend",
        pass: !leaked && ec - bt >= 0.05 && ic - bt >= 0.05,
        detail: format!(
            "held-out: BT-Multi {bt:.3}, EC {ec:.3} ({:+.3}), IC {ic:.3} ({:+.3}) (>= 0.05); held-out pairs in training: {leaked}",
            ec - bt,
            ic - bt
        ),
    }
}

fn p5(cache: &RunCache) -> Outcome {
    let cfg = keep(
        default_experiment(ExperimentName::Sparse),
        &["BT-Multi", "ReCouPLe-EC (25%)"],
    );
    let (r, _) = run(&cfg, cache, "sparse");
    let ec = split_mean(&r, "ReCouPLe-EC (25%)", "OOD");
    let bt = split_mean(&r, "BT-Multi", "OOD");
    Outcome {
        id: "P5",
        title: "sparse-rationale trend",
        pass: ec - bt >= 0.05,
        detail: format!("EC at 25% OOD {ec:.3} vs BT-Multi {bt:.3}, gap {:+.3} (>= 0.05)", ec - bt),
    }
}

fn p6(cache: &RunCache) -> Outcome {
    let cfg = keep(
        default_experiment(ExperimentName::Scaling),
        &["ReCouPLe-EC (200)", "ReCouPLe-EC (2000)"],
    );
    let (r, _) = run(&cfg, cache, "scaling");
    let small = split_mean(&r, "ReCouPLe-EC (200)", "OOD");
    let large = split_mean(&r, "ReCouPLe-EC (2000)", "OOD");
    Outcome {
        id: "P6",
        title: "scaling trend",
        pass: large - small >= 0.05,
        detail: format!("EC OOD 200/task {small:.3}, 2000/task {large:.3}, gain {:+.3} (>= 0.05)", large - small),
    }
}

fn p7() -> Outcome {
    let mut cfg = default_experiment(ExperimentName::Confusion2Task);
    if let WorldConfig::Confound(c) = &mut cfg.world {
        c.pairs_per_task = 100;
        c.val_pairs_per_task = 50;
    }
    cfg.train.epochs = 40;
    let a = run_experiment(&cfg, jobs(), &RunCache::new()).expect("first run");
    let b = run_experiment(&cfg, 1, &RunCache::new()).expect("second run");
    let (ca, cb) = (a.to_csv().expect("csv"), b.to_csv().expect("csv"));
    Outcome {
        id: "P7",
        title: "reproducibility",
        pass: a.config_hash == b.config_hash && ca == cb && !a.rows.is_empty(),
        detail: format!(
            "{} rows, config hash {}…, CSVs {} ({} vs 1 threads)",
            a.rows.len(),
            &a.config_hash[..12],
            if ca == cb { "byte-identical" } else { "DIFFER" },
            jobs()
        ),
    }
}

fn p8() -> Outcome {
    let deltas: [&[f64]; 3] = [&[3f64.ln(), 0.0], &[0.0, 0.0, 0.0], &[1.0, -0.5, 2.0, 0.3]];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, delta) in deltas.iter().enumerate() {
        let n = delta.len();
        let exps: Vec<f64> = delta.iter().map(|d| d.exp()).collect();
        let z: f64 = exps.iter().sum();
        let expected: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let weights = vec![1.0; n];
        let zeros = vec![0.0; n];
        let active: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        let mut counts = vec![0usize; n];
        let draws = 10_000;
        for _ in 0..draws {
            let j = sample_rationale(delta, &zeros, &weights, 1, &active, &mut rng).expect("sample");
            counts[j] += 1;
        }
        let tv = 0.5
            * counts
                .iter()
                .zip(&expected)
                .map(|(&c, p)| (c as f64 / draws as f64 - p).abs())
                .sum::<f64>();
        worst = worst.max(tv);
        parts.push(format!("{delta:?}: TV {tv:.4}"));
    }
    Outcome {
        id: "P8",
        title: "sampler fidelity",
        pass: worst <= 0.02,
        detail: format!("{} (<= 0.02)", parts.join(", ")),
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let cache = RunCache::new();
    let outcomes = vec![
        p1(),
        p8(),
        p7(),
        p2(&cache),
        p3(&cache),
        p5(&cache),
        p6(&cache),
        p4(&cache),
    ];
    let mut sorted: Vec<&Outcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.id);
    println!("\nacceptance ({:.0}s, {} threads)", start.elapsed().as_secs_f64(), jobs());
    for o in &sorted {
        println!("{} {} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.title, o.detail);
    }
    if outcomes.iter().all(|o| o.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
