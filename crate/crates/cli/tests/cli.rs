use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_otws");

fn otws(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn otws")
}

fn ok(args: &[&str]) -> Output {
    let out = otws(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_flags_exit_with_usage_code() {
    assert_eq!(otws(&["sinkhorn", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        otws(&["bench", "--init", "sideways"]).status.code(),
        Some(2)
    );
    assert_eq!(otws(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_config_values_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "epsilon = 0.1\n").unwrap();
    assert_eq!(
        otws(&["sinkhorn", "--config", path(&cfg)]).status.code(),
        Some(2)
    );
    let out = dir.path().join("o");
    assert_eq!(
        otws(&[
            "sinkhorn",
            "--eps",
            "-1",
            "--seed",
            "1",
            "--out",
            path(&out)
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        otws(&["bench", "--init", "net", "--seed", "1", "--out", path(&out)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn runtime_failures_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.idx");
    let out = otws(&[
        "solve",
        "--dataset",
        path(&missing),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.idx"));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "gen-data",
            "--kind",
            "random_r3",
            "--count",
            "10",
            "--seed",
            "7",
            "--pgm",
            "--out",
            path(d),
        ]);
    }
    let names = ["measures.otg", "measure-00000.pgm", "measure-00009.pgm"];
    for name in names {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["input_hash"], mb["input_hash"]);
    assert_eq!(ma["seed"], 7);
}

#[test]
fn missing_seed_is_derived_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "gen-data",
        "--count",
        "2",
        "--n",
        "16",
        "--out",
        path(dir.path()),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let seed = manifest(dir.path())["seed"]
        .as_u64()
        .expect("seed recorded");
    assert!(stderr.contains(&format!("seed: {seed}")), "{stderr}");
}

#[test]
fn identical_marginals_converge() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "sinkhorn",
        "--eps",
        "0.05",
        "--max-iters",
        "1000",
        "--n",
        "64",
        "--count",
        "3",
        "--pairing",
        "self",
        "--seed",
        "3",
        "--out",
        path(dir.path()),
    ]);
    let mut r = csv::Reader::from_path(dir.path().join("trace.csv")).unwrap();
    let rows: Vec<BTreeMap<String, String>> = r.deserialize().map(Result::unwrap).collect();
    for id in ["0", "1", "2"] {
        let last = rows.iter().rfind(|r| r["instance_id"] == id).unwrap();
        assert_eq!(last["iteration"], "1000");
        assert!(last["mcv"].parse::<f64>().unwrap() < 1e-9, "{last:?}");
        // W(μ, μ) = 0, so the relative error is undefined.
        assert_eq!(last["rel_err"], "NaN");
    }
}

#[derive(Debug, serde::Deserialize)]
struct Trace {
    instance_id: usize,
    init: String,
    iteration: usize,
    mcv: f64,
}

#[derive(Debug, serde::Deserialize)]
struct Summary {
    dataset: String,
    init: String,
    threshold: f64,
    mean_iters: f64,
    ci95: f64,
    samples: usize,
}

#[test]
fn summary_recomputes_from_trace() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "bench",
        "--n",
        "16",
        "--count",
        "12",
        "--eps",
        "0.01",
        "--max-iters",
        "3000",
        "--seed",
        "11",
        "--out",
        path(dir.path()),
    ]);
    let traces: Vec<Trace> = csv::Reader::from_path(dir.path().join("trace-random.csv"))
        .unwrap()
        .deserialize()
        .map(Result::unwrap)
        .collect();
    let summary: Vec<Summary> = csv::Reader::from_path(dir.path().join("summary.csv"))
        .unwrap()
        .deserialize()
        .map(Result::unwrap)
        .collect();
    assert!(!summary.is_empty());
    for s in &summary {
        assert_eq!((s.dataset.as_str(), s.init.as_str()), ("random", "ones"));
        // First checkpoint per instance at or below the threshold.
        let mut first: BTreeMap<usize, usize> = BTreeMap::new();
        for t in traces
            .iter()
            .filter(|t| t.init == s.init && t.mcv <= s.threshold)
        {
            first.entry(t.instance_id).or_insert(t.iteration);
        }
        let xs: Vec<f64> = first.values().map(|&v| v as f64).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert_eq!(s.samples, xs.len());
        assert!((s.mean_iters - mean).abs() <= 1e-9, "{s:?} vs {mean}");
        assert!((s.ci95 - 1.96 * sd / n.sqrt()).abs() <= 1e-9, "{s:?}");
        assert!(traces
            .iter()
            .all(|t| t.iteration % 25 == 0 || t.iteration == 3000));
    }
}

#[test]
fn manifest_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        "n = 16\ncount = 4\neps = 0.02\nmax-iters = 500\nseed = 5\n",
    )
    .unwrap();
    let first = dir.path().join("first");
    ok(&[
        "bench",
        "--config",
        path(&cfg),
        "--count",
        "3",
        "--out",
        path(&first),
    ]);
    let m = manifest(&first);
    assert_eq!(m["config"]["count"], 3);
    assert_eq!(m["config"]["eps"], 0.02);
    let again = dir.path().join("again");
    ok(&[
        "bench",
        "--config",
        path(&first.join("manifest.json")),
        "--out",
        path(&again),
    ]);
    assert_eq!(
        std::fs::read(first.join("summary.csv")).unwrap(),
        std::fs::read(again.join("summary.csv")).unwrap()
    );
    assert_eq!(manifest(&again)["input_hash"], m["input_hash"]);
}

#[test]
fn solve_writes_certified_solutions_and_plans() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "solve",
        "--n",
        "16",
        "--count",
        "3",
        "--seed",
        "2",
        "--plans",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout)
            .matches("certified true")
            .count(),
        3
    );
    let text = std::fs::read_to_string(dir.path().join("solutions.csv")).unwrap();
    assert!(text.starts_with("instance_id,primal_value,dual_value,gap,pivots,certified\n"));
    let mut mass = [0.0f64; 3];
    let mut r = csv::Reader::from_path(dir.path().join("plans.csv")).unwrap();
    for row in r.deserialize::<(usize, usize, usize, f64)>() {
        let (k, _, _, m) = row.unwrap();
        mass[k] += m;
    }
    assert!(mass.iter().all(|m| (m - 1.0).abs() < 1e-12), "{mass:?}");
}

#[test]
fn train_checkpoint_drives_net_init_and_barycenter() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("train");
    ok(&[
        "train",
        "--n",
        "16",
        "--samples",
        "400",
        "--batch-size",
        "200",
        "--minibatch-size",
        "50",
        "--checkpoint-every",
        "1",
        "--seed",
        "8",
        "--out",
        path(&t),
    ]);
    assert!(t.join("checkpoint-00001.ckpt").exists());
    assert!(!t.join("checkpoint-00002.ckpt").exists());
    let log = std::fs::read_to_string(t.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let model = t.join("model.ckpt");

    let s = dir.path().join("sinkhorn");
    ok(&[
        "sinkhorn",
        "--init",
        "net",
        "--model",
        path(&model),
        "--n",
        "16",
        "--count",
        "2",
        "--eps",
        "0.01",
        "--seed",
        "1",
        "--out",
        path(&s),
    ]);
    let trace = std::fs::read_to_string(s.join("trace.csv")).unwrap();
    assert!(trace
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("net")));
    assert_eq!(
        manifest(&s)["inputs"][0],
        Value::String(path(&model).into())
    );

    let b = dir.path().join("bary");
    ok(&[
        "barycenter",
        "--source",
        "net",
        "--model",
        path(&model),
        "--n",
        "16",
        "--count",
        "3",
        "--max-steps",
        "20",
        "--step-rule",
        "fixed",
        "--step",
        "0.01",
        "--pgm",
        "--seed",
        "1",
        "--out",
        path(&b),
    ]);
    for f in ["barycenter.otg", "barycenter.pgm", "objective.csv"] {
        assert!(b.join(f).exists(), "{f}");
    }
    let wrong_n = otws(&[
        "sinkhorn",
        "--init",
        "net",
        "--model",
        path(&model),
        "--n",
        "64",
        "--seed",
        "1",
        "--out",
        path(&s),
    ]);
    assert_eq!(wrong_n.status.code(), Some(2));
}

#[test]
fn barycenter_of_copies_with_exact_potentials() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "gen-data",
        "--count",
        "1",
        "--n",
        "16",
        "--seed",
        "4",
        "--out",
        path(&g),
    ]);
    let one = std::fs::read(g.join("measures.otg")).unwrap();
    // Raw_grid with the single measure repeated three times.
    let ms = otws_core::data::decode_raw_grid(&one, 1e-6).unwrap();
    let copies = vec![ms[0].clone(), ms[0].clone(), ms[0].clone()];
    let input = dir.path().join("copies.otg");
    otws_core::data::save_raw_grid(&input, &copies).unwrap();
    let b = dir.path().join("b");
    ok(&[
        "barycenter",
        "--dataset",
        path(&input),
        "--count",
        "3",
        "--max-steps",
        "300",
        "--seed",
        "1",
        "--out",
        path(&b),
    ]);
    let res = otws_core::data::load_raw_grid(&b.join("barycenter.otg"), 1e-6).unwrap();
    let l1: f64 = res[0]
        .weights()
        .iter()
        .zip(ms[0].weights())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(l1 <= 1e-3, "{l1}");
    assert_eq!(
        manifest(&b)["inputs"][0],
        Value::String(path(&input).into())
    );
}
