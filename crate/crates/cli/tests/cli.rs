use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use spclt_core::dataio::{render_ts, write_repr, Dataset, ReprSet};

fn spclt(args: &[&str]) -> Output {
    spclt_env(args, None)
}

fn spclt_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spclt"));
    cmd.args(args).env_remove("SPCLT_SEED");
    if let Some(s) = seed {
        cmd.env("SPCLT_SEED", s);
    }
    cmd.output().expect("spawn spclt")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_is_deterministic_and_honours_the_seed_env() {
    let args = ["synth", "--kind", "sinusoid", "--n", "60", "--t", "50", "--d", "3", "--classes", "3", "--seed", "7"];
    let a = spclt(&args);
    let b = spclt(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("@seriesLength 50"));
    assert_eq!(text.lines().filter(|l| l.contains(':')).count(), 60);

    let short = ["synth", "--n", "8", "--t", "5", "--d", "1", "--classes", "2"];
    let env = spclt_env(&short, Some("5"));
    let flag = spclt(&[&short[..], &["--seed", "5"]].concat());
    let zero = spclt(&short);
    assert_eq!(env.stdout, flag.stdout);
    assert_ne!(env.stdout, zero.stdout);
    // An explicit flag wins over the environment.
    let both = spclt_env(&[&short[..], &["--seed", "0"]].concat(), Some("5"));
    assert_eq!(both.stdout, zero.stdout);
}

#[test]
fn usage_errors_exit_1() {
    let o = spclt(&["synth", "--bogus-flag"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bogus-flag"));
    assert_eq!(code(&spclt(&[])), 1);
    assert_eq!(code(&spclt(&["synth", "--kind", "waves"])), 1);
    assert_eq!(code(&spclt(&["--help"])), 0);
    assert_eq!(code(&spclt_env(&["synth", "--n", "4"], Some("x"))), 1);
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.ts");
    assert_eq!(code(&spclt(&["synth", "--n", "8", "--t", "6", "--d", "1", "--classes", "2", "--out", p(&data)])), 0);
    let o = spclt(&["train", "--data", p(&data), "--method", "Topo", "--out", p(&dir.path().join("r"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ts");
    assert_eq!(code(&spclt(&["train", "--data", p(&missing), "--out", p(dir.path())])), 2);
    let bad = dir.path().join("bad.ts");
    std::fs::write(&bad, "@problemName x\n@dimensions 2\n@seriesLength 3\n@classLabel true A B\n@data\n1,2,3:A\n").unwrap();
    let o = spclt(&["evaluate", "--data", p(&bad), "--repr", p(&missing)]);
    assert_eq!(code(&o), 2);
    let repr = dir.path().join("x.spcl");
    std::fs::write(&repr, b"XXXXjunk").unwrap();
    let good = dir.path().join("good.ts");
    spclt(&["synth", "--n", "8", "--t", "6", "--d", "1", "--classes", "2", "--out", p(&good)]);
    assert_eq!(code(&spclt(&["evaluate", "--data", p(&good), "--repr", p(&repr)])), 2);
}

#[test]
fn numeric_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f64> = (0..12 * 10).map(|i| 1e300 * ((i % 7) as f64 - 3.0)).collect();
    let ds = Dataset::new("huge", (12, 10, 1), data, None, None).unwrap();
    let path = dir.path().join("huge.ts");
    std::fs::write(&path, render_ts(&ds)).unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"batch_size": 4, "max_epochs": 1}"#).unwrap();
    let o = spclt(&[
        "train", "--data", p(&path), "--normalize", "none", "--config", p(&cfg), "--out", p(&dir.path().join("run")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("numeric") || err.contains("non-finite"), "{err}");
}

#[test]
fn evaluate_identity_representations_is_optimal() {
    // Time-constant offsets c_i plus a shared signal: flattened distances are
    // proportional to |c_i - c_j| and so are the max-pooled ones. Values are
    // rounded to f32 so the SPCL file holds them exactly.
    let (n, t) = (20, 30);
    let data: Vec<f64> = (0..n)
        .flat_map(|i| (0..t).map(move |s| (1.3f32.powi(i) + ((s * s) as f32 * 0.1).sin()) as f64))
        .collect();
    let ds = Dataset::new("offsets", (n as usize, t, 1), data.clone(), None, None).unwrap();
    let rs = ReprSet::new(n as usize, t, 1, data, String::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (dpath, rpath, out) = (dir.path().join("d.ts"), dir.path().join("r.spcl"), dir.path().join("e.json"));
    std::fs::write(&dpath, render_ts(&ds)).unwrap();
    write_repr(&rs, &rpath).unwrap();
    let o = spclt(&[
        "evaluate", "--data", p(&dpath), "--repr", p(&rpath), "--k", "5", "--normalize", "none", "--out", p(&out),
    ]);
    let v = stdout_json(&o);
    for scale in ["local", "global"] {
        let r = &v[scale];
        assert_eq!(r["scale"], scale);
        for key in ["knn", "trust", "cont"] {
            assert_eq!(r[key].as_f64(), Some(1.0), "{scale} {key}: {r}");
        }
        for key in ["mrre", "drmse"] {
            assert!(r[key].as_f64().unwrap() < 1e-6, "{scale} {key}: {r}");
        }
    }
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written, v);
}

#[test]
fn full_pipeline_and_stable_report() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("sinusoid.ts");
    let o = spclt(&[
        "synth", "--kind", "sinusoid", "--n", "60", "--t", "50", "--d", "3", "--classes", "3", "--seed", "7", "--out",
        p(&data),
    ]);
    assert_eq!(code(&o), 0);

    let mut runs = Vec::new();
    for (name, method) in [("ts2vec", "TS2Vec"), ("topo", "Topo-TS2Vec")] {
        let run = root.join(name);
        let summary = stdout_json(&spclt(&[
            "train", "--data", p(&data), "--method", method, "--seed", "1", "--out", p(&run),
        ]));
        assert_eq!(summary["method"], method);
        for f in ["config.json", "history.csv", "checkpoint.spck", "metrics.json"] {
            assert!(run.join(f).is_file(), "{name}/{f}");
        }
        let repr = root.join(format!("{name}.spcl"));
        let enc = stdout_json(&spclt(&["encode", "--checkpoint", p(&run), "--data", p(&data), "--out", p(&repr)]));
        assert_eq!((enc["n"].as_u64(), enc["t"].as_u64()), (Some(60), Some(50)));
        let eval = stdout_json(&spclt(&[
            "evaluate", "--data", p(&data), "--repr", p(&repr), "--k", "10", "--out", p(&run.join("structure.json")),
        ]));
        assert_eq!(eval["global"]["n_samples"].as_u64(), Some(60));
        let cls = stdout_json(&spclt(&[
            "classify", "--train-repr", p(&repr), "--train-labels", p(&data), "--test-repr", p(&repr), "--test-labels",
            p(&data), "--k", "1", "--out", p(&run.join("classification.json")),
        ]));
        // Every test point is its own nearest training point.
        assert_eq!(cls["accuracy"].as_f64(), Some(1.0));
        assert_eq!(cls["classes"].as_array().unwrap().len(), 3);
        runs.push(run);
    }

    let forward = spclt(&["report", p(&runs[0]), p(&runs[1])]);
    let backward = spclt(&["report", p(&runs[1]), p(&runs[0])]);
    assert_eq!(code(&forward), 0);
    assert_eq!(forward.stdout, backward.stdout);
    let table = String::from_utf8(forward.stdout).unwrap();
    assert!(table.contains("| TS2Vec | Topo-TS2Vec |"), "{table}");
    assert!(table.contains("accuracy") && table.contains("global dRMSE"), "{table}");
    let csv = root.join("report.csv");
    assert_eq!(code(&spclt(&["report", p(&runs[1]), p(&runs[0]), "--csv", p(&csv)])), 0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);

    // Same seed, same run.
    let again = root.join("again");
    stdout_json(&spclt(&["train", "--data", p(&data), "--method", "TS2Vec", "--seed", "1", "--out", p(&again)]));
    assert_eq!(
        std::fs::read(runs[0].join("checkpoint.spck")).unwrap(),
        std::fs::read(again.join("checkpoint.spck")).unwrap()
    );
    assert!(start.elapsed() < Duration::from_secs(300), "{:?}", start.elapsed());
}

#[test]
fn grid_search_writes_best_configs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.ts");
    spclt(&["synth", "--kind", "blobs", "--n", "16", "--t", "8", "--d", "2", "--classes", "2", "--out", p(&data)]);
    let plan = dir.path().join("plan.json");
    std::fs::write(
        &plan,
        r#"{"min_iterations": 1, "iterations_per_sample": 0,
            "encoder": {"input_dim": 2, "hidden": 4, "blocks": 1, "kernel": 3, "output_dim": 4, "mask_p": 0.5}}"#,
    )
    .unwrap();
    let out = dir.path().join("search");
    let v = stdout_json(&spclt(&[
        "grid-search", "--data", p(&data), "--plan", p(&plan), "--out", p(&out), "--jobs", "2",
    ]));
    let runs: Vec<u64> = v["stages"].as_array().unwrap().iter().map(|s| s["runs"].as_u64().unwrap()).collect();
    assert_eq!(runs.len(), 7);
    assert!(runs.iter().sum::<u64>() <= 63);
    for m in ["TS2Vec", "SoftCLT", "Topo-TS2Vec", "GGeo-TS2Vec", "Topo-SoftCLT", "GGeo-SoftCLT"] {
        assert!(out.join("best").join(format!("{m}.json")).is_file(), "{m}");
    }
    assert!(out.join("search.json").is_file());
    assert_eq!(code(&spclt(&["grid-search", "--data", p(&data), "--out", p(&out), "--jobs", "0"])), 1);
}
