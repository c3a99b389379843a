//! End-to-end checks of the command-line surface: artifact production,
//! byte-level reproducibility (including across resume), round-trip
//! ingestion, and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_countsurge")
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn countsurge")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_sim_config(dir: &Path, t_len: usize) -> PathBuf {
    // Demo parameters at a shorter horizon keep the smoke tests quick.
    let mut spec = countsurge::simulate::SimSpec::demo(5);
    spec.t_len = t_len;
    let cfg = serde_json::json!({
        "sim": spec,
        "mcmc": {
            "sweeps": 60,
            "burnin": 20,
            "n_particles": 150,
            "path_thin": 2,
            "seed": 5
        },
        "checkpoint_every": 7
    });
    let path = dir.join("sim_config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn smoke_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = small_sim_config(root, 50);
    let cfg_s = cfg.to_str().unwrap();

    assert_ok(&run(&["simulate", "--config", cfg_s, "--out", "data", "--seed", "5"], root));
    for f in ["counts.csv", "truth.json", "fit_config.json"] {
        assert!(root.join("data").join(f).exists(), "missing {f}");
    }

    let fit_cfg = root.join("data/fit_config.json");
    let fit_cfg_s = fit_cfg.to_str().unwrap();
    assert_ok(&run(
        &["fit", "--config", fit_cfg_s, "--out", "fit", "--sweeps", "60", "--burnin", "20"],
        root,
    ));
    for f in [
        "draws.jsonl",
        "checkpoint.json",
        "summary.json",
        "loglik_trace.csv",
        "acceptance_rates.csv",
    ] {
        assert!(root.join("fit").join(f).exists(), "missing {f}");
    }

    assert_ok(&run(&["report", "--config", fit_cfg_s, "--out", "fit"], root));
    for f in [
        "decomposition.csv",
        "shares_long.csv",
        "episodes.csv",
        "regime_probability.csv",
        "paths_long.csv",
    ] {
        assert!(root.join("fit").join(f).exists(), "missing {f}");
    }

    // Decomposition share rows sum to one.
    let decomposition = fs::read_to_string(root.join("fit/decomposition.csv")).unwrap();
    for line in decomposition.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let total: f64 = cols[2..6].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9, "row {line}");
    }

    // Regression over a synthetic target emits the full 4 x 3 grid.
    let mut target = String::from("date,value\n");
    let counts = fs::read_to_string(root.join("data/counts.csv")).unwrap();
    for (i, line) in counts.lines().skip(1).enumerate() {
        let date = line.split(',').next().unwrap();
        target.push_str(&format!("{date},{}\n", 20.0 + (i as f64 * 0.37).sin()));
    }
    fs::write(root.join("target.csv"), target).unwrap();
    assert_ok(&run(
        &["regress", "--config", fit_cfg_s, "--out", "fit", "--target", root.join("target.csv").to_str().unwrap()],
        root,
    ));
    let regression: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("fit/regression.json")).unwrap()).unwrap();
    assert_eq!(regression["tables"].as_array().unwrap().len(), 12);
}

#[test]
fn simulate_is_deterministic_and_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = small_sim_config(root, 40);
    let cfg_s = cfg.to_str().unwrap();

    assert_ok(&run(&["simulate", "--config", cfg_s, "--out", "a", "--seed", "9"], root));
    assert_ok(&run(&["simulate", "--config", cfg_s, "--out", "b", "--seed", "9"], root));
    let counts_a = fs::read(root.join("a/counts.csv")).unwrap();
    let counts_b = fs::read(root.join("b/counts.csv")).unwrap();
    assert_eq!(counts_a, counts_b);
    assert_eq!(
        fs::read(root.join("a/truth.json")).unwrap(),
        fs::read(root.join("b/truth.json")).unwrap()
    );

    // Round-trip: the emitted counts parse back into the exact panel the
    // simulator produced (identity rescale).
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("a/truth.json")).unwrap()).unwrap();
    let spec: countsurge::simulate::SimSpec =
        serde_json::from_value(truth["spec"].clone()).unwrap();
    let (panel, _) = countsurge::simulate::simulate_dataset(&spec).unwrap();

    let text = fs::read_to_string(root.join("a/counts.csv")).unwrap();
    let mut y_back = vec![Vec::new(); 2];
    let mut z_back = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        y_back[0].push(cols[1].parse::<u64>().unwrap());
        y_back[1].push(cols[2].parse::<u64>().unwrap());
        z_back.push(cols[3].parse::<u64>().unwrap());
    }
    assert_eq!(y_back[0], panel.counts(0));
    assert_eq!(y_back[1], panel.counts(1));
    assert_eq!(z_back, panel.global_counts());
}

#[test]
fn fit_reports_and_resume_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = small_sim_config(root, 40);
    let cfg_s = cfg.to_str().unwrap();
    assert_ok(&run(&["simulate", "--config", cfg_s, "--out", "data", "--seed", "5"], root));
    let fit_cfg = root.join("data/fit_config.json");
    let fit_cfg_s = fit_cfg.to_str().unwrap();

    // Two identical uninterrupted runs.
    assert_ok(&run(&["fit", "--config", fit_cfg_s, "--out", "fit_a"], root));
    assert_ok(&run(&["fit", "--config", fit_cfg_s, "--out", "fit_b"], root));
    let draws_a = fs::read(root.join("fit_a/draws.jsonl")).unwrap();
    assert_eq!(draws_a, fs::read(root.join("fit_b/draws.jsonl")).unwrap());
    assert_eq!(
        fs::read(root.join("fit_a/summary.json")).unwrap(),
        fs::read(root.join("fit_b/summary.json")).unwrap()
    );

    // Paused-and-resumed run matches the uninterrupted one byte for byte.
    assert_ok(&run(
        &["fit", "--config", fit_cfg_s, "--out", "fit_c", "--stop-after", "33"],
        root,
    ));
    assert_ok(&run(&["fit", "--config", fit_cfg_s, "--out", "fit_c", "--resume"], root));
    assert_eq!(draws_a, fs::read(root.join("fit_c/draws.jsonl")).unwrap());
    assert_eq!(
        fs::read(root.join("fit_a/summary.json")).unwrap(),
        fs::read(root.join("fit_c/summary.json")).unwrap()
    );

    // Report regeneration is idempotent.
    assert_ok(&run(&["report", "--config", fit_cfg_s, "--out", "fit_a"], root));
    let first = fs::read(root.join("fit_a/decomposition.csv")).unwrap();
    let first_paths = fs::read(root.join("fit_a/paths_long.csv")).unwrap();
    assert_ok(&run(&["report", "--config", fit_cfg_s, "--out", "fit_a"], root));
    assert_eq!(first, fs::read(root.join("fit_a/decomposition.csv")).unwrap());
    assert_eq!(first_paths, fs::read(root.join("fit_a/paths_long.csv")).unwrap());
}

#[test]
fn exit_codes_for_validation_failures() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Counts CSV without the global column.
    fs::write(
        root.join("bad_counts.csv"),
        "date,y_1\n2020-01-01,3\n2020-01-02,4\n",
    )
    .unwrap();
    let cfg = serde_json::json!({ "data": { "counts": "bad_counts.csv" } });
    fs::write(root.join("bad.json"), cfg.to_string()).unwrap();
    let out = run(
        &["fit", "--config", root.join("bad.json").to_str().unwrap(), "--out", "fit"],
        root,
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Malformed simulation spec (negative horizon).
    let cfg = serde_json::json!({ "sim": { "t_len": 1, "params": countsurge::simulate::SimSpec::demo(0).params,
        "covariates": [{"kind": "none"}, {"kind": "none"}], "covariates_global": {"kind": "none"}, "seed": 0 } });
    fs::write(root.join("bad_sim.json"), cfg.to_string()).unwrap();
    let out = run(
        &["simulate", "--config", root.join("bad_sim.json").to_str().unwrap(), "--out", "sim"],
        root,
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Date misalignment in covariates.
    fs::write(
        root.join("counts.csv"),
        "date,y_1,z\n2020-01-01,3,1\n2020-01-02,4,2\n2020-01-03,2,1\n",
    )
    .unwrap();
    fs::write(root.join("cov.csv"), "date,v1\n2020-01-01,0.5\n2020-01-03,0.2\n").unwrap();
    let cfg = serde_json::json!({
        "data": { "counts": "counts.csv", "covariates": ["cov.csv"] },
        "rescale": { "series": [1.0], "global": 1.0 }
    });
    fs::write(root.join("misaligned.json"), cfg.to_string()).unwrap();
    let out = run(
        &["fit", "--config", root.join("misaligned.json").to_str().unwrap(), "--out", "fit"],
        root,
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("2020-01-02"), "stderr: {stderr}");

    // Report against a store fitted under different hyper-parameters.
    let sim_cfg = small_sim_config(root, 30);
    let sim_cfg_s = sim_cfg.to_str().unwrap();
    assert_ok(&run(&["simulate", "--config", sim_cfg_s, "--out", "data", "--seed", "5"], root));
    let fit_cfg_path = root.join("data/fit_config.json");
    assert_ok(&run(
        &["fit", "--config", fit_cfg_path.to_str().unwrap(), "--out", "fit2", "--sweeps", "30", "--burnin", "10"],
        root,
    ));
    let mut altered: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&fit_cfg_path).unwrap()).unwrap();
    altered["hyper"]["a_eta"] = serde_json::json!(2.5);
    fs::write(root.join("data/altered.json"), altered.to_string()).unwrap();
    let out = run(
        &["report", "--config", root.join("data/altered.json").to_str().unwrap(), "--out", "fit2"],
        root,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn regress_requires_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = small_sim_config(root, 30);
    let cfg_s = cfg.to_str().unwrap();
    assert_ok(&run(&["simulate", "--config", cfg_s, "--out", "data", "--seed", "5"], root));
    let fit_cfg = root.join("data/fit_config.json");
    let fit_cfg_s = fit_cfg.to_str().unwrap();
    assert_ok(&run(
        &["fit", "--config", fit_cfg_s, "--out", "fit", "--sweeps", "30", "--burnin", "10"],
        root,
    ));
    fs::write(root.join("off_target.csv"), "date,value\n1999-01-01,3.0\n1999-01-02,2.5\n").unwrap();
    let out = run(
        &["regress", "--config", fit_cfg_s, "--out", "fit", "--target", root.join("off_target.csv").to_str().unwrap()],
        root,
    );
    assert_eq!(out.status.code(), Some(2));
}
