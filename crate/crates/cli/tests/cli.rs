mod common;

use std::fs;

use common::{column, ldiff, manifest_complete, read_csv, run, run_ok, same_outputs, write_config};

#[test]
fn convert_ve_point_to_vp() {
    let out = run_ok(&[
        "convert", "--from", "ve", "--sigma", "1", "--state", "2.0", "--to", "vp",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["param"], "vp");
    assert!((v["level"].as_f64().unwrap() - 0.5).abs() < 1e-15);
    assert!((v["state"][0].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn convert_prediction_from_json() {
    // VP score s at α: noise at the VE point is -√(1-α) s
    let out = run_ok(&[
        "convert",
        "--json",
        r#"{"kind":"score","value":[0.4],"at":{"param":"vp","state":[1.0],"level":0.36}}"#,
        "--to",
        "noise",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["kind"], "noise");
    assert!((v["value"][0].as_f64().unwrap() + 0.8 * 0.4).abs() < 1e-14);
    assert_eq!(v["at"]["param"], "ve");
}

#[test]
fn convert_rejects_mismatched_level_flag() {
    let out = run(&["convert", "--from", "vp", "--sigma", "1", "--state", "1", "--to", "rf"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "chains = 10\nchainz = 3\n");
    let out_dir = dir.path().join("o");
    let out = run(&["sample-forward", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("chainz"), "{err}");
    assert!(!out_dir.exists(), "nothing is written for a bad config");
}

#[test]
fn toml_syntax_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "steps = [1,\n");
    let out = run(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn domain_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "param = \"vp\"\nlevels = [1.5]\n");
    let out = run(&[
        "sample-forward",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("domain error"));
    let out = run(&["convert", "--from", "rf", "--s", "1.0", "--state", "1", "--to", "vp"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "sample-reverse",
        "--field",
        "checkpoint:/nonexistent/ckpt.json",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_reverse_steps_output_the_initial_noise() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("r");
    let n = 20_000;
    run_ok(&[
        "sample-reverse",
        "--model-type",
        "vp-sde",
        "--field",
        "oracle",
        "--steps",
        "0",
        "--chains",
        &n.to_string(),
        "--out",
        o.to_str().unwrap(),
    ]);
    let x = column(&o.join("samples.csv"), "state_0");
    assert_eq!(x.len(), n);
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (1.0 / n as f64).sqrt();
    assert!(mean.abs() < 4.0 * se, "{mean}");
    assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{var}");
    let steps = column(&o.join("moments.csv"), "step");
    assert_eq!(steps, vec![0.0]);
    assert_eq!(column(&o.join("moments.csv"), "reverse_time"), vec![0.0]);
    manifest_complete(&o).unwrap();
}

#[test]
fn output_directory_rules() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("fp");
    let cfg = write_config(dir.path(), "c.toml", "cells = 60\nhorizon = 0.2\n");
    let args = ["fp-solve", "--config", &cfg, "--out", o.to_str().unwrap()];
    run_ok(&args);
    // a second run refuses to mix files with the first
    assert_eq!(run(&args).status.code(), Some(2));
    let mut with_overwrite = args.to_vec();
    with_overwrite.push("--overwrite");
    run_ok(&with_overwrite);
    manifest_complete(&o).unwrap();
    // a file no manifest knows about is never deleted
    fs::write(o.join("notes.txt"), "mine").unwrap();
    assert_eq!(run(&with_overwrite).status.code(), Some(2));
    assert_eq!(fs::read_to_string(o.join("notes.txt")).unwrap(), "mine");
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "cells = 60\nhorizon = 0.2\n");
    let st = ldiff()
        .env("LDIFF_OUTPUT_ROOT", dir.path())
        .args(["fp-solve", "--config", &cfg, "--emit-gnuplot"])
        .status()
        .unwrap();
    assert!(st.success());
    let o = dir.path().join("fp-solve");
    assert!(o.join("kl.csv").exists() && o.join("plot.gp").exists());
    manifest_complete(&o).unwrap();
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "mode = \"split\"\nrow = \"ve\"\nchains = 300\nsteps = 40\nrecord_every = 10\ndtau = 0.01\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&[
        "langevin",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        a.to_str().unwrap(),
    ]);
    let echo = a.join("config.toml").to_str().unwrap().to_string();
    run_ok(&["langevin", "--config", &echo, "--out", b.to_str().unwrap()]);
    same_outputs(&a, &b).unwrap();
    let text = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(text.contains("seed = 5") && text.contains("level = 1.0"), "{text}");
}

#[test]
fn forward_samples_have_one_row_per_chain_and_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "param = \"ve\"\nmethod = \"closed-form\"\nchains = 50\nlevels = [0.5, 2.0]\n\
         [data]\nweights = [1.0]\nmeans = [[1.0, -1.0]]\ncovariances = [[0.5, 0.1]]\n",
    );
    let o = dir.path().join("f");
    run_ok(&["sample-forward", "--config", &cfg, "--out", o.to_str().unwrap()]);
    let (header, rows) = read_csv(&o.join("samples.csv"));
    assert_eq!(header, ["chain_id", "level", "state_0", "state_1"]);
    assert_eq!(rows.len(), 100);
    let (_, m) = read_csv(&o.join("moments.csv"));
    assert_eq!(m.len(), 4);
    let exact_var = column(&o.join("moments.csv"), "exact_var");
    for (got, want) in exact_var.iter().zip([0.75, 0.35, 4.5, 4.1]) {
        assert!((got - want).abs() < 1e-14, "{exact_var:?}");
    }
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "model_type = \"rf\"\nhidden = [8]\nsteps = 30\nbatch_size = 16\neval_alphas = [0.5]\neval_samples = 200\n",
    );
    let o = dir.path().join("t");
    run_ok(&["train", "--config", &cfg, "--out", o.to_str().unwrap()]);
    let ckpt = langevin_core::train::Checkpoint::load(&o.join("checkpoint.json")).unwrap();
    assert_eq!(
        langevin_core::PredictionField::kind(&ckpt.model),
        langevin_core::PredictionKind::Velocity
    );
    assert_eq!(column(&o.join("loss.csv"), "step").len(), 30);
    assert_eq!(column(&o.join("score_error.csv"), "alpha"), vec![0.5]);
    let r = dir.path().join("r");
    let field = format!("checkpoint:{}", o.join("checkpoint.json").display());
    run_ok(&[
        "sample-reverse",
        "--field",
        &field,
        "--model-type",
        "rf",
        "--chains",
        "100",
        "--steps",
        "10",
        "--out",
        r.to_str().unwrap(),
    ]);
    manifest_complete(&r).unwrap();
}

#[test]
fn verify_prints_a_table_and_passes() {
    let out = run_ok(&["verify", "--suite", "conversions"]);
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 3, "{out}");
    assert!(!out.contains("FAIL"));
    assert_eq!(run(&["verify", "--suite", "nonsense"]).status.code(), Some(2));
}
