use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use qreg_core::optim::{LogRecord, RunLog};

fn qreg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qreg"))
        .args(args)
        .current_dir(dir)
        .env("QREG_OUTPUT_ROOT", dir.join("out"))
        .env_remove("RUST_LOG")
        .output()
        .expect("qreg runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}\nstderr: {}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
    })
}

fn write_config(dir: &Path, name: &str, v: Value) -> String {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(&v).unwrap()).unwrap();
    name.to_string()
}

/// Seconds-scale PDE budget.
fn tiny_pde(task: &str) -> Value {
    json!({
        "preset": "poisson_desk",
        "task": task,
        "seeds": [3],
        "pde": { "train_2d": 5, "eval_2d": 11, "train_3d": 3, "eval_3d": 5 },
        "curriculum": { "t_spsa": 3, "adam_max_iters": 8 },
        "model": { "hidden": [6] }
    })
}

fn tiny_tabular(preset: &str) -> Value {
    json!({
        "preset": preset,
        "seeds": [0],
        "curriculum": { "t_spsa": 2, "adam_max_iters": 12 },
        "model": { "hidden": [6] }
    })
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn git_blob_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()));
    h.update(bytes);
    format!("sha256:{:x}", h.finalize())
}

fn read_log(path: &Path) -> RunLog {
    RunLog::from_ndjson(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_writes_artifacts_with_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "poisson2d_hybrid.json", tiny_pde("poisson2d"));
    let o = qreg(tmp.path(), &["train", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    let run = &summary["runs"][0];
    assert!(run["relative_l2"].as_f64().unwrap().is_finite());
    assert_eq!(run["final_depth"], 2);

    let dir = tmp.path().join("out/runs/poisson2d_hybrid/seed-3");
    assert_eq!(PathBuf::from(run["output_dir"].as_str().unwrap()), dir);
    let log = read_log(&dir.join("runlog.ndjson"));
    let LogRecord::Provenance { config, inputs, .. } = &log.records[0] else { panic!("provenance must come first") };
    assert_eq!(config["curriculum"]["t_spsa"], 3);
    assert_eq!(config["pde"]["train_2d"], 5);
    let bytes = std::fs::read(tmp.path().join(&cfg)).unwrap();
    assert_eq!(inputs[&cfg], git_blob_sha256(&bytes));
    assert!(log.summary().is_some());

    let ckpt: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ckpt["provenance"]["config"], *config);
    assert_eq!(ckpt["provenance"]["inputs"]["resolved_config"], summary["config_hash"]);

    let grid = std::fs::read_to_string(dir.join("error_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 11 * 11);
    assert!(dir.join("error_grid.csv.provenance.json").exists());
}

#[test]
fn identical_config_gives_identical_loss_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.json", tiny_pde("poisson2d"));
    let mut traces = Vec::new();
    for out in ["first", "second"] {
        let o = qreg(tmp.path(), &["train", "--config", &cfg, "--output", out]);
        assert_eq!(code(&o), 0);
        traces.push(read_log(&tmp.path().join("out").join(out).join("seed-3/runlog.ndjson")).loss_trace());
    }
    assert!(!traces[0].is_empty());
    assert_eq!(traces[0].as_bytes(), traces[1].as_bytes());
}

#[test]
fn parallel_seeds_match_sequential() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = tiny_pde("poisson2d");
    v["seeds"] = json!([1, 2]);
    let seq = write_config(tmp.path(), "seq.json", v.clone());
    v["parallel_seeds"] = json!(true);
    let par = write_config(tmp.path(), "par.json", v);
    for cfg in [&seq, &par] {
        assert_eq!(code(&qreg(tmp.path(), &["train", "--config", cfg])), 0);
    }
    for seed in [1, 2] {
        let trace = |name: &str| read_log(&tmp.path().join(format!("out/runs/{name}/seed-{seed}/runlog.ndjson"))).loss_trace();
        assert_eq!(trace("seq"), trace("par"));
    }
}

#[test]
fn invalid_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tiny_pde("poisson2d");
    write_config(tmp.path(), "base.json", base);
    let cases = [
        json!({ "preset": "base.json", "curriculum": { "l_max": 0 } }),
        json!({ "preset": "base.json", "epochs": 10 }),
        json!({ "preset": "missing.json" }),
        json!({ "preset": "base.json", "task": "no_such_table.csv" }),
        json!({ "preset": "base.json", "model": { "n_qubits": 4, "hidden": [4000] } }),
    ];
    for (i, v) in cases.into_iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), v.clone());
        let o = qreg(tmp.path(), &["train", "--config", &cfg]);
        let expected = if i == 2 || i == 3 { 1 } else { 2 };
        assert_eq!(code(&o), expected, "{v}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty(), "stdout carries only the summary");
        assert!(!o.stderr.is_empty());
    }
    let o = qreg(tmp.path(), &["train", "--config", "bad0.json"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("l_max"));
}

#[test]
fn numerical_abort_exits_3_and_keeps_partial_log() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = tiny_pde("poisson2d");
    v["curriculum"]["spsa"] = json!({ "a": 1e300, "cap_steps": false });
    let cfg = write_config(tmp.path(), "boom.json", v);
    let o = qreg(tmp.path(), &["train", "--config", &cfg]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let log = read_log(&tmp.path().join("out/runs/boom/seed-3/runlog.ndjson"));
    assert!(matches!(log.records[0], LogRecord::Provenance { .. }));
    assert!(log.summary().unwrap().aborted.is_some());
}

#[test]
fn gradcheck_default_passes_tightly() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qreg(tmp.path(), &["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert!(s["params"].as_u64().unwrap() <= 200);
    let blocks = s["blocks"].as_array().unwrap();
    assert_eq!(blocks.len(), 3);
    for b in blocks {
        assert!(b["params"].as_u64().unwrap() > 0);
        assert!(b["max_relative_error"].as_f64().unwrap() <= 1e-5, "{b}");
    }
    assert!(tmp.path().join("out/runs/gradcheck/gradcheck.json").exists());
}

#[test]
fn gradcheck_fault_injection_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qreg(tmp.path(), &["gradcheck", "--corrupt-gradient-sign"]);
    assert_eq!(code(&o), 4);
    assert_eq!(stdout_json(&o)["passed"], false);

    let cfg = write_config(tmp.path(), "g.json", json!({ "gradcheck": { "corrupt_gradient_sign": true } }));
    assert_eq!(code(&qreg(tmp.path(), &["gradcheck", "--config", &cfg])), 4);
}

#[test]
fn gradcheck_classical_reports_quantum_na() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qreg(tmp.path(), &["gradcheck", "--variant", "classical_mlp"]);
    assert_eq!(code(&o), 0);
    let s = stdout_json(&o);
    let q = s["blocks"].as_array().unwrap().iter().find(|b| b["block"] == "quantum").unwrap();
    assert_eq!(q["max_relative_error"], "n/a");
    assert_eq!(q["params"], 0);
}

#[test]
fn gradcheck_rejects_large_models() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "g.json", json!({ "gradcheck": { "hidden": [32, 16] } }));
    assert_eq!(code(&qreg(tmp.path(), &["gradcheck", "--config", &cfg])), 2);
}

#[test]
fn export_grid_rows_and_boundary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg2 = write_config(tmp.path(), "p.json", tiny_pde("poisson2d"));
    let cfg3 = write_config(tmp.path(), "h.json", tiny_pde("helmholtz3d"));
    assert_eq!(code(&qreg(tmp.path(), &["train", "--config", &cfg2])), 0);
    assert_eq!(code(&qreg(tmp.path(), &["train", "--config", &cfg3])), 0);
    let ck2 = tmp.path().join("out/runs/p/seed-3/checkpoint.json");
    let ck3 = tmp.path().join("out/runs/h/seed-3/checkpoint.json");

    let o = qreg(tmp.path(), &["export-grid", "--checkpoint", ck2.to_str().unwrap(), "--benchmark", "poisson2d", "--resolution", "100", "--output", "g2.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["rows"], 10000);
    let csv = std::fs::read_to_string(tmp.path().join("out/g2.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x,y,u_true,u_pred,abs_error");
    let mut boundary = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(v.len(), 5);
        assert!((v[4] - (v[3] - v[2]).abs()).abs() < 1e-15);
        if v[0].abs() == 1.0 || v[1].abs() == 1.0 {
            boundary += 1;
            assert_eq!(&v[2..], &[0.0, 0.0, 0.0], "{line}");
        }
    }
    assert_eq!(boundary, 4 * 99);
    assert!(tmp.path().join("out/g2.csv.provenance.json").exists());

    let o = qreg(tmp.path(), &["export-grid", "--checkpoint", ck3.to_str().unwrap(), "--benchmark", "helmholtz3d", "--resolution", "30", "--output", "g3.csv"]);
    assert_eq!(stdout_json(&o)["rows"], 27000);
    let csv = std::fs::read_to_string(tmp.path().join("out/g3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 27001);
    assert!(csv.starts_with("x,y,z,u_true,u_pred,abs_error\n"));

    let o = qreg(tmp.path(), &["export-grid", "--checkpoint", ck2.to_str().unwrap(), "--benchmark", "helmholtz3d", "--resolution", "5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn pde_benchmark_covers_every_benchmark_and_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = tiny_pde("poisson2d");
    v["preset"] = json!("pde_desk");
    v["seeds"] = json!([0, 1]);
    let cfg = write_config(tmp.path(), "suite.json", v);
    let o = qreg(tmp.path(), &["benchmark", "pde", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    let reports = s["reports"].as_array().unwrap();
    let titles: Vec<&str> = reports.iter().map(|r| r["title"].as_str().unwrap()).collect();
    for b in ["poisson2d", "nonlinear2d", "convdiff2d", "helmholtz3d"] {
        assert!(titles.iter().any(|t| t.starts_with(b)), "{b} missing");
    }
    for r in reports {
        let rows = r["rows"].as_array().unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r["method"].as_str().unwrap()).collect();
        assert_eq!(names, ["hybrid", "pure_qnn", "classical_mlp"]);
        for row in rows {
            assert_eq!(row["values"].as_array().unwrap().len(), 2);
            assert!(row["rae"].is_number() && row["qcb"].is_number());
        }
        let reference = rows.iter().find(|r| r["method"] == "classical_mlp").unwrap();
        assert!((reference["relative_rae"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
    let out = tmp.path().join("out/runs/suite");
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    let overview = text.split("relative L2 by benchmark").nth(1).unwrap();
    assert_eq!(overview.lines().skip(2).filter(|l| !l.is_empty()).count(), 4);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(saved["provenance"]["config"].is_object());
}

#[test]
fn tabular_benchmark_reports_fold_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = tiny_tabular("yacht_desk");
    v["variants"] = json!(["hybrid", "classical_mlp"]);
    let cfg = write_config(tmp.path(), "tab.json", v);
    let o = qreg(tmp.path(), &["benchmark", "tabular", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    let test = &s["reports"][0];
    assert_eq!(test["metric"], "test RMSE");
    for row in test["rows"].as_array().unwrap() {
        let values: Vec<f64> = row["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(values.len(), 5);
        let mean = values.iter().sum::<f64>() / 5.0;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((row["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
        assert!((row["std"].as_f64().unwrap() - std).abs() < 1e-12);
    }
    assert_eq!(s["reports"][1]["metric"], "train RMSE");
}

#[test]
fn ablation_benchmark_has_three_arms() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "abl.json", tiny_tabular("ablation_desk"));
    let o = qreg(tmp.path(), &["benchmark", "ablation", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    let rows = s["reports"][0]["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["two_stage", "adam_only", "spsa_only"]);
    for r in rows {
        assert_eq!(r["values"].as_array().unwrap().len(), 1);
    }
    let runs = tmp.path().join("out/runs/abl");
    for arm in names {
        assert!(runs.join(arm).join("fold-0/seed-0/runlog.ndjson").exists());
    }
    // SPSA has no early stop, so the single-stage arm uses the full budget.
    let log = read_log(&runs.join("spsa_only/fold-0/seed-0/runlog.ndjson"));
    assert_eq!(log.epochs().count(), 2 * (2 + 12));
}

#[test]
fn tabular_file_task_is_hashed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("a;b;target\n");
    for i in 0..30 {
        let (a, b) = (i as f64 / 30.0, (i * 7 % 30) as f64 / 30.0);
        csv.push_str(&format!("{a};{b};{}\n", a + 2.0 * b));
    }
    std::fs::create_dir(tmp.path().join("data")).unwrap();
    std::fs::write(tmp.path().join("data/toy.csv"), &csv).unwrap();
    let mut v = tiny_tabular("yacht_desk");
    v["task"] = json!("data/toy.csv");
    v["tabular"] = json!({ "header_lines": 1, "folds": 3 });
    let cfg = write_config(tmp.path(), "toy.json", v);
    let o = qreg(tmp.path(), &["train", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = &stdout_json(&o)["runs"][0];
    assert!(run["test_rmse"].as_f64().unwrap().is_finite());
    let log = read_log(&tmp.path().join("out/runs/toy/seed-0/runlog.ndjson"));
    let LogRecord::Provenance { inputs, .. } = &log.records[0] else { panic!() };
    let key = tmp.path().join("data/toy.csv").display().to_string();
    assert!(inputs.keys().any(|k| k.ends_with("data/toy.csv")), "{inputs:?} lacks {key}");
    assert!(inputs.values().any(|h| *h == git_blob_sha256(csv.as_bytes())));
}

#[test]
fn report_renders_saved_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "abl.json", tiny_tabular("ablation_desk"));
    assert_eq!(code(&qreg(tmp.path(), &["benchmark", "ablation", "--config", &cfg])), 0);
    let runs = tmp.path().join("out/runs/abl");
    let report = runs.join("report.json");
    let log = runs.join("two_stage/fold-0/seed-0/runlog.ndjson");
    let o = qreg(tmp.path(), &["report", report.to_str().unwrap(), log.to_str().unwrap(), "--output", "tables.txt"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert_eq!(s["reports"].as_array().unwrap().len(), 2);
    let text = std::fs::read_to_string(tmp.path().join("out/tables.txt")).unwrap();
    assert!(text.contains("two_stage") && text.contains("final loss"));
    assert!(tmp.path().join("out/tables.txt.provenance.json").exists());
}
