//! End-to-end tests of the `selmiss` binary: exit codes, artifact layout,
//! and the summarize/verify commands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_selmiss")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let out = dir.join("out");
    format!(
        r#"{{
            "name": "small",
            "n": 120,
            "mechanism": {{"type": "threshold", "c": 0.0}},
            "mode": {{"type": "fixed", "model": [1, 2]}},
            "mcmc": {{
                "iterations": 400, "burn_in": 100, "thin": 1,
                "g_value": "n", "seed": 5, "chain_count": 2
            }},
            "out_dir": "{}"{extra}
        }}"#,
        out.display()
    )
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"name": "x", "unknown_field": 1"#).unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());

    // syntactically valid but with an unknown key
    fs::write(&cfg, small_config(dir.path(), r#", "extra_key": true"#)).unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("extra_key"), "stderr: {msg}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_config_file_exits_2() {
    let out = run(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_replicate_structure_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, small_config(dir.path(), r#", "replicates": 3"#)).unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let root = dir.path().join("out");
    assert!(root.join("config.resolved.json").exists());
    assert!(root.join("summary.json").exists());
    assert!(root.join("aggregate.json").exists());
    for rep in 0..3 {
        let rd = root.join(format!("rep_{rep:02}"));
        assert!(rd.join("dataset.csv").exists(), "missing {rd:?}/dataset.csv");
        assert!(rd.join("chain_0.csv").exists());
        assert!(rd.join("chain_1.csv").exists());
        assert!(rd.join("summary.json").exists());
    }
    // plots only for the first replicate
    assert!(root.join("rep_00/trace_beta1.csv").exists());
    assert!(root.join("rep_00/trace_beta1.svg").exists());
    assert!(root.join("rep_00/density_beta2.csv").exists());
    assert!(!root.join("rep_01/trace_beta1.csv").exists());

    let agg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["replicates"], 3);
    assert_eq!(
        agg["parameter_means"]["beta1"]["per_replicate"]
            .as_array()
            .unwrap()
            .len(),
        3
    );

    // the resolved config re-runs to the same summary
    let resolved = root.join("config.resolved.json");
    let text = fs::read_to_string(&resolved).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let out2 = dir.path().join("out2");
    v["out_dir"] = serde_json::Value::String(out2.to_str().unwrap().into());
    let cfg2 = dir.path().join("cfg2.json");
    fs::write(&cfg2, serde_json::to_string(&v).unwrap()).unwrap();
    let rerun = run(&["run", "--config", cfg2.to_str().unwrap()]);
    assert_eq!(rerun.status.code(), Some(0));
    let strip = |p: &Path| -> String {
        fs::read_to_string(p.join("summary.json"))
            .unwrap()
            .lines()
            .filter(|l| !l.contains("runtime_seconds") && !l.contains("out_dir"))
            .collect()
    };
    assert_eq!(strip(&root), strip(&out2));
}

#[test]
fn selection_without_censoring_concentrates_on_beta2_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = format!(
        r#"{{
            "name": "cc-selection",
            "n": 1000,
            "mechanism": {{"type": "none"}},
            "mode": {{"type": "selection"}},
            "mcmc": {{
                "iterations": 1500, "burn_in": 200, "thin": 1,
                "g_value": "n", "seed": 11, "chain_count": 1
            }},
            "out_dir": "{}"
        }}"#,
        dir.path().join("out").display()
    );
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, cfg_text).unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/summary.json")).unwrap(),
    )
    .unwrap();
    let f = &summary["model_frequencies"];
    let with_beta2 = f["beta2"].as_f64().unwrap() + f["beta1_beta2"].as_f64().unwrap();
    assert!(with_beta2 >= 0.99, "mass on beta2 models = {with_beta2}");
}

#[test]
fn verify_passes_and_prints_table() {
    let out = run(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[pass] marginal_likelihood_quadrature"));
    assert!(text.contains("[pass] imputation_conditional_grid"));
    assert!(text.contains("[pass] dgp_moments"));
    assert!(text.contains("[pass] complete_data_conjugacy"));
}

#[test]
fn summarize_reads_chain_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, small_config(dir.path(), "")).unwrap();
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(0));
    let chain = dir.path().join("out/rep_00/chain_0.csv");
    let out = run(&["summarize", "--chain", chain.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert!(summary["parameters"]["beta2"]["mean"].as_f64().is_some());
    assert_eq!(summary["n_samples"], 300);

    let missing = run(&["summarize", "--chain", "/nonexistent.csv"]);
    assert_eq!(missing.status.code(), Some(2));

    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "not,a,chain\n1,2,3\n").unwrap();
    let bad = run(&["summarize", "--chain", garbage.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn reproduce_rejects_unknown_sim() {
    let out = run(&["reproduce", "--sim", "4"]);
    assert_eq!(out.status.code(), Some(2));
}
