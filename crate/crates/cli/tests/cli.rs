use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 7

[data]
source = "synthetic"
raw_pool = 3000
raw_per_class = 600
gold_pool = 800
n_test = 200

[sub_model]
dimension = 4096

[final_model]
dimension = 4096
"#;

fn relabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relabel")).args(args).output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_str().unwrap().to_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&relabel(&["frobnicate"])), 1);
    assert_eq!(code(&relabel(&["run", "--seed", "x"])), 1);
    assert_eq!(code(&relabel(&["--help"])), 0);
    assert_eq!(code(&relabel(&["run", "--config", "/nonexistent/config.toml"])), 1);
    // stage commands need a run directory
    assert_eq!(code(&relabel(&["dope"])), 1);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seed = 1\nunknown_key = true\n").unwrap();
    let out = relabel(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));
}

#[test]
fn missing_artifacts_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("empty");
    let config = write_config(dir.path(), "");
    let out = relabel(&["--config", &config, "--out", out_dir.to_str().unwrap(), "dope"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("raw.jsonl"));
}

#[test]
fn run_writes_report_readable_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out_dir = dir.path().join("run");
    let out_str = out_dir.to_str().unwrap();
    let out = relabel(&["--config", &config, "--out", out_str, "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Label transitions"));

    let json = relabel(&["--out", out_str, "report", "--json"]);
    assert_eq!(code(&json), 0);
    let report: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(report["provenance"]["master_seed"], 7);
    assert_eq!(report["alpha_sweep"]["rows"].as_array().unwrap().len(), 6);

    let table = relabel(&["--out", out_str, "report"]);
    assert_eq!(code(&table), 0);
    assert_eq!(table.stdout, fs::read(out_dir.join("report.txt")).unwrap());
}

#[test]
fn staged_commands_reproduce_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let full = dir.path().join("full");
    let staged = dir.path().join("staged");
    let out = relabel(&["--config", &config, "--out", full.to_str().unwrap(), "run"]);
    assert_eq!(code(&out), 0);

    let staged_str = staged.to_str().unwrap();
    let first = relabel(&["--config", &config, "--out", staged_str, "synth"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    // later stages pick the config up from the run directory
    for args in [&["dope"][..], &["train"], &["search"], &["relabel"], &["train", "--final"], &["evaluate"]] {
        let mut all = vec!["--out", staged_str];
        all.extend_from_slice(args);
        let out = relabel(&all);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }

    for rel in [
        "corpora/raw.jsonl",
        "corpora/anchor.jsonl",
        "doped/set_5.jsonl",
        "relabel/relabeled.jsonl",
        "relabel/final_train.jsonl",
        "naive/naive_train.jsonl",
        "models/sub_0/epoch_5.bin",
        "models/final.bin",
        "models/naive.bin",
    ] {
        assert_eq!(fs::read(full.join(rel)).unwrap(), fs::read(staged.join(rel)).unwrap(), "{rel}");
    }
    let report = |root: &Path| -> serde_json::Value {
        serde_json::from_slice(&fs::read(root.join("report.json")).unwrap()).unwrap()
    };
    let (a, b) = (report(&full), report(&staged));
    for key in ["transition", "final_test", "naive_test", "relabel_gold_error", "alpha_sweep"] {
        assert_eq!(a[key], b[key], "{key}");
    }
    assert_eq!(a["provenance"]["config_hash"], b["provenance"]["config_hash"]);
}

#[test]
fn unreachable_gamma_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "\n[search]\ngamma = 1.0\n");
    let out_dir = dir.path().join("run");
    let out = relabel(&["--config", &config, "--out", out_dir.to_str().unwrap(), "run"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(out_dir.join("report.json").is_file());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out_dir = dir.path().join("synth");
    let out = relabel(&["--config", &config, "--seed", "11", "--out", out_dir.to_str().unwrap(), "synth"]);
    assert_eq!(code(&out), 0);
    let stored = fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(stored.contains("seed = 11"), "{stored}");
}
