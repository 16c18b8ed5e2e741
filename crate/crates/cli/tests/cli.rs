use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"{
    "dataset": {"synthetic": {"num_clients": 4, "num_classes": 2, "seed": 1,
        "natural": {"samples_log_mean": 3.2},
        "modalities": [{"feature_dim": 2, "informativeness": 0.9},
                       {"feature_dim": 3, "informativeness": 0.3}]}},
    "method": "METHOD",
    "budget_mb": 0.0004,
    "max_rounds": 20
}"#;

fn write_config(dir: &Path, name: &str, method: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, CONFIG.replace("METHOD", method)).unwrap();
    path
}

fn mmfedmc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmfedmc"))
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.json", "mmfedmc");
    let out = dir.path().join("out");
    let status = mmfedmc()
        .args(["run", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let mut names: Vec<_> = fs::read_dir(out.join("seed_0"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "accuracy_vs_comm.csv",
            "selection_histogram.csv",
            "shapley_trajectory.csv",
            "summary.json",
            "trajectory.json"
        ]
    );
}

#[test]
fn seeds_and_round_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.json", "data_level");
    let out = dir.path().join("out");
    let status = mmfedmc()
        .args(["run", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()])
        .args(["--seeds", "4,5", "--max-rounds", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("seed_4").is_dir() && out.join("seed_5").is_dir());
    assert!(out.join("cross_seed_summary.json").is_file());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("seed_4/summary.json")).unwrap()).unwrap();
    assert!(summary["comm_rounds"].as_u64().unwrap() <= 2);
}

#[test]
fn invalid_config_exits_with_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        CONFIG.replace("METHOD", "mmfedmc").replace("\"max_rounds\"", "\"selection\": {\"delta\": 0}, \"max_rounds\""),
    )
    .unwrap();
    let out = mmfedmc().args(["run", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("selection.delta"));
}

#[test]
fn runtime_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("csv.json");
    let missing = dir.path().join("no_such_dir");
    fs::write(
        &path,
        format!(
            r#"{{"dataset": {{"csv": {{"path": "{}"}}}}, "budget_mb": 1, "output_dir": "{}"}}"#,
            missing.display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = mmfedmc().args(["run", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn compare_writes_a_sorted_table() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", "mmfedmc");
    let b = write_config(dir.path(), "b.json", "decision_level");
    let out = dir.path().join("cmp");
    let status = mmfedmc()
        .args(["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--output-dir", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let methods: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["decision_level", "mmfedmc"]);

    let single = mmfedmc().args(["compare", a.to_str().unwrap()]).output().unwrap();
    assert_eq!(single.status.code(), Some(2));
}

#[test]
fn lists_methods() {
    let out = mmfedmc().arg("methods").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["mmfedmc", "decision_level", "random_both", "random_submodel"] {
        assert!(text.contains(name));
    }
}
