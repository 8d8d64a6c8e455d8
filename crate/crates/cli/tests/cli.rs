use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn typweight(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_typweight"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: [&str; 10] = [
    "--set",
    "num_classes=3",
    "--set",
    "dim=4",
    "--set",
    "train_per_class=40",
    "--set",
    "test_typical_per_class=10",
    "--set",
    "test_atypical_per_class=8",
];

fn gen(dir: &Path) {
    let mut args = vec!["gen", "--out", "data", "--seed", "3"];
    args.extend(SMALL);
    ok(&typweight(dir, &args));
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn gen_writes_three_splits() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    let data = tmp.path().join("data");
    assert_eq!(rows(&data.join("train.csv")), 120);
    assert_eq!(rows(&data.join("test_typical.csv")), 30);
    assert_eq!(rows(&data.join("test_atypical.csv")), 24);
    let header = fs::read_to_string(data.join("train.csv")).unwrap();
    assert!(header.starts_with("sample_id,f0,f1,f2,f3,label,oracle_typ\n"));
    assert!(fs::read_to_string(data.join("generator.toml"))
        .unwrap()
        .contains("seed = 3"));
}

#[test]
fn score_train_plot_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir);
    ok(&typweight(
        dir,
        &[
            "score",
            "--train",
            "data/train.csv",
            "--out",
            "general.csv",
            "--model-out",
            "svm",
        ],
    ));
    ok(&typweight(
        dir,
        &[
            "score",
            "--train",
            "data/train.csv",
            "--mode",
            "class-specific",
            "--out",
            "cls.csv",
        ],
    ));
    assert_eq!(rows(&dir.join("general.csv")), 120);
    assert!(dir.join("svm/ocsvm_0.json").exists());
    ok(&typweight(
        dir,
        &[
            "train",
            "--train",
            "data/train.csv",
            "--eval",
            "typical=data/test_typical.csv",
            "--eval",
            "atypical=data/test_atypical.csv",
            "--class-scores",
            "cls.csv",
            "--set",
            "weighting.variant=\"cls_atypicality\"",
            "--hidden",
            "8",
            "--epochs",
            "3",
            "--out",
            "run",
        ],
    ));
    let metrics = fs::read_to_string(dir.join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["evals"].as_array().unwrap().len(), 2);
    }
    // external weights are built once
    assert!(dir.join("run/weights/epoch_1.csv").exists());
    assert!(!dir.join("run/weights/epoch_2.csv").exists());
    ok(&typweight(
        dir,
        &[
            "plot",
            "--data",
            "data/test_atypical.csv",
            "--model",
            "run/model.json",
            "--dims",
            "1,2",
            "--out",
            "p.svg",
        ],
    ));
    let svg = fs::read_to_string(dir.join("p.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 24);
}

#[test]
fn internal_weights_refresh_every_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir);
    ok(&typweight(
        dir,
        &[
            "train",
            "--train",
            "data/train.csv",
            "--set",
            "weighting.variant=internal_prob",
            "--epochs",
            "3",
        ],
    ));
    for e in 1..=3 {
        assert!(dir.join(format!("run/weights/epoch_{e}.csv")).exists());
    }
}

fn write_plan(dir: &Path) {
    fs::write(
        dir.join("plan.toml"),
        r#"
repeats = 2
losses = ["ms_hinge"]
report_epochs = [1, 2]

[data]
num_classes = 3
dim = 4
train_per_class = 30
test_typical_per_class = 10
test_atypical_per_class = 10

[train]
epochs = 2

[[weightings]]
variant = "uniform"

[[weightings]]
variant = "atypicality"
"#,
    )
    .unwrap();
}

#[test]
fn sweep_outputs_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_plan(dir);
    ok(&typweight(
        dir,
        &[
            "sweep",
            "--config",
            "plan.toml",
            "--threads",
            "1",
            "--out",
            "a",
        ],
    ));
    ok(&typweight(
        dir,
        &[
            "sweep",
            "--config",
            "plan.toml",
            "--threads",
            "2",
            "--out",
            "b",
        ],
    ));
    let a = fs::read(dir.join("a/report.json")).unwrap();
    assert_eq!(a, fs::read(dir.join("b/report.json")).unwrap());
    for f in [
        "aggregates.csv",
        "table_by_weighting.txt",
        "table_by_weighting.csv",
        "table_by_loss.txt",
    ] {
        assert!(dir.join("a").join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 2 * 2 * 2 * 2);
    assert_eq!(report["plan"]["repeats"], 2);

    ok(&typweight(
        dir,
        &[
            "sweep",
            "--config",
            "plan.toml",
            "--seed",
            "9",
            "--out",
            "c",
        ],
    ));
    assert_ne!(a, fs::read(dir.join("c/report.json")).unwrap());
}

#[test]
fn failed_cells_set_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_plan(dir);
    let out = typweight(
        dir,
        &[
            "sweep",
            "--config",
            "plan.toml",
            "--set",
            "train.learning_rate=1.7976931348623157e308",
            "--set",
            "losses=[\"softmax_log\"]",
            "--out",
            "x",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("failed"));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("x/report.json")).unwrap()).unwrap();
    assert!(!report["failures"].as_array().unwrap().is_empty());
}

#[test]
fn bad_input_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(
        typweight(dir, &["sweep", "--preset", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(
        typweight(dir, &["gen", "--set", "nonsense"]).status.code(),
        Some(2)
    );
    assert_eq!(
        typweight(dir, &["gen", "--set", "shell=[4.0, 2.5]"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        typweight(dir, &["train", "--train", "missing.csv"])
            .status
            .code(),
        Some(2)
    );
}
