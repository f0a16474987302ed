//! End-to-end tests driving the real binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_contextkgc")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

const TOY_TSV: &str = "A\tr1\tB\nA\tr2\tC\nB\tr1\tC\nD\tr2\tA\n";

fn toy_config(max_epochs: usize) -> String {
    format!(
        r#"seed = 7

[data]
train = "train.tsv"
test = "train.tsv"

[output]
dir = "out"

[sequence]
max_seq_len = 16

[encoder]
layers = 1
heads = 2
model_dim = 32
ff_dim = 64
dropout = 0.0

[train]
batch_size = 4
learning_rate = 1e-3
max_epochs = {max_epochs}
"#
    )
}

fn setup(dir: &Path, max_epochs: usize) {
    std::fs::write(dir.join("train.tsv"), TOY_TSV).unwrap();
    std::fs::write(dir.join("run.toml"), toy_config(max_epochs)).unwrap();
}

#[test]
fn prepare_reports_stats_and_caches() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path(), 10);
    let first = run_in(tmp.path(), &["prepare", "--config", "run.toml"]);
    assert!(first.status.success(), "stderr: {}", stderr(&first));
    assert!(stdout(&first).contains("entities=4 relations=2 triples=4"));
    assert!(stdout(&first).contains("computed"));
    let second = run_in(tmp.path(), &["prepare", "--config", "run.toml"]);
    assert!(second.status.success());
    assert!(stdout(&second).contains("cache hit"));
}

#[test]
fn prepare_missing_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.toml"), toy_config(10)).unwrap();
    // No train.tsv written.
    let out = run_in(tmp.path(), &["prepare", "--config", "run.toml"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("train.tsv"));
}

#[test]
fn overfit_train_eval_predict_flow() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path(), 200);
    let train = run_in(tmp.path(), &["train", "--config", "run.toml"]);
    assert!(train.status.success(), "stderr: {}", stderr(&train));
    assert!(tmp.path().join("out/model.muco").exists());

    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/trainlog.json")).unwrap())
            .unwrap();
    let epochs = log["epochs"].as_array().unwrap();
    let final_loss = epochs.last().unwrap()["mean_loss"].as_f64().unwrap();
    assert!(final_loss < 0.05, "final loss {final_loss}");

    // Training triples as pseudo-test: the memorizing model ranks gold first.
    let eval = run_in(
        tmp.path(),
        &[
            "eval",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/model.muco",
            "--filtered",
            "both",
        ],
    );
    assert!(eval.status.success(), "stderr: {}", stderr(&eval));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("out/eval_report_filtered.json")).unwrap(),
    )
    .unwrap();
    assert!(report.get("mrr").is_some());
    for k in ["1", "3", "10"] {
        assert!(report["hits"].get(k).is_some(), "missing hits.{k}");
    }
    assert!(report["hits"]["1"].as_f64().unwrap() >= 0.95);
    assert!(tmp.path().join("out/eval_report_raw.json").exists());

    let predict = run_in(
        tmp.path(),
        &[
            "predict",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/model.muco",
            "--head",
            "A",
            "--relation",
            "r1",
            "--top-k",
            "1",
        ],
    );
    assert!(predict.status.success(), "stderr: {}", stderr(&predict));
    let top = stdout(&predict);
    assert!(
        top.lines().next().unwrap().starts_with("B\t"),
        "expected B first, got: {top}"
    );

    let bad_k = run_in(
        tmp.path(),
        &[
            "predict",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/model.muco",
            "--head",
            "A",
            "--relation",
            "r1",
            "--top-k",
            "0",
        ],
    );
    assert!(!bad_k.status.success());
}

#[test]
fn trainlog_loss_sequence_is_seed_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path(), 12);
    let losses = |out_dir: &str| -> Vec<u64> {
        let run = run_in(
            tmp.path(),
            &["train", "--config", "run.toml", "--out", out_dir],
        );
        assert!(run.status.success(), "stderr: {}", stderr(&run));
        let log: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join(out_dir).join("trainlog.json")).unwrap(),
        )
        .unwrap();
        log["epochs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["mean_loss"].as_f64().unwrap().to_bits())
            .collect()
    };
    assert_eq!(losses("out_a"), losses("out_b"));
}

#[test]
fn zero_epochs_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path(), 0);
    let out = run_in(tmp.path(), &["train", "--config", "run.toml"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nothing to train"));
}

#[test]
fn eval_rejects_checkpoint_from_other_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path(), 5);
    let train = run_in(tmp.path(), &["train", "--config", "run.toml"]);
    assert!(train.status.success());
    // Same schema, different content: fingerprints must disagree.
    std::fs::write(tmp.path().join("other.tsv"), "X\tr1\tY\nY\tr1\tX\n").unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "eval",
            "--config",
            "run.toml",
            "--train",
            "other.tsv",
            "--test",
            "other.tsv",
            "--checkpoint",
            "out/model.muco",
        ],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("different dataset"));
}

#[test]
fn predict_unknown_head_warns_but_answers() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path(), 5);
    let train = run_in(tmp.path(), &["train", "--config", "run.toml"]);
    assert!(train.status.success());
    let out = run_in(
        tmp.path(),
        &[
            "predict",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/model.muco",
            "--head",
            "NOSUCH",
            "--relation",
            "r1",
            "--top-k",
            "2",
        ],
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("unknown head label"));
    assert_eq!(stdout(&out).lines().count(), 2);
}

#[test]
fn ablate_emits_three_reports_with_identical_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path(), 30);
    let out = run_in(tmp.path(), &["ablate", "--config", "run.toml"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let tsv = std::fs::read_to_string(tmp.path().join("out/ablation_summary.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 4); // header + one row per mode
    for mode in ["full", "head_only", "relation_only"] {
        assert!(lines.iter().any(|l| l.starts_with(mode)), "missing {mode} row");
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(
                tmp.path().join(format!("out/manifest_ablate_{mode}.json")),
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["seed"].as_u64().unwrap(), 7);
    }
    // Same eval set in every arm.
    let counts: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split('\t').nth(3).unwrap())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]));
}
