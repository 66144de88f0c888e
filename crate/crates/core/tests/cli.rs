use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use eegbigru::cli::{EXIT_DATA, EXIT_IO};
use eegbigru::train::TrainHistory;

const CONFIG: &str = r#"
[seeds]
global = 5

[synth]
n_recordings = 10
duration_s = 2.0

[pipeline]
window = 32
stride = 16

[arch]
seq_len = 32
gru_hidden = [4, 3]
head_input = 6
dense_hidden = [4]

[train]
max_epochs = 1
k_folds = 2
batch_size = 32
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eegbigru"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    ok(dir.path(), &["synth", "--config", "run.toml", "--out", "synth"]);
    dir
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(fs::read_dir(d.join("synth")).unwrap().filter(|e| {
        e.as_ref().unwrap().file_name().to_string_lossy().starts_with("rec_")
    }).count(), 10);

    ok(d, &["preprocess", "--config", "run.toml", "--manifest", "synth/manifest.csv", "--out", "prep"]);
    ok(d, &[
        "preprocess", "--config", "run.toml", "--manifest", "synth/manifest.csv", "--out", "prep_pf", "--mode",
        "paper_faithful",
    ]);
    let safe = fs::read_to_string(d.join("prep/pipeline_report.kv")).unwrap();
    let faithful = fs::read_to_string(d.join("prep_pf/pipeline_report.kv")).unwrap();
    assert_ne!(safe, faithful);
    for stage in ["filter.", "window.train.", "balance.train.", "augment.train.", "split.test."] {
        assert!(safe.contains(stage), "{stage} missing from\n{safe}");
    }
    for stage in ["filter.", "window.", "balance.", "augment.", "final.test."] {
        assert!(faithful.contains(stage), "{stage} missing from\n{faithful}");
    }
    let echoed = fs::read_to_string(d.join("prep_pf/config.resolved.toml")).unwrap();
    assert!(echoed.contains("mode = \"paper_faithful\"") && echoed.contains("dropout = \""));

    ok(d, &["train", "--config", "run.toml", "--dataset", "prep/dataset.bin", "--out", "train"]);
    for f in ["fold1_history.csv", "fold2_history.csv", "final_history.csv"] {
        let h = TrainHistory::from_csv(&fs::read_to_string(d.join("train").join(f)).unwrap()).unwrap();
        assert_eq!(h.records.len(), 1, "{f}");
    }
    assert!(fs::read_to_string(d.join("train/train.log")).unwrap().contains("fold2 epoch 1:"));
    assert!(!d.join("train/.lock").exists());

    let out = ok(d, &[
        "evaluate", "--config", "run.toml", "--checkpoint", "train/checkpoint.bin", "--dataset", "prep/dataset.bin",
        "--history", "train/final_history.csv", "--out", "eval",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Weighted avg"));
    for f in ["report.txt", "metrics.kv", "confusion.csv", "history.csv", "config.resolved.toml"] {
        assert!(d.join("eval").join(f).exists(), "{f}");
    }

    let a = ok(d, &[
        "predict", "--config", "run.toml", "--checkpoint", "train/checkpoint.bin", "--recording",
        "synth/rec_003.csv", "--out", "pa",
    ]);
    let b = ok(d, &[
        "predict", "--config", "run.toml", "--checkpoint", "train/checkpoint.bin", "--recording",
        "synth/rec_003.csv", "--out", "pb",
    ]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(fs::read(d.join("pa/predictions.csv")).unwrap(), fs::read(d.join("pb/predictions.csv")).unwrap());
    let summary = fs::read_to_string(d.join("pa/prediction.txt")).unwrap();
    assert!(summary.contains("majority vote") && summary.contains("windows = 15"));

    // a recording shorter than one window
    let text = fs::read_to_string(d.join("synth/rec_003.csv")).unwrap();
    let short: Vec<&str> = text.lines().take(21).collect();
    fs::write(d.join("short.csv"), short.join("\n") + "\n").unwrap();
    let out = run(d, &[
        "predict", "--config", "run.toml", "--checkpoint", "train/checkpoint.bin", "--recording", "short.csv",
        "--out", "pc",
    ]);
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no windows"));
}

#[test]
fn training_twice_gives_identical_histories() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["preprocess", "--config", "run.toml", "--manifest", "synth/manifest.csv", "--out", "prep"]);
    for out in ["t1", "t2"] {
        ok(d, &["train", "--config", "run.toml", "--dataset", "prep/dataset.bin", "--out", out]);
    }
    for f in ["fold1_history.csv", "fold2_history.csv", "final_history.csv", "checkpoint.bin", "train.log"] {
        assert_eq!(fs::read(d.join("t1").join(f)).unwrap(), fs::read(d.join("t2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes_separate_missing_input_from_stage_failure() {
    let dir = setup();
    let d = dir.path();
    let missing = run(d, &["preprocess", "--config", "run.toml", "--manifest", "absent.csv", "--out", "p1"]);
    assert_eq!(missing.status.code(), Some(EXIT_IO));

    // a 3-recording manifest leaves a class with a single recording, which
    // cannot be split into train and test
    let manifest = fs::read_to_string(d.join("synth/manifest.csv")).unwrap();
    let few: Vec<&str> = manifest.lines().take(4).collect();
    fs::write(d.join("synth/few.csv"), few.join("\n") + "\n").unwrap();
    let failed = run(d, &["preprocess", "--config", "run.toml", "--manifest", "synth/few.csv", "--out", "p2"]);
    assert_eq!(failed.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("split"));

    let bad = run(d, &["synth", "--config", "run.toml", "--out", "s2", "--mode", "sideways"]);
    assert_eq!(bad.status.code(), Some(2));
    fs::write(d.join("empty.toml"), "[synth]\nn_recordings = 0\n").unwrap();
    let empty = run(d, &["synth", "--config", "empty.toml", "--out", "s3"]);
    assert_eq!(empty.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("n_recordings"));
}
