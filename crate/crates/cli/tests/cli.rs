use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn aigi(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aigi"))
        .current_dir(cwd)
        .env_remove("AIGI_RUN_ROOT")
        .env_remove("AIGI_DECODE_CACHE")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn aigi")
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = aigi(cwd, args);
    assert!(
        out.status.success(),
        "aigi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn toy_fixture(dir: &Path) {
    ok(
        dir,
        &[
            "make-fixtures",
            "--out",
            "toy",
            "--train-per-class",
            "12",
            "--test-per-class",
            "6",
        ],
    );
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = aigi(dir.path(), &["train", "--run-dir", "r"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--manifest"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(aigi(dir.path(), &["train", "--epoch", "3"]).status.code(), Some(1));
    assert_eq!(aigi(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_oracle_and_unknown_oracle() {
    let dir = TempDir::new().unwrap();
    toy_fixture(dir.path());
    let missing = aigi(dir.path(), &["dire", "--input", "toy", "--run-dir", "a"]);
    assert_eq!(missing.status.code(), Some(1));
    let unknown = aigi(
        dir.path(),
        &["dire", "--oracle", "ddpm", "--input", "toy", "--run-dir", "b"],
    );
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn unreadable_manifest_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("m.tsv"),
        "path\tabbreviation\tsplit\nnope.png\tReal\ttrain\n",
    )
    .unwrap();
    let out = aigi(dir.path(), &["train", "--manifest", "m.tsv", "--run-dir", "r"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn explicit_defaults_snapshot_identically() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    toy_fixture(d);
    let base = ["train", "--manifest", "toy/manifest.tsv", "--epochs", "1"];
    ok(d, &[&base[..], &["--run-dir", "a"]].concat());
    ok(
        d,
        &[
            &base[..],
            &["--run-dir", "b", "--batch-size", "16", "--lr", "1e-6", "--seed", "0"],
        ]
        .concat(),
    );
    let a = fs::read_to_string(d.join("a/config.toml")).unwrap();
    let b = fs::read_to_string(d.join("b/config.toml")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        fs::read(d.join("a/model.safetensors")).unwrap(),
        fs::read(d.join("b/model.safetensors")).unwrap()
    );
}

#[test]
fn config_file_and_flags_merge() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    toy_fixture(d);
    fs::write(
        d.join("run.toml"),
        "[train]\nmanifest = \"toy/manifest.tsv\"\n[train.fit]\nepochs = 1\nbatch_size = 8\n",
    )
    .unwrap();
    ok(
        d,
        &["--config", "run.toml", "train", "--batch-size", "4", "--run-dir", "r"],
    );
    let snap = fs::read_to_string(d.join("r/config.toml")).unwrap();
    assert!(snap.contains("batch_size = 4"), "{snap}");
    assert!(snap.contains("epochs = 1"), "{snap}");

    fs::write(d.join("bad.toml"), "[train]\nepoch = 1\n").unwrap();
    assert_eq!(aigi(d, &["--config", "bad.toml", "train"]).status.code(), Some(1));
}

#[test]
fn train_predict_evaluate_report() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    toy_fixture(d);
    ok(
        d,
        &[
            "train",
            "--manifest",
            "toy/manifest.tsv",
            "--epochs",
            "2",
            "--lr",
            "1e-3",
            "--run-dir",
            "train",
        ],
    );
    for f in [
        "config.toml",
        "loss_history.tsv",
        "model.safetensors",
        "checkpoints/epoch-02.safetensors",
    ] {
        assert!(d.join("train").join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(d.join("train/loss_history.tsv")).unwrap();
    assert!(history.starts_with("epoch\tstep\tloss"));

    let predict = [
        "predict",
        "--checkpoint",
        "train/model.safetensors",
        "--manifest",
        "toy/manifest.tsv",
        "--split",
        "test",
    ];
    ok(d, &[&predict[..], &["--run-dir", "p1"]].concat());
    ok(d, &[&predict[..], &["--run-dir", "p2", "--batch-size", "5"]].concat());
    let p1 = fs::read_to_string(d.join("p1/predictions.tsv")).unwrap();
    assert_eq!(p1, fs::read_to_string(d.join("p2/predictions.tsv")).unwrap());
    assert_eq!(p1.lines().filter(|l| !l.starts_with('#')).count(), 1 + 18);

    ok(
        d,
        &[
            "evaluate",
            "--manifest",
            "toy/manifest.tsv",
            "--predictions",
            "p1/predictions.tsv",
            "p2/predictions.tsv",
            "--split",
            "test",
            "--run-dir",
            "eval",
        ],
    );
    let md = fs::read_to_string(d.join("eval/report.md")).unwrap();
    assert!(md.contains("CLIP (p1/predictions)"), "{md}");
    assert!(md.contains("CLIP (p2/predictions)"), "{md}");

    ok(d, &["report", "--reports", "eval/report.csv", "--run-dir", "rep"]);
    assert_eq!(
        fs::read_to_string(d.join("rep/report.csv")).unwrap(),
        fs::read_to_string(d.join("eval/report.csv")).unwrap()
    );

    // Evaluating on the wrong split leaves manifest entries unmatched.
    let wrong = aigi(
        d,
        &[
            "evaluate",
            "--manifest",
            "toy/manifest.tsv",
            "--predictions",
            "p1/predictions.tsv",
            "--split",
            "train",
            "--run-dir",
            "bad",
        ],
    );
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn predict_on_a_directory() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    toy_fixture(d);
    ok(
        d,
        &[
            "train",
            "--manifest",
            "toy/manifest.tsv",
            "--epochs",
            "1",
            "--run-dir",
            "t",
        ],
    );
    ok(
        d,
        &[
            "predict",
            "--checkpoint",
            "t/model.safetensors",
            "--input",
            "toy/STR",
            "--run-dir",
            "p",
        ],
    );
    let text = fs::read_to_string(d.join("p/predictions.tsv")).unwrap();
    assert_eq!(
        text.lines()
            .filter(|l| l.ends_with(".png") || l.contains(".png\t"))
            .count(),
        18
    );

    fs::create_dir(d.join("empty")).unwrap();
    let out = aigi(
        d,
        &[
            "predict",
            "--checkpoint",
            "t/model.safetensors",
            "--input",
            "empty",
            "--run-dir",
            "q",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dire_scores_maps_and_report() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["make-fixtures", "--kind", "dire", "--out", "dd", "--count", "8"]);
    ok(
        d,
        &[
            "dire",
            "--oracle",
            "toy",
            "--manifest",
            "dd/manifest.tsv",
            "--save-maps",
            "--run-dir",
            "run",
        ],
    );
    let maps = fs::read_dir(d.join("run/maps")).unwrap().count();
    assert_eq!(maps, 16);
    let scores = fs::read_to_string(d.join("run/scores.tsv")).unwrap();
    assert!(scores.contains("# threshold:"));
    let md = fs::read_to_string(d.join("run/report.md")).unwrap();
    assert!(md.contains("DIRE overall real/fake accuracy: 1.000"), "{md}");

    // Unlabelled directory input without a threshold still scores.
    ok(
        d,
        &["dire", "--oracle", "toy", "--input", "dd/TOY", "--run-dir", "plain"],
    );
    let plain = fs::read_to_string(d.join("plain/scores.tsv")).unwrap();
    assert!(!plain.contains("# threshold:"));
    assert!(!d.join("plain/report.csv").exists());

    ok(
        d,
        &[
            "dire",
            "--oracle",
            "toy",
            "--input",
            "dd/TOY",
            "--threshold",
            "0.1",
            "--run-dir",
            "fixed",
        ],
    );
    let fixed = fs::read_to_string(d.join("fixed/scores.tsv")).unwrap();
    assert!(fixed.lines().skip(3).all(|l| l.ends_with("\tfake")), "{fixed}");
}
