use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn txcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txcnn")).args(args).output().expect("spawn txcnn")
}

fn ok(args: &[&str]) -> String {
    let out = txcnn(args);
    assert!(
        out.status.success(),
        "txcnn {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(out: &Path, seed: &str) {
    ok(&[
        "generate",
        "--out",
        p(out),
        "--seed",
        seed,
        "--mice-per-group",
        "3",
        "--slices",
        "3..3",
        "--set",
        "base_dims=48x64",
        "--set",
        "dim_jitter=2x2",
        "--set",
        "weeks=0,1,3,4",
    ]);
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    generate(&a, "7");
    generate(&b, "7");
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 3 * 2 * 4 * 3);
    assert!(ta == tb, "same seed produced different files");
}

#[test]
fn preprocess_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, prep, run) = (dir.path().join("data"), dir.path().join("prep"), dir.path().join("run"));
    generate(&data, "3");
    let report = ok(&[
        "preprocess",
        "--data",
        p(&data),
        "--out",
        p(&prep),
        "--mode",
        "abs",
        "--timestamps",
        "on",
        "--seed",
        "3",
    ]);
    assert!(report.contains("held out"), "{report}");

    let train_args = [
        "train",
        "--model",
        "xcnn-ts-absdiff",
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--seed",
        "3",
        "--data",
        p(&prep),
    ];
    let mut args = train_args.to_vec();
    args.extend(["--out", p(&run)]);
    ok(&args);
    for f in ["model.ckpt", "metrics.csv", "predictions.csv", "config.txt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    let again = dir.path().join("again");
    let mut args = train_args.to_vec();
    args.extend(["--out", p(&again)]);
    ok(&args);
    assert_eq!(fs::read(run.join("model.ckpt")).unwrap(), fs::read(again.join("model.ckpt")).unwrap());
    assert_eq!(
        fs::read(run.join("predictions.csv")).unwrap(),
        fs::read(again.join("predictions.csv")).unwrap()
    );

    let preds = dir.path().join("eval.csv");
    ok(&[
        "evaluate",
        "--checkpoint",
        p(&run.join("model.ckpt")),
        "--data",
        p(&prep),
        "--predictions",
        p(&preds),
    ]);
    assert_eq!(fs::read(&preds).unwrap(), fs::read(run.join("predictions.csv")).unwrap());
}

#[test]
fn training_rejects_missing_channels() {
    let dir = tempfile::tempdir().unwrap();
    let (data, prep) = (dir.path().join("data"), dir.path().join("prep"));
    generate(&data, "4");
    ok(&["preprocess", "--data", p(&data), "--out", p(&prep), "--mode", "none"]);
    let out = txcnn(&["train", "--model", "cnn-ts", "--epochs", "1", "--data", p(&prep)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("timestamps"));
}

#[test]
fn gradcheck_passes_and_reports_each_check() {
    let stdout = ok(&["gradcheck", "--instances", "1", "--seed", "5"]);
    assert!(stdout.lines().count() >= 6 + 2, "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn bad_settings_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = txcnn(&["generate", "--out", p(&dir.path().join("x")), "--set", "no_such_key=1"]);
    assert!(!out.status.success());
}
