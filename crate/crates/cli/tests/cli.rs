use std::path::Path;
use std::process::{Command, Output};

fn lesionmap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesionmap"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn lesionmap")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = lesionmap(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lesionmap(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(lesionmap(&["synth", "--count", "x"], dir.path()).status.code(), Some(2));
    // required value missing from both flags and config
    assert_eq!(lesionmap(&["synth", "--count", "10"], dir.path()).status.code(), Some(2));
    assert_eq!(lesionmap(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = lesionmap(&["stats", "--labels", "nope.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "out = data\ncuont = 10\n").unwrap();
    let out = lesionmap(&["--config", "run.cfg", "synth"], dir.path());
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cuont"));
}

/// synth → stats → preprocess → split → train → eval → explain, returning
/// the bytes of every artifact that should be reproducible.
fn pipeline(root: &Path) -> Vec<(&'static str, Vec<u8>)> {
    ok(&["synth", "--out", "data", "--count", "40", "--classes", "4", "--seed", "3"], root);
    let stats = ok(&["stats", "--labels", "data/labels.csv"], root);
    assert!(stats.contains("10"), "{stats}");
    let pre = ok(
        &["preprocess", "--in", "data", "--out", "pre", "--clahe", "--resize", "48", "--hist-csv", "hist.csv"],
        root,
    );
    assert!(pre.contains("chi"), "{pre}");
    ok(&["split", "--labels", "data/labels.csv", "--out", "splits", "--seed", "3"], root);

    std::fs::write(root.join("train.cfg"), "images = data\nlabels = splits/train.csv\nepochs = 2\nseed = 3\n").unwrap();
    ok(&["--config", "train.cfg", "train", "--out", "model.bin"], root);
    for f in ["model.bin", "model.bin.model", "model.bin.run", "model.bin.epochs.csv"] {
        assert!(root.join(f).is_file(), "{f} missing");
    }
    let run = std::fs::read_to_string(root.join("model.bin.run")).unwrap();
    assert!(run.contains("epochs = 2") && run.contains("optimizer = sgd"), "{run}");

    let table = ok(
        &["eval", "--images", "data", "--labels", "splits/test.csv", "--weights", "model.bin", "--report", "report.csv"],
        root,
    );
    assert!(table.contains("Accuracy (%)"), "{table}");
    let report = std::fs::read_to_string(root.join("report.csv")).unwrap();
    assert!(report.starts_with("model,accuracy,"), "{report}");

    let first = std::fs::read_to_string(root.join("data/labels.csv")).unwrap();
    let id = first.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    let image = format!("data/{id}.png");
    let said = ok(&["explain", "--image", &image, "--weights", "model.bin", "--out", "overlay.png"], root);
    assert!(said.starts_with("class "), "{said}");
    std::fs::create_dir(root.join("maps")).unwrap();
    ok(&["explain", "--image", &image, "--weights", "model.bin", "--class", "1", "--out", "maps"], root);

    let mut artifacts = Vec::new();
    for name in [
        "data/labels.csv",
        "data/lesions.csv",
        "hist.csv",
        "splits/train.csv",
        "splits/test.csv",
        "model.bin",
        "model.bin.model",
        "model.bin.run",
        "model.bin.epochs.csv",
        "report.csv",
        "overlay.png",
        "maps/overlay.png",
        "maps/heatmap.png",
    ] {
        artifacts.push((name, std::fs::read(root.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))));
    }
    artifacts.push(("preprocessed image", std::fs::read(root.join("pre").join(format!("{id}.png"))).unwrap()));
    artifacts
}

#[test]
fn full_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn logged_config_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["synth", "--out", "data", "--count", "20", "--classes", "2"], root);
    ok(
        &["train", "--images", "data", "--labels", "data/labels.csv", "--epochs", "1", "--lr", "0.02", "--out", "a.bin"],
        root,
    );
    // the .run file names a.bin as output; the flag redirects it
    ok(&["--config", "a.bin.run", "train", "--out", "b.bin"], root);
    assert_eq!(std::fs::read(root.join("a.bin")).unwrap(), std::fs::read(root.join("b.bin")).unwrap());
}
