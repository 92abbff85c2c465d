use std::path::Path;
use std::process::{Command, Output};

fn swarmnav(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarmnav"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn gradcheck_ops_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = swarmnav(dir.path(), &["gradcheck", "--scope", "ops", "--name", "g"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("g/gradcheck.csv")).unwrap();
    assert!(csv.lines().count() > 30);
    assert!(dir.path().join("g/manifest.toml").exists());
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(swarmnav(dir.path(), &["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(swarmnav(dir.path(), &["train", "--set", "train.batch_sise=8"]).status.code(), Some(3));

    let ckpt = dir.path().join("broken.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let o = swarmnav(dir.path(), &["eval", "--preset", "smoke", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(6), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn baseline_eval_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let o = swarmnav(
        dir.path(),
        &["eval", "--preset", "smoke", "--method", "apf", "--set", "eval.steps=40", "--set", "eval.maps=1", "--name", "e"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("e/results.csv")).unwrap();
    assert!(csv.starts_with("method,"));
    assert!(csv.contains("SR"));
}
