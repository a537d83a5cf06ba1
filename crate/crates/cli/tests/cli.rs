use std::path::Path;
use std::process::{Command, Output};

fn cascade(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    for text in ["scenes = 0\n", "no_such_key = 1\n", "profile = \"huge\"\n", "scenes = [\n"] {
        std::fs::write(&cfg, text).unwrap();
        let out = cascade(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(2), "{text}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = cascade(&["gen-data", "--config", "/nonexistent/cfg.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["label", "train", "search", "eval", "simulate", "inspect-tree"] {
        let out = cascade(&[cmd], dir.path());
        assert_eq!(out.status.code(), Some(3), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"), "{cmd}");
    }
}

#[test]
fn corrupt_dataset_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("episodes.jsonl"), "{\"schema\":\"cascade-episodes\",\"version\":1}\n{oops\n").unwrap();
    let out = cascade(&["inspect-tree"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_data_writes_artifacts_and_keeps_stdout_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, "scenes = 6\n").unwrap();
    let out = cascade(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    for name in ["episodes.jsonl", "splits.json", "manifest.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}
