mod common;

use std::path::Path;
use std::process::{Command, Output};

fn ltg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltg")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, common::tiny_toml(&common::fixture())).unwrap();
    p.display().to_string()
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "[seqvae]\nepochs = 3\nwarmup = 1\n").unwrap();
    let o = ltg(&["ingest", "--config", bad.to_str().unwrap(), "--out", "x"], d.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warmup"));

    std::fs::write(&bad, "[rlfinetune]\nbatch_size = 0\n").unwrap();
    assert_eq!(code(&ltg(&["ingest", "--config", bad.to_str().unwrap()], d.path())), 2);

    let missing = d.path().join("nope.toml");
    assert_eq!(code(&ltg(&["ingest", "--config", missing.to_str().unwrap()], d.path())), 2);
    assert_eq!(code(&ltg(&["ingest", "--profile", "huge"], d.path())), 2);
    assert_eq!(code(&ltg(&["train-everything"], d.path())), 2);
    assert!(!d.path().join("x").join("ledger.jsonl").exists());
}

#[test]
fn dependency_errors_exit_3() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    let o = ltg(&["train-gan", "--config", &cfg, "--out", "run"], d.path());
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("ltg train-vae"), "{err}");
    assert_eq!(code(&ltg(&["evaluate", "--config", &cfg, "--out", "run"], d.path())), 3);
}

#[test]
fn stages_run_in_order_from_the_command_line() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    for stage in ["ingest", "train-vae", "train-gan", "pretrain-vh", "finetune-rl"] {
        let o = ltg(&[stage, "--config", &cfg, "--out", "run", "--seed", "5"], d.path());
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = ltg(&["generate", "--config", &cfg, "--out", "run", "--seed", "5", "--count", "7", "--model", "base"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(d.path().join("run/samples.txt")).unwrap().lines().count(), 7);
    let o = ltg(&["evaluate", "--config", &cfg, "--out", "run", "--seed", "5"], d.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("fid\t"));
    let vocab = std::fs::read_to_string(d.path().join("run/vocab.txt")).unwrap();
    assert!(vocab.lines().count() > 4);
}

#[test]
fn show_config_round_trips() {
    let d = tempfile::tempdir().unwrap();
    for profile in ["desk", "paper"] {
        let o = ltg(&["show-config", "--profile", profile, "--seed", "42"], d.path());
        assert_eq!(code(&o), 0);
        let first = String::from_utf8(o.stdout).unwrap();
        let p = d.path().join(format!("{profile}.toml"));
        std::fs::write(&p, &first).unwrap();
        let o = ltg(&["show-config", "--profile", profile, "--config", p.to_str().unwrap()], d.path());
        assert_eq!(String::from_utf8(o.stdout).unwrap(), first);
        // a full dump also reproduces the other profile's values
        let other = if profile == "desk" { "paper" } else { "desk" };
        let o = ltg(&["show-config", "--profile", other, "--config", p.to_str().unwrap()], d.path());
        assert_eq!(String::from_utf8(o.stdout).unwrap(), first);
    }
}
