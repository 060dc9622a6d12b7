use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_takeover-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn bundle() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/synthetic_bundle")
}

/// Every file under `dir`, relative path and bytes, sorted.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn assert_same(a: &Path, b: &Path) {
    let (x, y) = (snapshot(a), snapshot(b));
    assert!(!x.is_empty());
    assert_eq!(x.len(), y.len());
    for ((pa, ba), (pb, bb)) in x.iter().zip(&y) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs", pa.display());
    }
}

#[test]
fn simulate_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        ok(&[
            "simulate", "--seed", "11", "--threads", threads, "--runs", "6", "--followers", "2",
            "--horizon", "40", "--out", out.to_str().unwrap(),
        ]);
    }
    assert_same(&a, &b);
    for f in ["metrics.jsonl", "takeover_cdf.csv", "aggregate.csv", "running_l2.csv", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert!(a.join("rollouts/run_00005.csv").exists());
    let report = ok(&["report", "--input", a.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&report.stdout).contains("idm-pid"));
}

#[test]
fn calibrate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        ok(&[
            "calibrate", "--seed", "5", "--threads", threads, "--bundle", bundle().to_str().unwrap(),
            "--particles", "60", "--generations", "2", "--replicates", "2", "--out", out.to_str().unwrap(),
        ]);
    }
    assert_same(&a, &b);
    let log = fs::read_to_string(a.join("generations.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn train_then_evaluate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "train", "--seed", "3", "--threads", "1", "--smoke", "--episodes", "4", "--checkpoint-every", "2",
            "--set", "sac.batch_size=16", "--set", "sac.random_steps=50", "--out", out.to_str().unwrap(),
        ]);
    }
    assert_same(&a, &b);
    assert!(a.join("checkpoints/policy_ep000002.bin").exists());
    let policy = a.join("policy.bin");
    let (ea, eb) = (dir.path().join("ea"), dir.path().join("eb"));
    for (out, threads) in [(&ea, "1"), (&eb, "4")] {
        ok(&[
            "evaluate", "--seed", "9", "--threads", threads, "--runs", "8", "--horizon", "30",
            "--policy", policy.to_str().unwrap(), "--controllers", "policy,idm-pid,hl",
            "--set", "evaluate.bootstrap=200", "--out", out.to_str().unwrap(),
        ]);
    }
    assert_same(&ea, &eb);
    let rates = fs::read_to_string(ea.join("rates.csv")).unwrap();
    assert_eq!(rates.lines().count(), 4);
}

#[test]
fn missing_leader_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate", "--seed", "1", "--leader", "/nonexistent/lead.csv", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/lead.csv"));
}

#[test]
fn missing_seed_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--runs", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn unknown_setting_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--seed", "1", "--set", "platoon.folowers=3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("platoon.folowers"));
}

#[test]
fn bad_checkpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    fs::write(&bad, b"not a policy at all").unwrap();
    let out = run(&[
        "evaluate", "--seed", "1", "--runs", "2", "--policy", bad.to_str().unwrap(), "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
