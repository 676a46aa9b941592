use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cusal"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run_tiny(out: &Path) -> std::process::Output {
    bin()
        .args(["run", fixture("tiny.toml").to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap()
}

#[test]
fn dry_run_validates_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", fixture("tiny.toml").to_str().unwrap(), "--dry-run", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(fixture("tiny.toml")).unwrap();
    std::fs::write(&bad, text.replace("rounds = 3", "rounds = 3\nunknown_key = 1")).unwrap();
    let out = bin().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));

    let idx = dir.path().join("idx.toml");
    let body = text.split("[dataset]").next().unwrap().to_string()
        + "[dataset]\nkind = \"idx\"\nimages = \"missing-images.idx\"\nlabels = \"missing-labels.idx\"\n";
    std::fs::write(&idx, body).unwrap();
    let out = bin().args(["run", idx.to_str().unwrap(), "--dry-run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing-images.idx"));

    let status = bin().args(["run", "/nonexistent/config.toml"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let out = run_tiny(&blocker.join("sub"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn golden_csv_and_byte_identical_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run_tiny(&out).status.code(), Some(0));
    let first = std::fs::read(out.join("results.csv")).unwrap();
    let golden = std::fs::read(fixture("tiny_golden.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first), String::from_utf8_lossy(&golden));
    let summary = std::fs::read(out.join("summary.json")).unwrap();

    let status = bin()
        .args(["run", fixture("tiny.toml").to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "1"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(std::fs::read(out.join("results.csv")).unwrap(), first);
    assert_eq!(std::fs::read(out.join("summary.json")).unwrap(), summary);

    let text = String::from_utf8(first).unwrap();
    let mut totals = std::collections::HashMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 12);
        let total: usize = f[3].parse::<usize>().unwrap() + f[4].parse::<usize>().unwrap();
        assert_eq!(*totals.entry((f[0].to_string(), f[1].to_string())).or_insert(total), total);
        let sel: usize = f[9].parse::<usize>().unwrap() + f[10].parse::<usize>().unwrap();
        match (f[0], f[2]) {
            ("cusal", r) if r != "0" => assert_eq!(sel, 4),
            _ => assert_eq!(sel, 0),
        }
    }
    for name in ["test_acc.svg", "test_ece.svg", "pool_ece.svg", "replicas/cusal_seed0.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn seed_offset_shifts_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", fixture("tiny.toml").to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed-offset", "10"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("replicas/random_seed11.csv").exists());
}
