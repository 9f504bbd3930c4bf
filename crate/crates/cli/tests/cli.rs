use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rnrdp"))
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["eval"]).output().unwrap(); // missing --ckpt
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--out"])
        .arg(dir.path())
        .args(["eval", "--ckpt"])
        .arg(dir.path().join("missing.bin"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = bin()
        .args(["--out"])
        .arg(dir.path())
        .args(["--config"])
        .arg(&cfg)
        .arg("gen-demos")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_demos_writes_demo_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, "env = bimodal_reach\ndemos = 3\n").unwrap();
    let out = bin()
        .args(["--out"])
        .arg(dir.path())
        .args(["--config"])
        .arg(&cfg)
        .args(["--seed", "5"])
        .arg("gen-demos")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.path().join("demos_bimodal_reach_5.bin");
    assert!(path.exists());
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"RNRDEMO1");
}
