//! Exit codes, overrides and bundle reproducibility through the binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn spdelab(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_spdelab"))
        .args(args)
        .output()
        .expect("binary runs");
    let text =
        String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().expect("exited normally"), text)
}

fn preset(name: &str) -> String {
    configs().join(format!("{name}.toml")).display().to_string()
}

#[test]
fn passing_run_exits_zero_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("good");
    let (code, text) = spdelab(&[
        "brackets",
        "--config",
        &preset("brackets-ns-good"),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("PASS full-rank"), "{text}");
    assert!(out.join("manifest.json").exists());

    let (code, text) = spdelab(&["report", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // the failing forcing cannot reach full rank
    let (code, text) = spdelab(&[
        "brackets",
        "--config",
        &preset("brackets-ns-failing"),
        "--set",
        "expect=\"full-rank\"",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("FAIL full-rank"), "{text}");
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    // config names a different experiment than the subcommand
    let (code, _) = spdelab(&[
        "qv",
        "--config",
        &preset("brackets-ns-good"),
        "--out-dir",
        d,
    ]);
    assert_eq!(code, 2);
    let (code, _) = spdelab(&[
        "brackets",
        "--config",
        &preset("brackets-ns-good"),
        "--set",
        "k=-3",
        "--out-dir",
        d,
    ]);
    assert_eq!(code, 2);
    let (code, _) = spdelab(&["report", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("ou-simulate");
    let run = |tag: &str, extra: &[&str]| {
        let out = dir.path().join(tag);
        let mut args = vec![
            "simulate",
            "--config",
            &cfg,
            "--replicas",
            "40",
            "--steps",
            "64",
        ];
        args.extend_from_slice(extra);
        let o = out.to_str().unwrap().to_string();
        args.extend_from_slice(&["--out-dir", &o]);
        let (code, text) = spdelab(&args);
        assert!(code == 0 || code == 1, "{text}");
        out
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--threads", "2"]);
    let mut csvs = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv") {
            let name = p.file_name().unwrap();
            let bytes = std::fs::read(&p).unwrap();
            assert_eq!(bytes, std::fs::read(b.join(name)).unwrap(), "{name:?}");
            assert_eq!(
                bytes,
                std::fs::read(c.join(name)).unwrap(),
                "{name:?} with 2 threads"
            );
            csvs += 1;
        }
    }
    assert!(csvs > 0);
}
