use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PAPER_TOML: &str = include_str!("../../../configs/paper.toml");

fn isar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isar"))
        .args(args)
        .output()
        .unwrap()
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("c.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_prints_checksums_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), PAPER_TOML);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out_a = isar(&[
        "pipeline",
        "--config",
        s(&cfg),
        "--seed",
        "4",
        "--out",
        s(&a),
    ]);
    assert!(
        out_a.status.success(),
        "{}",
        String::from_utf8_lossy(&out_a.stderr)
    );
    let out_b = isar(&[
        "pipeline",
        "--config",
        s(&cfg),
        "--seed",
        "4",
        "--out",
        s(&b),
    ]);
    assert_eq!(out_a.stdout, out_b.stdout);
    let stdout = String::from_utf8(out_a.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 5);
    assert!(stdout.starts_with("report.txt "));
    assert!(fs::read_to_string(a.join("manifest.txt"))
        .unwrap()
        .contains("seed = 4"));
}

#[test]
fn flip_flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), PAPER_TOML);
    let run = |flag: &str, dir: &str| {
        let out = tmp.path().join(dir);
        assert!(
            isar(&["pipeline", "--config", s(&cfg), flag, "--out", s(&out)])
                .status
                .success()
        );
        fs::read_to_string(out.join("image.txt")).unwrap()
    };
    let on = run("--flip", "on");
    let off = run("--no-flip", "off");
    assert!(on.contains("flipped = true"), "{on}");
    assert!(off.contains("flipped = false"), "{off}");
}

#[test]
fn simulate_and_experiments_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let short = PAPER_TOML
        .replace("cpi_s = 2.0e-3", "cpi_s = 0.2e-3")
        .replace(
            "cpi_list_s = [1.0e-3, 2.0e-3, 5.0e-3]",
            "cpi_list_s = [0.2e-3]",
        );
    let cfg = config(tmp.path(), &short);
    let out = tmp.path().join("o");
    assert!(isar(&["simulate", "--config", s(&cfg), "--out", s(&out)])
        .status
        .success());
    assert!(out.join("echoes.bin").exists());

    let r = isar(&[
        "nmse-diff",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--trials",
        "2",
        "--i",
        "4",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(
        fs::read_to_string(out.join("nmse_diff.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );

    let r = isar(&[
        "nmse-doppler",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--trials",
        "2",
        "--i",
        "3",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    // M = 25 frames, check frames 4..=24.
    assert_eq!(
        fs::read_to_string(out.join("nmse_doppler.csv"))
            .unwrap()
            .lines()
            .count(),
        22
    );
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");

    let bad = config(
        tmp.path(),
        &PAPER_TOML.replace("cpi_s = 2.0e-3", "cpi_s = 2.0e-3\ncpi_ms = 2"),
    );
    let r = isar(&["pipeline", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("ConfigParse"));

    let unknown = config(tmp.path(), &PAPER_TOML.replace("\"sedan-side\"", "\"bus\""));
    let r = isar(&["pipeline", "--config", s(&unknown), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&r.stderr).contains("UnknownModel"));

    let good = config(tmp.path(), PAPER_TOML);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let r = isar(&[
        "pipeline",
        "--config",
        s(&good),
        "--out",
        s(&blocker.join("sub")),
    ]);
    assert_eq!(r.status.code(), Some(3));

    let far = config(
        tmp.path(),
        &PAPER_TOML.replace("y0_m = 20.0", "y0_m = 300.0"),
    );
    let r = isar(&["pipeline", "--config", s(&far), "--out", s(&out)]);
    assert_eq!(
        r.status.code(),
        Some(6),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );

    let r = isar(&["pipeline", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(isar(&["--help"]).status.code(), Some(0));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), PAPER_TOML);
    let run = |threads: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let r = Command::new(env!("CARGO_BIN_EXE_isar"))
            .env("ISAR_THREADS", threads)
            .args(["pipeline", "--config", s(&cfg), "--out", s(&out)])
            .output()
            .unwrap();
        assert!(r.status.success());
        r.stdout
    };
    assert_eq!(run("1", "one"), run("4", "four"));
}
