use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pnkr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnkr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = pnkr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tiny_pipeline_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let p = |x: &str| d.path().join(x);
    ok(&["gen-templates", "--preset", "tiny", "--out-dir", s(&p("t"))]);
    let tpl = p("t/templates.pnkt");
    ok(&["gen-mock", "--preset", "tiny", "--s", "1", "--beta", "0.01", "--templates", s(&tpl), "--out-dir", s(&p("m"))]);
    ok(&[
        "solve", "--preset", "tiny", "--s", "1", "--beta", "0.01", "--templates", s(&tpl), "--cube",
        s(&p("m/noisy.pnkd")), "--out-dir", s(&p("run")),
    ]);
    let history = fs::read_to_string(p("run/history.tsv")).unwrap();
    assert!(history.lines().count() >= 2);
    assert!(history.starts_with("loop\tupdates\ttotal_updates\tdata_residual\tres_k\terror_k\tseconds"));
    ok(&[
        "maps", "--preset", "tiny", "--s", "1", "--templates", s(&tpl), "--coefficients", s(&p("run/coefficients.pnku")),
        "--losvd", "0.1,0.2", "--losvd", "-0.5,0.5", "--out-dir", s(&p("maps")),
    ]);
    assert!(p("maps/maps.tsv").exists() && p("maps/losvd_1.tsv").exists() && !p("maps/losvd_2.tsv").exists());
    for dir in ["t", "m", "run", "maps"] {
        let m = fs::read_to_string(p(dir).join("manifest.toml")).unwrap();
        assert!(m.contains("version = ") && m.contains("preset = \"tiny\""), "{m}");
    }
}

#[test]
fn missing_cube_names_the_path() {
    let d = tempfile::tempdir().unwrap();
    ok(&["gen-templates", "--preset", "tiny", "--out-dir", s(d.path())]);
    let missing = d.path().join("nowhere.pnkd");
    let out = pnkr(&[
        "solve", "--preset", "tiny", "--templates", s(&d.path().join("templates.pnkt")), "--cube", s(&missing),
        "--out-dir", s(&d.path().join("o")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("nowhere.pnkd"), "{err}");
}

#[test]
fn bad_arguments_fail_with_one_line() {
    for args in [&["solve", "--no-such-flag"][..], &["frobnicate"], &["solve", "--s", "2"]] {
        let out = pnkr(args);
        assert!(!out.status.success());
        assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1, "{args:?}");
    }
}

#[test]
fn mismatched_grid_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = |x: &str| d.path().join(x);
    ok(&["gen-templates", "--preset", "tiny", "--out-dir", s(&p("t"))]);
    let tpl = p("t/templates.pnkt");
    ok(&["gen-mock", "--preset", "tiny", "--templates", s(&tpl), "--out-dir", s(&p("m"))]);
    let out = pnkr(&[
        "solve", "--preset", "desk", "--templates", s(&tpl), "--cube", s(&p("m/noisy.pnkd")), "--out-dir",
        s(&p("o")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn robustness_batch_writes_one_manifest_per_seed() {
    let d = tempfile::tempdir().unwrap();
    ok(&["robustness", "--n", "3", "--preset", "tiny", "--max-loops", "50", "--out-dir", s(d.path())]);
    let mut seeds = Vec::new();
    for k in 0..3 {
        let m = fs::read_to_string(d.path().join(format!("run_{k}/manifest.toml"))).unwrap();
        let line = m.lines().find(|l| l.starts_with("base-seed")).unwrap().to_string();
        seeds.push(line);
    }
    seeds.sort();
    seeds.dedup();
    assert_eq!(seeds.len(), 3);
    let summary = fs::read_to_string(d.path().join("summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "3");
    assert!(row[2].parse::<f64>().unwrap() >= 0.0);
}
