mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::*;
use miscomp_impact::corpus::{load_manifest, Reproducible};
use serde_json::json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_miscomp-impact"))
}

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(run(&["--help"], &[]).status.code(), Some(0));
    assert_eq!(run(&["report"], &[]).status.code(), Some(1));
    assert_eq!(run(&["report", "--run-dir", "x", "--format", "xml"], &[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], &[]).status.code(), Some(1));
}

#[test]
fn report_on_empty_dir_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["report", "--run-dir", s(dir.path())], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no records"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn report_groupings_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write_store(dir.path(), &all_rows());
    let o = run(&["report", "--group-by", "severity", "--format", "csv"], &[("IMPACT_RUN_DIR", s(dir.path()))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("enhancement,8,2449,2054,84%,968,40%,"), "{}", lines[1]);
    assert!(lines[2].starts_with("normal,33,10151,5608,55%,1951,19%,"), "{}", lines[2]);
    assert!(lines[3].starts_with("release_blocker,4,1226,1191,97%,294,24%,"), "{}", lines[3]);

    let o = run(&["report", "--run-dir", s(dir.path())], &[("IMPACT_FORMAT", "csv"), ("IMPACT_GROUP_BY", "tool")]);
    let text = stdout(&o);
    let groups: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(groups, ["Csmith", "EMI", "Orange", "yarpgen", "Alive", "User-reported"]);

    let a = stdout(&run(&["report", "--run-dir", s(dir.path()), "--group-by", "tool"], &[]));
    let b = stdout(&run(&["report", "--run-dir", s(dir.path()), "--group-by", "tool"], &[]));
    assert_eq!(a, b);
    assert!(a.contains("| Csmith | 10 | 3062 | 2482 (81%) | 1053 (34%) | 318 (10%) | 0.4% [5334] |"), "{a}");
}

#[test]
fn run_reports_summary_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let shims = make_shims(dir.path(), "950", "scale", &[], &[]);
    let bug = write_bug(dir.path(), "950", true, &shims, None);
    let manifest = write_corpus(dir.path(), &toy_corpus());
    let run_dir = dir.path().join("run");

    let o = run(&["run", "--run-dir", s(&run_dir), "--bug", "nope.json", "--manifest", s(&manifest)], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!run_dir.exists());

    let o = run(
        &["run", "--run-dir", s(&run_dir), "--bug", s(&bug), "--manifest", s(&manifest), "--parallelism", "4"],
        &[("IMPACT_RERUN_COUNT", "2")],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["variant_builds_ok"], 12);
    assert_eq!(summary["row"]["diff_pkgs"], 1);
    assert_eq!(summary["row"]["test_diffs"], 1);
    let progress = stderr(&o);
    assert_eq!(progress.lines().filter(|l| l.starts_with("[950] ")).count(), 4, "{progress}");
    let verdict: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("950/mathlib/stage3/verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["reruns_performed"], 3);

    let o = run(&["report", "--run-dir", s(&run_dir), "--format", "csv", "--function-total", "unknown"], &[]);
    assert_eq!(stdout(&o).lines().nth(1), Some("950,normal,4,4,1,precise,1,1,-,1,-"));
}

fn verify_corpus(dir: &Path, packages: &[ToyPackage]) -> std::path::PathBuf {
    write_corpus(dir, packages)
}

#[test]
fn corpus_verify_stamps_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut packages = toy_corpus();
    packages.truncate(2);
    packages.push(ToyPackage {
        name: "stamped",
        files: vec![(
            "main.c",
            "#include <stdio.h>\nint main(void) { puts(STAMP); return 0; }\n".into(),
        )],
        build_cmd: "$CC -O0 -DSTAMP=\"\\\"$(date +%s%N)\\\"\" main.c -o prog".into(),
        test_cmd: None,
        globs: vec!["prog"],
    });
    let manifest = verify_corpus(dir.path(), &packages);
    let out = dir.path().join("stamped.json");
    let o = run(&["corpus", "verify", "--manifest", s(&manifest), "--out", s(&out)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = load_manifest(&out).unwrap();
    let stamps: Vec<Reproducible> = m.packages.iter().map(|p| p.reproducible).collect();
    assert_eq!(stamps, [Reproducible::Verified, Reproducible::Verified, Reproducible::Failed]);
    assert!(stderr(&o).contains("stamped: failed (differing: prog)"), "{}", stderr(&o));

    let empty = dir.path().join("empty.json");
    fs::write(&empty, json!({"min_loc": 0, "packages": []}).to_string()).unwrap();
    let o = run(&["corpus", "verify", "--manifest", s(&empty)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let broken_dir = dir.path().join("broken");
    let broken = verify_corpus(
        &broken_dir,
        &[ToyPackage {
            name: "broken",
            files: vec![("main.c", "int main(void) { return 0 }\n".into())],
            build_cmd: "$CC main.c -o prog".into(),
            test_cmd: None,
            globs: vec!["prog"],
        }],
    );
    let o = run(&["corpus", "verify", "--manifest", s(&broken)], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(load_manifest(&broken).unwrap().packages[0].reproducible, Reproducible::Failed);
}
