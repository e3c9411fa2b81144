//! Test-suite runs against buggy- and fixed-compiled artifacts, divergence
//! classification with reruns, and manual-inspection worksheets.
//!
//! Test commands speak a small protocol on stdout:
//!
//! ```text
//! TESTPROTO 1
//! <test-id> <pass|fail|skip>
//! ...
//! END <count>
//! ```
//!
//! Anything else on stdout makes the run an infrastructure failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use similar::{capture_diff_slices, Algorithm, DiffOp};

use crate::asmdiff::{normalize, BinaryDiffReport, FunctionMap};
use crate::builder::BuildOutcome;
use crate::corpus::PackageSpec;
use crate::fsutil;
use crate::process::{self, Exit};

pub const DEFAULT_RERUN_COUNT: u32 = 3;
pub const DEFAULT_TEST_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    InfraFailure,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRun {
    pub package: String,
    pub variant_id: String,
    pub status: RunStatus,
    pub results: BTreeMap<String, TestOutcome>,
    /// Captured stdout; stderr sits beside it as `test.stderr.log`.
    pub raw_log: PathBuf,
    pub reason: Option<String>,
}

/// Parses the test protocol. Any deviation is an error describing it.
pub fn parse_protocol(stdout: &str) -> Result<BTreeMap<String, TestOutcome>, String> {
    let mut lines = stdout.lines().enumerate();
    match lines.next() {
        Some((_, "TESTPROTO 1")) => {}
        Some((_, other)) => return Err(format!("bad header `{other}`")),
        None => return Err("no protocol header".into()),
    }
    let mut results = BTreeMap::new();
    for (idx, line) in lines.by_ref() {
        let lineno = idx + 1;
        if let Some(n) = line.strip_prefix("END ") {
            let declared: usize = n.parse().map_err(|_| format!("line {lineno}: bad END count `{n}`"))?;
            if declared != results.len() {
                return Err(format!("END declares {declared} tests but {} were reported", results.len()));
            }
            if let Some((i, extra)) = lines.next() {
                return Err(format!("line {}: trailing output after END: `{extra}`", i + 1));
            }
            return Ok(results);
        }
        let mut toks = line.split(' ');
        let (Some(id), Some(word), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(format!("line {lineno}: malformed result `{line}`"));
        };
        let outcome = match word {
            "pass" => TestOutcome::Pass,
            "fail" => TestOutcome::Fail,
            "skip" => TestOutcome::Skip,
            _ => return Err(format!("line {lineno}: unknown outcome `{word}`")),
        };
        if id.is_empty() || results.insert(id.to_string(), outcome).is_some() {
            return Err(format!("line {lineno}: empty or duplicate test id `{id}`"));
        }
    }
    Err("missing END terminator".into())
}

#[derive(Clone, Debug)]
pub struct TestSettings {
    pub timeout: Option<Duration>,
    pub work_root: PathBuf,
}

/// Runs the package's test command in a fresh copy of its sources with the
/// build's artifacts laid over it at their relative paths. The artifact
/// directory is also exported as `IMPACT_ARTIFACT_DIR`.
pub fn run_tests(
    pkg: &PackageSpec,
    build: &BuildOutcome,
    log_dir: &Path,
    settings: &TestSettings,
) -> io::Result<TestRun> {
    fs::create_dir_all(log_dir)?;
    let raw_log = log_dir.join("test.log");
    let mut run = TestRun {
        package: pkg.name.clone(),
        variant_id: build.variant_id.clone(),
        status: RunStatus::InfraFailure,
        results: BTreeMap::new(),
        raw_log: raw_log.clone(),
        reason: None,
    };
    let Some(test_cmd) = &pkg.test_cmd else {
        run.reason = Some("package has no test command".into());
        fs::write(&raw_log, "")?;
        return Ok(run);
    };
    if !build.is_ok() {
        run.reason = Some("build did not succeed".into());
        fs::write(&raw_log, "")?;
        return Ok(run);
    }

    fs::create_dir_all(&settings.work_root)?;
    let env_dir = tempfile::Builder::new()
        .prefix(&format!("test-{}-", fsutil::path_component(&pkg.name)))
        .tempdir_in(&settings.work_root)?;
    let tree = env_dir.path().join("src");
    fsutil::copy_tree(&pkg.source_path, &tree)?;
    for a in &build.artifacts {
        let dest = tree.join(&a.path);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(build.artifact_path(&a.path), dest)?;
    }

    let env = BTreeMap::from([
        ("IMPACT_ARTIFACT_DIR".to_string(), build.artifact_root.display().to_string()),
        ("IMPACT_VARIANT".to_string(), build.variant_id.clone()),
    ]);
    let fin = process::run_shell(
        test_cmd,
        &tree,
        &env,
        fs::File::create(&raw_log)?,
        fs::File::create(log_dir.join("test.stderr.log"))?,
        settings.timeout,
    )?;
    if fin.exit == Exit::TimedOut {
        run.status = RunStatus::Timeout;
        run.reason = Some("test command timed out".into());
        return Ok(run);
    }
    let stdout = String::from_utf8_lossy(&fs::read(&raw_log)?).into_owned();
    match parse_protocol(&stdout) {
        Ok(results) => {
            run.status = RunStatus::Completed;
            run.results = results;
        }
        Err(reason) => run.reason = Some(format!("{reason} (exit {:?})", fin.exit)),
    }
    Ok(run)
}

/// Per-test outcome pair (buggy, fixed) for tests whose outcomes differ.
pub type DivergenceMap = BTreeMap<String, (Option<TestOutcome>, Option<TestOutcome>)>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Preliminary {
    Identical,
    DivergentCandidate(DivergenceMap),
    InfraFailure,
}

pub fn compare_runs(buggy: &TestRun, fixed: &TestRun) -> Preliminary {
    if buggy.status != RunStatus::Completed || fixed.status != RunStatus::Completed {
        return Preliminary::InfraFailure;
    }
    let ids: BTreeSet<&String> = buggy.results.keys().chain(fixed.results.keys()).collect();
    let diverging: DivergenceMap = ids
        .into_iter()
        .filter_map(|id| {
            let pair = (buggy.results.get(id).copied(), fixed.results.get(id).copied());
            (pair.0 != pair.1).then(|| (id.clone(), pair))
        })
        .collect();
    if diverging.is_empty() {
        Preliminary::Identical
    } else {
        Preliminary::DivergentCandidate(diverging)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Identical,
    Divergent,
    InfraFailure,
    NotRun,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceVerdict {
    pub classification: Classification,
    pub divergent_tests: Vec<String>,
    /// Paired (buggy, fixed) suite executions, the initial one included.
    pub reruns_performed: u32,
    pub reproducible: bool,
    /// Tests whose divergence did not reproduce across reruns.
    pub flaky: Vec<String>,
}

impl DivergenceVerdict {
    pub fn not_run() -> Self {
        DivergenceVerdict {
            classification: Classification::NotRun,
            divergent_tests: Vec::new(),
            reruns_performed: 0,
            reproducible: false,
            flaky: Vec::new(),
        }
    }

    fn infra(runs: u32) -> Self {
        DivergenceVerdict { classification: Classification::InfraFailure, reruns_performed: runs, ..Self::not_run() }
    }

    /// Verdict for a single paired run that needs no confirmation.
    pub fn from_preliminary(p: &Preliminary) -> Option<Self> {
        match p {
            Preliminary::Identical => Some(DivergenceVerdict {
                classification: Classification::Identical,
                reruns_performed: 1,
                ..Self::not_run()
            }),
            Preliminary::InfraFailure => Some(Self::infra(1)),
            Preliminary::DivergentCandidate(_) => None,
        }
    }
}

/// Something that can execute one variant's suite in a fresh environment.
pub trait SuiteRunner {
    fn run(&mut self, role: PairRole, attempt: u32) -> io::Result<TestRun>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairRole {
    Buggy,
    Fixed,
}

/// Runs real test commands for one package, logging each attempt under
/// `log_root/<role>-<attempt>/`.
pub struct PackageSuites<'a> {
    pub pkg: &'a PackageSpec,
    pub buggy: &'a BuildOutcome,
    pub fixed: &'a BuildOutcome,
    pub log_root: PathBuf,
    pub settings: &'a TestSettings,
}

impl SuiteRunner for PackageSuites<'_> {
    fn run(&mut self, role: PairRole, attempt: u32) -> io::Result<TestRun> {
        let (build, tag) = match role {
            PairRole::Buggy => (self.buggy, "buggy"),
            PairRole::Fixed => (self.fixed, "fixed"),
        };
        run_tests(self.pkg, build, &self.log_root.join(format!("{tag}-{attempt}")), self.settings)
    }
}

/// Reruns both suites `rerun_count` times. The divergence is confirmed only
/// if every rerun shows exactly the same per-test outcome pairs as the
/// candidate. Odd-numbered reruns execute the fixed suite first so that
/// outcomes depending on execution order do not line up by accident.
pub fn confirm_divergence(
    runner: &mut dyn SuiteRunner,
    candidate: &DivergenceMap,
    rerun_count: u32,
) -> io::Result<DivergenceVerdict> {
    assert!(rerun_count >= 1, "rerun_count must be at least 1");
    let mut unstable: BTreeSet<String> = BTreeSet::new();
    let mut consistent = true;
    for attempt in 1..=rerun_count {
        let (buggy, fixed) = if attempt % 2 == 1 {
            let f = runner.run(PairRole::Fixed, attempt)?;
            (runner.run(PairRole::Buggy, attempt)?, f)
        } else {
            let b = runner.run(PairRole::Buggy, attempt)?;
            (b, runner.run(PairRole::Fixed, attempt)?)
        };
        match compare_runs(&buggy, &fixed) {
            Preliminary::InfraFailure => return Ok(DivergenceVerdict::infra(attempt + 1)),
            Preliminary::Identical => {
                consistent = false;
                unstable.extend(candidate.keys().cloned());
            }
            Preliminary::DivergentCandidate(seen) => {
                if &seen != candidate {
                    consistent = false;
                    let keys: BTreeSet<&String> = seen.keys().chain(candidate.keys()).collect();
                    unstable.extend(
                        keys.into_iter().filter(|k| seen.get(*k) != candidate.get(*k)).cloned(),
                    );
                }
            }
        }
    }
    let runs = rerun_count + 1;
    Ok(if consistent {
        DivergenceVerdict {
            classification: Classification::Divergent,
            divergent_tests: candidate.keys().cloned().collect(),
            reruns_performed: runs,
            reproducible: true,
            flaky: Vec::new(),
        }
    } else {
        DivergenceVerdict {
            classification: Classification::Identical,
            divergent_tests: Vec::new(),
            reruns_performed: runs,
            reproducible: false,
            flaky: unstable.into_iter().collect(),
        }
    })
}

/// Initial paired run followed by confirmation when the runs differ.
pub fn dual_run(runner: &mut dyn SuiteRunner, rerun_count: u32) -> io::Result<DivergenceVerdict> {
    let buggy = runner.run(PairRole::Buggy, 0)?;
    let fixed = runner.run(PairRole::Fixed, 0)?;
    let pre = compare_runs(&buggy, &fixed);
    match DivergenceVerdict::from_preliminary(&pre) {
        Some(v) => Ok(v),
        None => {
            let Preliminary::DivergentCandidate(candidate) = pre else { unreachable!() };
            confirm_divergence(runner, &candidate, rerun_count)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactRating {
    None,
    VeryLow,
    Low,
    Medium,
    High,
}

impl std::fmt::Display for ImpactRating {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ImpactRating::None => "none",
            ImpactRating::VeryLow => "very low",
            ImpactRating::Low => "low",
            ImpactRating::Medium => "medium",
            ImpactRating::High => "high",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledFunction {
    pub artifact: String,
    pub name: String,
    /// Unified-style hunks over the opcode sequences (`-` buggy, `+` fixed).
    pub opcode_hunks: Vec<String>,
    pub buggy_excerpt: Vec<String>,
    pub fixed_excerpt: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspectionWorksheet {
    pub bug_id: String,
    pub package: String,
    pub seed: u64,
    pub sample_size: usize,
    pub sampled_functions: Vec<SampledFunction>,
    pub verdict: String,
    pub impact_rating: Option<ImpactRating>,
}

/// Picks `min(sample_size, |differing|)` indices, deterministic in `seed`,
/// returned in ascending order.
pub fn sample_indices(len: usize, sample_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, len, sample_size.min(len)).into_vec();
    picked.sort_unstable();
    picked
}

const EXCERPT_LINES: usize = 40;

fn opcode_hunks(a: &[&str], b: &[&str]) -> Vec<String> {
    let mut hunks = Vec::new();
    for op in capture_diff_slices(Algorithm::Myers, a, b) {
        match op {
            DiffOp::Equal { .. } => {}
            DiffOp::Delete { old_index, old_len, new_index } => hunks.push(format!(
                "@@ -{},{} +{},0 @@ {}",
                old_index + 1,
                old_len,
                new_index + 1,
                a[old_index..old_index + old_len].iter().map(|o| format!("-{o}")).collect::<Vec<_>>().join(" ")
            )),
            DiffOp::Insert { old_index, new_index, new_len } => hunks.push(format!(
                "@@ -{},0 +{},{} @@ {}",
                old_index + 1,
                new_index + 1,
                new_len,
                b[new_index..new_index + new_len].iter().map(|o| format!("+{o}")).collect::<Vec<_>>().join(" ")
            )),
            DiffOp::Replace { old_index, old_len, new_index, new_len } => hunks.push(format!(
                "@@ -{},{} +{},{} @@ {} {}",
                old_index + 1,
                old_len,
                new_index + 1,
                new_len,
                a[old_index..old_index + old_len].iter().map(|o| format!("-{o}")).collect::<Vec<_>>().join(" "),
                b[new_index..new_index + new_len].iter().map(|o| format!("+{o}")).collect::<Vec<_>>().join(" ")
            )),
        }
    }
    hunks
}

fn excerpt(map: &FunctionMap, name: &str) -> Vec<String> {
    map.get(name)
        .map(|f| {
            f.instructions
                .iter()
                .take(EXCERPT_LINES)
                .map(|i| format!("{}: {} {}", i.address, i.opcode, i.operands).trim_end().to_string())
                .collect()
        })
        .unwrap_or_default()
}

/// Builds a worksheet over the report's differing functions. `buggy` and
/// `fixed` are the parsed function maps of the report's two sides.
pub fn emit_worksheet(
    bug_id: &str,
    package: &str,
    report: &BinaryDiffReport,
    buggy: &FunctionMap,
    fixed: &FunctionMap,
    sample_size: usize,
    seed: u64,
) -> InspectionWorksheet {
    let sampled_functions = sample_indices(report.differing.len(), sample_size, seed)
        .into_iter()
        .map(|i| {
            let name = &report.differing[i];
            let ops_a = buggy.get(name).map(normalize).unwrap_or_default();
            let ops_b = fixed.get(name).map(normalize).unwrap_or_default();
            SampledFunction {
                artifact: report.artifact.clone(),
                name: name.clone(),
                opcode_hunks: opcode_hunks(&ops_a, &ops_b),
                buggy_excerpt: excerpt(buggy, name),
                fixed_excerpt: excerpt(fixed, name),
            }
        })
        .collect();
    InspectionWorksheet {
        bug_id: bug_id.to_string(),
        package: package.to_string(),
        seed,
        sample_size,
        sampled_functions,
        verdict: String::new(),
        impact_rating: None,
    }
}

pub fn render_worksheets(sheets: &[InspectionWorksheet]) -> String {
    let mut out = String::new();
    for ws in sheets {
        let _ = writeln!(out, "# Inspection worksheet: bug {} / {}\n", ws.bug_id, ws.package);
        let _ = writeln!(
            out,
            "Sampled {} function(s) with seed {} (sample size {}).\n",
            ws.sampled_functions.len(),
            ws.seed,
            ws.sample_size
        );
        for f in &ws.sampled_functions {
            let _ = writeln!(out, "## `{}` in `{}`\n", f.name, f.artifact);
            let _ = writeln!(out, "Opcode differences (- buggy, + fixed):\n\n```diff");
            for h in &f.opcode_hunks {
                let _ = writeln!(out, "{h}");
            }
            let _ = writeln!(out, "```\n\nBuggy build:\n\n```asm");
            for l in &f.buggy_excerpt {
                let _ = writeln!(out, "{l}");
            }
            let _ = writeln!(out, "```\n\nFixed build:\n\n```asm");
            for l in &f.fixed_excerpt {
                let _ = writeln!(out, "{l}");
            }
            let _ = writeln!(out, "```\n");
        }
        let _ = writeln!(out, "Verdict: {}\n", if ws.verdict.is_empty() { "_(to be filled in)_" } else { &ws.verdict });
        let rating = ws.impact_rating.map(|r| r.to_string()).unwrap_or_else(|| "_(unset)_".into());
        let _ = writeln!(out, "Impact rating (none / very low / low / medium / high): {rating}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asmdiff::{parse_functions, ParseOptions};
    use proptest::prelude::*;

    fn run(status: RunStatus, results: &[(&str, TestOutcome)]) -> TestRun {
        TestRun {
            package: "p".into(),
            variant_id: "v".into(),
            status,
            results: results.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            raw_log: PathBuf::new(),
            reason: None,
        }
    }

    use TestOutcome::*;

    #[test]
    fn protocol_happy_path() {
        let r = parse_protocol("TESTPROTO 1\nt1 pass\nt2 fail\nt3 skip\nEND 3\n").unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r["t2"], Fail);
    }

    #[test]
    fn protocol_deviations() {
        for bad in [
            "",
            "starting...\nTESTPROTO 1\nEND 0\n",
            "TESTPROTO 2\nEND 0\n",
            "TESTPROTO 1\nt1 pass\n",
            "TESTPROTO 1\nt1 pass\nEND 2\n",
            "TESTPROTO 1\nt1 ok\nEND 1\n",
            "TESTPROTO 1\nt1 pass\nt1 fail\nEND 2\n",
            "TESTPROTO 1\nt1 pass extra\nEND 1\n",
            "TESTPROTO 1\nEND 0\nmore\n",
        ] {
            assert!(parse_protocol(bad).is_err(), "accepted {bad:?}");
        }
        assert!(parse_protocol("TESTPROTO 1\nEND 0\n").unwrap().is_empty());
    }

    #[test]
    fn compare_examples() {
        let a = run(RunStatus::Completed, &[("t1", Pass), ("t2", Pass)]);
        assert_eq!(compare_runs(&a, &a), Preliminary::Identical);
        let buggy = run(RunStatus::Completed, &[("t1", Pass), ("t2", Fail)]);
        let fixed = run(RunStatus::Completed, &[("t1", Pass), ("t2", Pass)]);
        match compare_runs(&buggy, &fixed) {
            Preliminary::DivergentCandidate(m) => {
                assert_eq!(m.keys().collect::<Vec<_>>(), ["t2"]);
                assert_eq!(m["t2"], (Some(Fail), Some(Pass)));
            }
            other => panic!("{other:?}"),
        }
        let crashed = run(RunStatus::InfraFailure, &[]);
        assert_eq!(compare_runs(&buggy, &crashed), Preliminary::InfraFailure);
        assert_eq!(compare_runs(&crashed, &fixed), Preliminary::InfraFailure);
    }

    /// Replays scripted runs; `script[attempt]` gives the (buggy, fixed) pair.
    struct Scripted {
        script: Vec<(TestRun, TestRun)>,
        calls: Vec<(PairRole, u32)>,
    }

    impl SuiteRunner for Scripted {
        fn run(&mut self, role: PairRole, attempt: u32) -> io::Result<TestRun> {
            self.calls.push((role, attempt));
            let (b, f) = &self.script[attempt as usize];
            Ok(match role {
                PairRole::Buggy => b.clone(),
                PairRole::Fixed => f.clone(),
            })
        }
    }

    fn stable_divergence() -> (TestRun, TestRun) {
        (
            run(RunStatus::Completed, &[("t1", Pass), ("t2", Fail)]),
            run(RunStatus::Completed, &[("t1", Pass), ("t2", Pass)]),
        )
    }

    #[test]
    fn deterministic_divergence_is_confirmed() {
        let mut r = Scripted { script: vec![stable_divergence(); 4], calls: vec![] };
        let v = dual_run(&mut r, 3).unwrap();
        assert_eq!(v.classification, Classification::Divergent);
        assert!(v.reproducible);
        assert_eq!(v.divergent_tests, ["t2"]);
        assert_eq!(v.reruns_performed, 4);
        assert_eq!(r.calls.len(), 8);
    }

    #[test]
    fn unstable_divergence_is_flaky() {
        let same = run(RunStatus::Completed, &[("t1", Pass), ("t2", Pass)]);
        let mut r = Scripted {
            script: vec![stable_divergence(), stable_divergence(), (same.clone(), same), stable_divergence()],
            calls: vec![],
        };
        let v = dual_run(&mut r, 3).unwrap();
        assert_eq!(v.classification, Classification::Identical);
        assert!(!v.reproducible);
        assert_eq!(v.flaky, ["t2"]);
        assert!(v.divergent_tests.is_empty());
    }

    #[test]
    fn flipped_direction_is_not_a_reproduction() {
        let (b, f) = stable_divergence();
        let mut r = Scripted { script: vec![(b.clone(), f.clone()), (f, b)], calls: vec![] };
        let v = dual_run(&mut r, 1).unwrap();
        assert_eq!(v.classification, Classification::Identical);
    }

    #[test]
    fn infra_failure_during_rerun() {
        let crashed = run(RunStatus::InfraFailure, &[]);
        let (b, _) = stable_divergence();
        let mut r = Scripted { script: vec![stable_divergence(), (b, crashed)], calls: vec![] };
        let v = dual_run(&mut r, 3).unwrap();
        assert_eq!(v.classification, Classification::InfraFailure);
    }

    #[test]
    fn single_rerun_matches_compare_on_stable_suites() {
        for pair in [stable_divergence(), {
            let s = run(RunStatus::Completed, &[("t1", Pass)]);
            (s.clone(), s)
        }] {
            let pre = compare_runs(&pair.0, &pair.1);
            let mut r = Scripted { script: vec![pair.clone(), pair], calls: vec![] };
            let v = dual_run(&mut r, 1).unwrap();
            let expected = match pre {
                Preliminary::Identical => Classification::Identical,
                Preliminary::DivergentCandidate(_) => Classification::Divergent,
                Preliminary::InfraFailure => Classification::InfraFailure,
            };
            assert_eq!(v.classification, expected);
            assert!(v.reruns_performed >= 1);
        }
    }

    fn report_with(differing: &[&str]) -> BinaryDiffReport {
        BinaryDiffReport {
            artifact: "prog".into(),
            path_a: "a".into(),
            path_b: "b".into(),
            bitwise_identical: false,
            symbols_available: true,
            functions_total_a: Some(100),
            functions_total_b: Some(100),
            matched: Some(100),
            differing: differing.iter().map(|s| s.to_string()).collect(),
            added: vec![],
            removed: vec![],
            note: None,
            error: None,
        }
    }

    #[test]
    fn worksheet_clamps_and_is_deterministic() {
        let opts = ParseOptions::default();
        let a = parse_functions("0 <f>:\n 0:\t90\tmov %edi,%eax\n 1:\t90\tadd $3,%eax\n 2:\t90\tret\n", &opts).unwrap();
        let b = parse_functions("0 <f>:\n 0:\t90\tmov %edi,%eax\n 1:\t90\tsub $3,%eax\n 2:\t90\tret\n", &opts).unwrap();
        let ws = emit_worksheet("1", "toy", &report_with(&["f"]), &a, &b, 5, 7);
        assert_eq!(ws.sampled_functions.len(), 1);
        assert_eq!(ws.sampled_functions[0].opcode_hunks, ["@@ -2,1 +2,1 @@ -add +sub"]);
        assert_eq!(ws.sampled_functions[0].buggy_excerpt[1], "1: add $3,%eax");
        assert!(ws.impact_rating.is_none());
        let md = render_worksheets(&[ws]);
        assert!(md.contains("## `f` in `prog`"));

        let names: Vec<String> = (0..100).map(|i| format!("fn{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let report = report_with(&refs);
        let empty = FunctionMap::new();
        let w1 = emit_worksheet("1", "p", &report, &empty, &empty, 10, 42);
        let w2 = emit_worksheet("1", "p", &report, &empty, &empty, 10, 42);
        assert_eq!(w1, w2);
        assert_eq!(w1.sampled_functions.len(), 10);
    }

    #[test]
    fn worksheet_takes_all_when_sample_covers_set() {
        let names: Vec<String> = (0..52).map(|i| format!("f{i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let empty = FunctionMap::new();
        let ws = emit_worksheet("11964", "p", &report_with(&refs), &empty, &empty, 52, 1);
        let got: Vec<&str> = ws.sampled_functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(got, refs);
    }

    proptest! {
        #[test]
        fn compare_symmetric_under_relabeling(
            a in prop::collection::btree_map("[a-e]", prop::sample::select(vec![Pass, Fail, Skip]), 0..5),
            b in prop::collection::btree_map("[a-e]", prop::sample::select(vec![Pass, Fail, Skip]), 0..5),
        ) {
            let ra = TestRun { results: a, ..run(RunStatus::Completed, &[]) };
            let rb = TestRun { results: b, ..run(RunStatus::Completed, &[]) };
            let ab = compare_runs(&ra, &rb);
            let ba = compare_runs(&rb, &ra);
            match (ab, ba) {
                (Preliminary::Identical, Preliminary::Identical) => {}
                (Preliminary::DivergentCandidate(x), Preliminary::DivergentCandidate(y)) => {
                    prop_assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>());
                    for (k, (p, q)) in &x {
                        prop_assert_eq!(y[k], (*q, *p));
                    }
                }
                other => prop_assert!(false, "asymmetric: {:?}", other),
            }
        }

        #[test]
        fn sampling_is_a_function_of_inputs(len in 0usize..200, size in 0usize..50, seed in any::<u64>()) {
            let s = sample_indices(len, size, seed);
            prop_assert_eq!(&s, &sample_indices(len, size, seed));
            prop_assert_eq!(s.len(), size.min(len));
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.iter().all(|&i| i < len));
        }
    }
}
