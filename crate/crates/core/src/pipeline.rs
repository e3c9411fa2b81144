//! Staged runs of one bug over a corpus, the on-disk record store, and the
//! report and corpus-verification entry points built on top of it.
//!
//! Store layout under the run directory:
//!
//! ```text
//! <bug>/bug.json
//! <bug>/anomalies.json
//! <bug>/<pkg>/record.json
//! <bug>/<pkg>/<variant>/{build.log,outcome.json,artifacts/}
//! <bug>/<pkg>/stage2/reports.json
//! <bug>/<pkg>/stage3/{verdict.json,worksheet.md,worksheet.json,runs/}
//! ```
//!
//! Every stage output doubles as a cache: rerunning over an existing run
//! directory re-derives records from what is already there.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asmdiff::{diff_artifact_sets, ArtifactSetDiff, Disassembler, ParseOptions};
use crate::builder::{self, BuildError, BuildOutcome, BuildSettings, MarkerPair, ReproVerdict};
use crate::corpus::{self, CorpusManifest, PackageSpec};
use crate::dyncompare::{
    dual_run, emit_worksheet, render_worksheets, DivergenceVerdict, InspectionWorksheet,
    PackageSuites, TestSettings,
};
use crate::fsutil::{self, path_component, read_json, write_json};
use crate::report::{self, build_row, BugSummary, Format, Grouping, ImpactRow, ImpactTable, PackageRecord, ReportError};
use crate::toolchain::{self, BugDescriptor, CompilerVariant, Precision, VariantRole};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("no records found under {0}")]
    NoRecords(PathBuf),
}

impl PipelineError {
    /// Errors caused by the user's inputs rather than by the tool.
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::NoRecords(_))
    }
}

fn io_ctx(context: impl Into<String>) -> impl FnOnce(io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

/// The selected subset of stages 1 (markers), 2 (binary diff) and 3 (tests).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub compile: bool,
    pub binary: bool,
    pub dynamic: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { compile: true, binary: true, dynamic: true };
}

impl FromStr for Stages {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut stages = Stages { compile: false, binary: false, dynamic: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "1" => stages.compile = true,
                "2" => stages.binary = true,
                "3" => stages.dynamic = true,
                other => return Err(format!("unknown stage `{other}` (expected 1, 2 or 3)")),
            }
        }
        if stages == (Stages { compile: false, binary: false, dynamic: false }) {
            return Err("at least one stage must be selected".into());
        }
        Ok(stages)
    }
}

impl fmt::Display for Stages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let picked: Vec<&str> = [(self.compile, "1"), (self.binary, "2"), (self.dynamic, "3")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&picked.join(","))
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    pub bug_file: PathBuf,
    pub manifest_file: PathBuf,
    pub stages: Stages,
    pub parallelism: usize,
    pub rerun_count: u32,
    pub build_timeout: Option<Duration>,
    pub test_timeout: Option<Duration>,
    pub disassembler_cmd: String,
    pub seed: u64,
    pub sample_size: usize,
    pub function_total: Option<u64>,
    pub dry_run: bool,
}

impl RunConfig {
    pub fn new(run_dir: impl Into<PathBuf>, bug_file: impl Into<PathBuf>, manifest_file: impl Into<PathBuf>) -> Self {
        RunConfig {
            run_dir: run_dir.into(),
            bug_file: bug_file.into(),
            manifest_file: manifest_file.into(),
            stages: Stages::ALL,
            parallelism: 1,
            rerun_count: crate::dyncompare::DEFAULT_RERUN_COUNT,
            build_timeout: Some(builder::DEFAULT_BUILD_TIMEOUT),
            test_timeout: Some(crate::dyncompare::DEFAULT_TEST_TIMEOUT),
            disassembler_cmd: crate::asmdiff::DEFAULT_DISASSEMBLER_CMD.into(),
            seed: 0,
            sample_size: 10,
            function_total: Some(report::DEFAULT_FUNCTION_TOTAL),
            dry_run: false,
        }
    }
}

/// Paths of the record store rooted at a run directory.
#[derive(Clone, Debug)]
pub struct Store {
    pub root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Store { root: root.into() }
    }

    pub fn bug_dir(&self, bug: &str) -> PathBuf {
        self.root.join(path_component(bug))
    }

    pub fn pkg_dir(&self, bug: &str, pkg: &str) -> PathBuf {
        self.bug_dir(bug).join(path_component(pkg))
    }

    pub fn variant_dir(&self, bug: &str, pkg: &str, variant_id: &str) -> PathBuf {
        self.pkg_dir(bug, pkg).join(path_component(variant_id))
    }

    pub fn stage2_reports(&self, bug: &str, pkg: &str) -> PathBuf {
        self.pkg_dir(bug, pkg).join("stage2").join("reports.json")
    }

    pub fn stage3_dir(&self, bug: &str, pkg: &str) -> PathBuf {
        self.pkg_dir(bug, pkg).join("stage3")
    }

    pub fn record(&self, bug: &str, pkg: &str) -> PathBuf {
        self.pkg_dir(bug, pkg).join("record.json")
    }

    fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        let mut dirs = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_ctx(format!("listing {}", dir.display())))? {
            let entry = entry.map_err(io_ctx(format!("listing {}", dir.display())))?;
            if entry.file_type().map(|t| t.is_dir()).unwrap_or(false) {
                dirs.push(entry.path());
            }
        }
        dirs.sort();
        Ok(dirs)
    }

    /// Every bug in the store with its package records, ordered by directory
    /// name.
    pub fn load(&self) -> Result<Vec<(BugSummary, Vec<PackageRecord>)>, PipelineError> {
        if !self.root.is_dir() {
            return Err(PipelineError::NoRecords(self.root.clone()));
        }
        let mut out = Vec::new();
        for bug_dir in Self::sorted_subdirs(&self.root)? {
            let bug_file = bug_dir.join("bug.json");
            if !bug_file.is_file() {
                continue;
            }
            let bug: BugSummary = read_json(&bug_file).map_err(io_ctx(format!("reading {}", bug_file.display())))?;
            let mut records = Vec::new();
            for pkg_dir in Self::sorted_subdirs(&bug_dir)? {
                let path = pkg_dir.join("record.json");
                if path.is_file() {
                    records.push(read_json(&path).map_err(io_ctx(format!("reading {}", path.display())))?);
                }
            }
            out.push((bug, records));
        }
        if out.is_empty() {
            return Err(PipelineError::NoRecords(self.root.clone()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub bug_id: String,
    pub stages: String,
    pub packages: usize,
    pub variant_builds_ok: u64,
    pub row: Option<ImpactRow>,
    pub anomalies: Vec<String>,
    pub dry_run: bool,
}

struct Ctx<'a> {
    bug: &'a BugDescriptor,
    cfg: &'a RunConfig,
    store: Store,
    build: BuildSettings,
    tests: TestSettings,
    disassembler: Disassembler,
    parse: ParseOptions,
}

struct PackageResult {
    record: PackageRecord,
    anomalies: Vec<String>,
    variant_builds_ok: u64,
    progress: String,
}

fn load_cached<T: serde::de::DeserializeOwned>(path: &Path) -> Option<T> {
    path.is_file().then(|| read_json(path).ok()).flatten()
}

fn save<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_json(path, value).map_err(io_ctx(format!("writing {}", path.display())))
}

impl Ctx<'_> {
    fn outcome_path(&self, pkg: &PackageSpec, role: VariantRole) -> PathBuf {
        let v = self.bug.variants.get(role);
        self.store.variant_dir(&self.bug.bug_id, &pkg.name, &v.variant_id).join("outcome.json")
    }

    /// Builds with the variant unless an outcome is already stored.
    fn build(&self, pkg: &PackageSpec, role: VariantRole) -> Result<BuildOutcome, PipelineError> {
        let path = self.outcome_path(pkg, role);
        if let Some(o) = load_cached(&path) {
            return Ok(o);
        }
        let variant = self.bug.variants.get(role);
        let markers = (role == VariantRole::WarningLaden).then(|| MarkerPair::from(self.bug));
        let dir = path.parent().expect("outcome has a parent");
        let outcome = builder::build_package(pkg, variant, dir, markers, &self.build)?;
        save(&path, &outcome)?;
        Ok(outcome)
    }

    fn obtain(&self, pkg: &PackageSpec, role: VariantRole, run: bool) -> Result<Option<BuildOutcome>, PipelineError> {
        if run {
            self.build(pkg, role).map(Some)
        } else {
            Ok(load_cached(&self.outcome_path(pkg, role)))
        }
    }

    fn process(&self, pkg: &PackageSpec) -> Result<PackageResult, PipelineError> {
        let bug_id = &self.bug.bug_id;
        let stages = self.cfg.stages;
        let mut record = PackageRecord::empty(bug_id, &pkg.name);
        let mut anomalies = Vec::new();
        let mut progress = Vec::new();
        let mut all_ok = true;
        let mut any_build = false;
        let mut variant_builds_ok = 0;
        let mut tally = |o: &BuildOutcome, progress: &mut Vec<String>| {
            any_build = true;
            if o.is_ok() {
                variant_builds_ok += 1;
            } else {
                all_ok = false;
                progress.push(format!("{} failed ({})", o.variant_id, o.reason.as_deref().unwrap_or("unknown")));
            }
        };

        let warn = self.obtain(pkg, VariantRole::WarningLaden, stages.compile)?;
        if let Some(w) = &warn {
            tally(w, &mut progress);
            record.reached_count = w.reached_count;
            record.triggered_count = w.triggered_count;
            if let Some(a) = w.marker_anomaly() {
                anomalies.push(a);
            }
            progress.push(format!("reached={} triggered={}", w.reached_count, w.triggered_count));
        }
        let warn_ok = warn.as_ref().is_none_or(BuildOutcome::is_ok);

        let need_pair = stages.binary || stages.dynamic;
        let mut pair = None;
        if need_pair && warn_ok {
            let buggy = self.obtain(pkg, VariantRole::Buggy, stages.binary)?;
            let fixed = self.obtain(pkg, VariantRole::Fixed, stages.binary)?;
            for o in [&buggy, &fixed].into_iter().flatten() {
                tally(o, &mut progress);
            }
            if let (Some(b), Some(f)) = (buggy, fixed) {
                if b.is_ok() && f.is_ok() {
                    pair = Some((b, f));
                }
            }
        }

        let gated = self.bug.precision == Precision::Precise && warn.is_some() && record.triggered_count == 0;
        let mut set_diff: Option<ArtifactSetDiff> = None;
        if let Some((buggy, fixed)) = &pair {
            let path = self.store.stage2_reports(bug_id, &pkg.name);
            set_diff = match load_cached(&path) {
                Some(d) => Some(d),
                None if stages.binary => {
                    let d = diff_artifact_sets(buggy, fixed, &self.disassembler, &self.parse, !gated);
                    save(&path, &d)?;
                    Some(d)
                }
                None => None,
            };
        }

        if let Some(d) = &set_diff {
            let differs = d.any_difference();
            for s in &d.structural {
                anomalies.push(format!("{}: artifact {} exists only in the {:?} build", pkg.name, s.artifact, s.only_in));
            }
            for r in d.reports.iter().filter(|r| r.error.is_some()) {
                anomalies.push(format!("{}: {}: {}", pkg.name, r.artifact, r.error.as_deref().unwrap_or_default()));
            }
            if gated && differs {
                let which: Vec<&str> = d.reports.iter().filter(|r| !r.bitwise_identical).map(|r| r.artifact.as_str()).collect();
                anomalies.push(format!(
                    "{}: precise bug never triggered but artifacts differ: {}",
                    pkg.name,
                    which.join(", ")
                ));
            } else {
                record.binary_diff = differs;
            }
            let changed: Vec<_> = d.reports.iter().filter(|r| !r.bitwise_identical).collect();
            record.symbols_available = changed.iter().all(|r| r.symbols_available);
            record.diff_functions = changed.iter().filter(|r| r.symbols_available).map(|r| r.differing.len() as u64).sum();
            progress.push(if differs {
                format!("binaries differ ({} functions)", record.diff_functions)
            } else {
                "binaries identical".into()
            });

            if record.binary_diff && stages.dynamic {
                let (buggy, fixed) = pair.as_ref().expect("stage 2 ran on a pair");
                let verdict = self.stage3(pkg, buggy, fixed, d)?;
                record.test_verdict = verdict.0.classification;
                record.manual_rating = verdict.1.iter().filter_map(|w| w.impact_rating).max();
                progress.push(format!("tests {:?}", verdict.0.classification).to_lowercase());
            }
        }

        record.builds_ok = all_ok && any_build;
        save(&self.store.record(bug_id, &pkg.name), &record)?;
        Ok(PackageResult {
            record,
            anomalies,
            variant_builds_ok,
            progress: format!("[{bug_id}] {}: {}", pkg.name, progress.join(", ")),
        })
    }

    fn stage3(
        &self,
        pkg: &PackageSpec,
        buggy: &BuildOutcome,
        fixed: &BuildOutcome,
        diff: &ArtifactSetDiff,
    ) -> Result<(DivergenceVerdict, Vec<InspectionWorksheet>), PipelineError> {
        let dir = self.store.stage3_dir(&self.bug.bug_id, &pkg.name);
        let verdict_path = dir.join("verdict.json");
        let verdict = match load_cached(&verdict_path) {
            Some(v) => v,
            None => {
                let v = if pkg.test_cmd.is_some() {
                    let mut suites = PackageSuites {
                        pkg,
                        buggy,
                        fixed,
                        log_root: dir.join("runs"),
                        settings: &self.tests,
                    };
                    dual_run(&mut suites, self.cfg.rerun_count).map_err(io_ctx(format!("testing {}", pkg.name)))?
                } else {
                    DivergenceVerdict::not_run()
                };
                save(&verdict_path, &v)?;
                v
            }
        };

        let sheet_path = dir.join("worksheet.json");
        let sheets: Vec<InspectionWorksheet> = match load_cached(&sheet_path) {
            Some(s) => s,
            None => {
                let mut sheets = Vec::new();
                for r in diff.reports.iter().filter(|r| !r.differing.is_empty()) {
                    let fa = self.disassembler.functions(&r.path_a, &self.parse);
                    let fb = self.disassembler.functions(&r.path_b, &self.parse);
                    if let (Ok(fa), Ok(fb)) = (fa, fb) {
                        sheets.push(emit_worksheet(
                            &self.bug.bug_id,
                            &pkg.name,
                            r,
                            &fa,
                            &fb,
                            self.cfg.sample_size,
                            self.cfg.seed,
                        ));
                    }
                }
                if !sheets.is_empty() {
                    save(&sheet_path, &sheets)?;
                    let md = dir.join("worksheet.md");
                    fsutil::write_atomic(&md, render_worksheets(&sheets).as_bytes())
                        .map_err(io_ctx(format!("writing {}", md.display())))?;
                }
                sheets
            }
        };
        Ok((verdict, sheets))
    }
}

/// Runs `f` over every item on at most `width` threads; results keep the
/// input order.
pub fn bounded_map<T: Sync, R: Send>(items: &[T], width: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..width.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every slot filled")).collect()
}

fn has_any(root: &Path, rel: impl Fn(&Path) -> PathBuf) -> bool {
    fs::read_dir(root)
        .map(|entries| entries.flatten().any(|e| rel(&e.path()).is_file()))
        .unwrap_or(false)
}

/// Loads and checks everything `cmd_run` needs before the first build.
pub fn prepare(cfg: &RunConfig) -> Result<(BugDescriptor, CorpusManifest), PipelineError> {
    let config = |m: String| PipelineError::Config(m);
    if cfg.parallelism == 0 {
        return Err(config("parallelism must be at least 1".into()));
    }
    if cfg.rerun_count == 0 {
        return Err(config("rerun count must be at least 1".into()));
    }
    let bug = BugDescriptor::load(&cfg.bug_file).map_err(|e| config(e.to_string()))?;
    let manifest = corpus::load_manifest(&cfg.manifest_file).map_err(|e| config(e.to_string()))?;

    let store = Store::new(&cfg.run_dir);
    let bug_dir = store.bug_dir(&bug.bug_id);
    let s = cfg.stages;
    if s.binary && !s.compile {
        let warn_id = path_component(&bug.variants.warning_laden.variant_id);
        if !has_any(&bug_dir, |p| p.join(&warn_id).join("outcome.json")) {
            return Err(config("stage 2 needs stage 1 selected or stage-1 records in the run directory".into()));
        }
    }
    if s.dynamic && !s.binary && !has_any(&bug_dir, |p| p.join("stage2").join("reports.json")) {
        return Err(config("stage 3 needs stage 2 selected or stage-2 records in the run directory".into()));
    }

    for v in bug.variants.iter() {
        let report = toolchain::validate_variant(v);
        if !report.runs {
            return Err(config(format!("compiler variant `{}` is unusable: {:?}", v.variant_id, report.reason)));
        }
    }
    if bug.witness_path.is_some() {
        let log_dir = (!cfg.dry_run).then(|| bug_dir.join("witness"));
        let counts = toolchain::witness_sanity_check(&bug, log_dir.as_deref()).map_err(|e| config(e.to_string()))?;
        if !counts.passes() {
            return Err(config(format!(
                "witness check failed for bug {}: reached {} / triggered {}",
                bug.bug_id, counts.reached, counts.triggered
            )));
        }
    }
    Ok((bug, manifest))
}

/// Executes the selected stages for every manifest package. Progress lines
/// go to standard error.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let (bug, manifest) = prepare(cfg)?;
    let mut summary = RunSummary {
        bug_id: bug.bug_id.clone(),
        stages: cfg.stages.to_string(),
        packages: manifest.packages.len(),
        variant_builds_ok: 0,
        row: None,
        anomalies: Vec::new(),
        dry_run: cfg.dry_run,
    };
    if cfg.dry_run {
        return Ok(summary);
    }

    let store = Store::new(&cfg.run_dir);
    let bug_dir = store.bug_dir(&bug.bug_id);
    fs::create_dir_all(&bug_dir).map_err(io_ctx(format!("creating {}", bug_dir.display())))?;
    let bug_summary = BugSummary::from(&bug);
    save(&bug_dir.join("bug.json"), &bug_summary)?;

    let work_root = cfg.run_dir.join(".work");
    let ctx = Ctx {
        bug: &bug,
        cfg,
        store: store.clone(),
        build: BuildSettings { timeout: cfg.build_timeout, work_root: work_root.clone(), keep_workdir: false },
        tests: TestSettings { timeout: cfg.test_timeout, work_root: work_root.clone() },
        disassembler: Disassembler::new(cfg.disassembler_cmd.clone()),
        parse: ParseOptions::default(),
    };

    let results = bounded_map(&manifest.packages, cfg.parallelism, |pkg| {
        let r = ctx.process(pkg).unwrap_or_else(|e| PackageResult {
            record: PackageRecord::empty(&bug.bug_id, &pkg.name),
            anomalies: vec![format!("{}: pipeline error: {e}", pkg.name)],
            variant_builds_ok: 0,
            progress: format!("[{}] {}: error: {e}", bug.bug_id, pkg.name),
        });
        eprintln!("{}", r.progress);
        r
    });
    let _ = fs::remove_dir_all(&work_root);

    let records: Vec<PackageRecord> = results.iter().map(|r| r.record.clone()).collect();
    let mut anomalies: Vec<String> = results.iter().flat_map(|r| r.anomalies.iter().cloned()).collect();
    let row = build_row(&bug_summary, &records, cfg.function_total)?;
    anomalies.extend(row.anomalies.iter().cloned());
    anomalies.sort();
    anomalies.dedup();
    save(&bug_dir.join("anomalies.json"), &anomalies)?;
    for a in &anomalies {
        eprintln!("[{}] anomaly: {a}", bug.bug_id);
    }

    summary.variant_builds_ok = results.iter().map(|r| r.variant_builds_ok).sum();
    summary.row = Some(row);
    summary.anomalies = anomalies;
    Ok(summary)
}

/// Loads every bug in the run directory and renders the grouped table.
pub fn cmd_report(
    run_dir: &Path,
    group_by: Grouping,
    format: Format,
    function_total: Option<u64>,
) -> Result<String, PipelineError> {
    let mut rows = Vec::new();
    for (bug, records) in Store::new(run_dir).load()? {
        rows.push(build_row(&bug, &records, function_total)?);
    }
    Ok(report::render(&ImpactTable::new(rows, group_by), format)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub package: String,
    pub verdict: ReproVerdict,
}

/// Builds every package twice with `variant`, stamps `reproducible`, and
/// writes the manifest to `out`. Returns the per-package verdicts.
pub fn cmd_corpus_verify(
    manifest_file: &Path,
    out: &Path,
    variant: &CompilerVariant,
    settings: &BuildSettings,
    parallelism: usize,
) -> Result<Vec<VerifyResult>, PipelineError> {
    let mut manifest =
        corpus::load_manifest(manifest_file).map_err(|e| PipelineError::Config(e.to_string()))?;
    let verdicts = bounded_map(&manifest.packages, parallelism, |pkg| {
        let verdict = builder::check_reproducibility(pkg, variant, settings).unwrap_or_else(|e| ReproVerdict::Failed {
            differing: Vec::new(),
            reason: format!("build-error: {e}"),
        });
        let line = match &verdict {
            ReproVerdict::Verified => "verified".to_string(),
            ReproVerdict::Failed { differing, reason } if differing.is_empty() => format!("failed ({reason})"),
            ReproVerdict::Failed { differing, .. } => format!("failed (differing: {})", differing.join(", ")),
        };
        eprintln!("[verify] {}: {line}", pkg.name);
        VerifyResult { package: pkg.name.clone(), verdict }
    });
    for (pkg, v) in manifest.packages.iter_mut().zip(&verdicts) {
        pkg.reproducible = v.verdict.stamp();
    }
    corpus::save_manifest(out, &manifest).map_err(|e| PipelineError::Io {
        context: format!("writing {}", out.display()),
        source: io::Error::other(e.to_string()),
    })?;
    Ok(verdicts)
}

/// Packages whose verification could not even build.
pub fn errored(results: &[VerifyResult]) -> Vec<&str> {
    results.iter().filter(|r| r.verdict.is_build_error()).map(|r| r.package.as_str()).collect()
}

/// Stage-3 records are only ever written for packages whose stage-2 report
/// shows a difference. Returns packages violating that.
pub fn gating_violations(run_dir: &Path, bug_id: &str) -> Result<Vec<String>, PipelineError> {
    let store = Store::new(run_dir);
    let bug_dir = store.bug_dir(bug_id);
    let mut bad = BTreeSet::new();
    for pkg_dir in Store::sorted_subdirs(&bug_dir)? {
        let stage3 = pkg_dir.join("stage3");
        if !stage3.exists() {
            continue;
        }
        let reports: Option<ArtifactSetDiff> = load_cached(&pkg_dir.join("stage2").join("reports.json"));
        if !reports.is_some_and(|d| d.any_difference()) {
            bad.insert(pkg_dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        }
    }
    Ok(bad.into_iter().collect())
}
