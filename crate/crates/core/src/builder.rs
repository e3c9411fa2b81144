//! Package builds under one compiler variant, marker extraction from build
//! logs, and the double-build reproducibility check.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::corpus::{PackageSpec, Reproducible};
use crate::fsutil;
use crate::process::{self, Exit};
use crate::toolchain::{BugDescriptor, CompilerVariant};

/// Default per-package build timeout.
pub const DEFAULT_BUILD_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> BuildError {
    let context = context.into();
    move |source| BuildError::Io { context, source }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerCounts {
    pub reached: u64,
    pub triggered: u64,
}

impl MarkerCounts {
    /// Witness check verdict: both diagnostics fired at least once.
    pub fn passes(&self) -> bool {
        self.reached >= 1 && self.triggered >= 1
    }
}

/// Counts lines containing each marker (at most once per line per marker).
pub fn scan_markers(log: &[u8], reached: &str, triggered: &str) -> MarkerCounts {
    let contains = |line: &[u8], needle: &str| {
        !needle.is_empty() && line.windows(needle.len()).any(|w| w == needle.as_bytes())
    };
    let mut counts = MarkerCounts::default();
    for line in log.split(|&b| b == b'\n') {
        if contains(line, reached) {
            counts.reached += 1;
        }
        if contains(line, triggered) {
            counts.triggered += 1;
        }
    }
    counts
}

pub fn extract_markers(log_path: &Path, bug: &BugDescriptor) -> io::Result<MarkerCounts> {
    let bytes = fs::read(log_path)?;
    Ok(scan_markers(&bytes, &bug.reached_marker, &bug.triggered_marker))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildStatus {
    Ok,
    BuildFailed,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the package root, `/`-separated.
    pub path: String,
    pub size: u64,
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildOutcome {
    pub package: String,
    pub variant_id: String,
    pub status: BuildStatus,
    pub reason: Option<String>,
    pub log_path: PathBuf,
    pub reached_count: u64,
    pub triggered_count: u64,
    pub artifacts: Vec<Artifact>,
    /// Directory holding the retained copies of `artifacts`.
    pub artifact_root: PathBuf,
    pub wall_seconds: f64,
}

impl BuildOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == BuildStatus::Ok
    }

    pub fn artifact_path(&self, rel: &str) -> PathBuf {
        self.artifact_root.join(rel)
    }

    pub fn digests(&self) -> BTreeMap<&str, &str> {
        self.artifacts.iter().map(|a| (a.path.as_str(), a.digest.as_str())).collect()
    }

    /// A warning-laden build emitting more "triggered" than "reached" lines
    /// deviates from the marker protocol.
    pub fn marker_anomaly(&self) -> Option<String> {
        (self.triggered_count > self.reached_count).then(|| {
            format!(
                "{}/{}: triggered count {} exceeds reached count {}",
                self.package, self.variant_id, self.triggered_count, self.reached_count
            )
        })
    }
}

#[derive(Clone, Debug)]
pub struct BuildSettings {
    pub timeout: Option<Duration>,
    /// Parent directory for fresh per-build working copies.
    pub work_root: PathBuf,
    pub keep_workdir: bool,
}

impl BuildSettings {
    pub fn new(work_root: impl Into<PathBuf>) -> Self {
        BuildSettings { timeout: Some(DEFAULT_BUILD_TIMEOUT), work_root: work_root.into(), keep_workdir: false }
    }
}

/// Marker strings to count in a build log.
#[derive(Clone, Copy, Debug)]
pub struct MarkerPair<'a> {
    pub reached: &'a str,
    pub triggered: &'a str,
}

impl<'a> From<&'a BugDescriptor> for MarkerPair<'a> {
    fn from(bug: &'a BugDescriptor) -> Self {
        MarkerPair { reached: &bug.reached_marker, triggered: &bug.triggered_marker }
    }
}

fn glob_set(globs: &[String]) -> Result<(GlobSet, Vec<GlobSet>), globset::Error> {
    let mut all = GlobSetBuilder::new();
    let mut each = Vec::with_capacity(globs.len());
    for g in globs {
        let glob = Glob::new(g)?;
        all.add(glob.clone());
        each.push(GlobSetBuilder::new().add(glob).build()?);
    }
    Ok((all.build()?, each))
}

/// Builds `pkg` with `variant` in a fresh copy of its sources. The combined
/// output goes to `out_dir/build.log`; matched artifacts are copied to
/// `out_dir/artifacts/`.
pub fn build_package(
    pkg: &PackageSpec,
    variant: &CompilerVariant,
    out_dir: &Path,
    markers: Option<MarkerPair<'_>>,
    settings: &BuildSettings,
) -> Result<BuildOutcome, BuildError> {
    fs::create_dir_all(out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    fs::create_dir_all(&settings.work_root)
        .map_err(io_err(format!("creating {}", settings.work_root.display())))?;
    let log_path = out_dir.join("build.log");
    let artifact_root = out_dir.join("artifacts");
    if artifact_root.exists() {
        fs::remove_dir_all(&artifact_root).map_err(io_err("clearing old artifacts"))?;
    }

    let mut outcome = BuildOutcome {
        package: pkg.name.clone(),
        variant_id: variant.variant_id.clone(),
        status: BuildStatus::BuildFailed,
        reason: None,
        log_path: log_path.clone(),
        reached_count: 0,
        triggered_count: 0,
        artifacts: Vec::new(),
        artifact_root: artifact_root.clone(),
        wall_seconds: 0.0,
    };

    let prefix = format!(
        "{}-{}-",
        fsutil::path_component(&pkg.name),
        fsutil::path_component(&variant.variant_id)
    );
    let workdir = tempfile::Builder::new()
        .prefix(&prefix)
        .tempdir_in(&settings.work_root)
        .map_err(io_err("creating build workdir"))?;
    let tree = workdir.path().join("src");

    if let Err(e) = fsutil::copy_tree(&pkg.source_path, &tree) {
        fs::write(&log_path, format!("copying sources from {}: {e}\n", pkg.source_path.display()))
            .map_err(io_err("writing build log"))?;
        outcome.reason = Some(format!("source copy failed: {e}"));
        return Ok(outcome);
    }

    let fin = process::run_logged(&pkg.build_cmd, &tree, &variant.build_env(), &log_path, settings.timeout)
        .map_err(io_err(format!("running build for {}", pkg.name)))?;
    outcome.wall_seconds = fin.wall.as_secs_f64();

    if let Some(m) = markers {
        let log = fs::read(&log_path).map_err(io_err("reading build log"))?;
        let counts = scan_markers(&log, m.reached, m.triggered);
        outcome.reached_count = counts.reached;
        outcome.triggered_count = counts.triggered;
    }

    match fin.exit {
        Exit::TimedOut => {
            outcome.status = BuildStatus::Timeout;
            outcome.reason = Some(format!("timed out after {:?}", settings.timeout.unwrap_or_default()));
        }
        Exit::Code(0) => match collect_artifacts(pkg, &tree, &artifact_root) {
            Ok(artifacts) => {
                outcome.status = BuildStatus::Ok;
                outcome.artifacts = artifacts;
            }
            Err(reason) => outcome.reason = Some(reason),
        },
        other => outcome.reason = Some(format!("build command failed: {other:?}")),
    }

    if !outcome.is_ok() && artifact_root.exists() {
        fs::remove_dir_all(&artifact_root).map_err(io_err("clearing partial artifacts"))?;
    }
    if settings.keep_workdir {
        let _ = workdir.keep();
    }
    Ok(outcome)
}

fn collect_artifacts(pkg: &PackageSpec, tree: &Path, artifact_root: &Path) -> Result<Vec<Artifact>, String> {
    let (all, each) = glob_set(&pkg.artifact_globs).map_err(|e| format!("bad artifact glob: {e}"))?;
    let mut matched_by = vec![false; each.len()];
    let mut artifacts = Vec::new();
    for entry in WalkDir::new(tree).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(|e| format!("scanning build tree: {e}"))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = fsutil::rel_key(entry.path().strip_prefix(tree).expect("child of tree"));
        if !all.is_match(&rel) {
            continue;
        }
        for (i, set) in each.iter().enumerate() {
            if set.is_match(&rel) {
                matched_by[i] = true;
            }
        }
        let dest = artifact_root.join(&rel);
        let copy = || -> io::Result<Artifact> {
            fs::create_dir_all(dest.parent().expect("artifact has a parent"))?;
            let size = fs::copy(entry.path(), &dest)?;
            Ok(Artifact { path: rel.clone(), size, digest: fsutil::digest_file(&dest)? })
        };
        artifacts.push(copy().map_err(|e| format!("retaining artifact {rel}: {e}"))?);
    }
    if let Some(i) = matched_by.iter().position(|m| !m) {
        return Err(format!("artifact glob `{}` matched no files", pkg.artifact_globs[i]));
    }
    Ok(artifacts)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ReproVerdict {
    Verified,
    Failed { differing: Vec<String>, reason: String },
}

impl ReproVerdict {
    pub fn stamp(&self) -> Reproducible {
        match self {
            ReproVerdict::Verified => Reproducible::Verified,
            ReproVerdict::Failed { .. } => Reproducible::Failed,
        }
    }

    pub fn is_build_error(&self) -> bool {
        matches!(self, ReproVerdict::Failed { reason, .. } if reason.starts_with("build-error"))
    }
}

/// Compares artifact digests of two builds; returns paths that differ or
/// exist on one side only.
pub fn differing_artifacts(a: &BuildOutcome, b: &BuildOutcome) -> Vec<String> {
    let (da, db) = (a.digests(), b.digests());
    let keys: BTreeSet<&str> = da.keys().chain(db.keys()).copied().collect();
    keys.into_iter().filter(|k| da.get(k) != db.get(k)).map(str::to_string).collect()
}

/// Builds the package twice in independent fresh directories and compares
/// every artifact's digest.
pub fn check_reproducibility(
    pkg: &PackageSpec,
    variant: &CompilerVariant,
    settings: &BuildSettings,
) -> Result<ReproVerdict, BuildError> {
    fs::create_dir_all(&settings.work_root).map_err(io_err("creating work root"))?;
    let scratch = tempfile::Builder::new()
        .prefix(&format!("repro-{}-", fsutil::path_component(&pkg.name)))
        .tempdir_in(&settings.work_root)
        .map_err(io_err("creating reproducibility scratch"))?;
    let first = build_package(pkg, variant, &scratch.path().join("first"), None, settings)?;
    let second = build_package(pkg, variant, &scratch.path().join("second"), None, settings)?;
    for o in [&first, &second] {
        if !o.is_ok() {
            return Ok(ReproVerdict::Failed {
                differing: Vec::new(),
                reason: format!("build-error: {}", o.reason.clone().unwrap_or_default()),
            });
        }
    }
    let differing = differing_artifacts(&first, &second);
    if differing.is_empty() {
        Ok(ReproVerdict::Verified)
    } else {
        Ok(ReproVerdict::Failed { differing, reason: "artifact digests differ".into() })
    }
}
