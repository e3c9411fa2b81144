//! Compiler variants for a bug (buggy, fixed, warning-laden) and the marker
//! protocol used by the warning-laden compiler.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{scan_markers, MarkerCounts};
use crate::process::{self, Exit};

#[derive(Debug, Error)]
pub enum ToolchainError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed bug descriptor {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid bug descriptor `{bug_id}`: {reason}")]
    Invalid { bug_id: String, reason: String },
    #[error("bug `{0}` has no witness program")]
    NoWitness(String),
    #[error("witness {witness} failed to compile (exit {exit:?}); log at {log}")]
    WitnessCompileFailed { witness: PathBuf, exit: Exit, log: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantRole {
    Buggy,
    Fixed,
    WarningLaden,
}

impl VariantRole {
    pub const ALL: [VariantRole; 3] = [VariantRole::WarningLaden, VariantRole::Buggy, VariantRole::Fixed];
}

impl fmt::Display for VariantRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantRole::Buggy => "buggy",
            VariantRole::Fixed => "fixed",
            VariantRole::WarningLaden => "warning_laden",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolFamily {
    Csmith,
    Emi,
    Orange,
    Yarpgen,
    Alive,
    User,
}

impl fmt::Display for ToolFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToolFamily::Csmith => "Csmith",
            ToolFamily::Emi => "EMI",
            ToolFamily::Orange => "Orange",
            ToolFamily::Yarpgen => "yarpgen",
            ToolFamily::Alive => "Alive",
            ToolFamily::User => "User-reported",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Enhancement,
    Normal,
    ReleaseBlocker,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Enhancement => "enhancement",
            Severity::Normal => "normal",
            Severity::ReleaseBlocker => "release_blocker",
        })
    }
}

/// Whether the "triggered" diagnostic fires exactly when the fault occurs or
/// conservatively. Declared by whoever wrote the warning-laden patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Precise,
    OverApproximating,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Precise => "precise",
            Precision::OverApproximating => "over_approximating",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompilerVariant {
    pub variant_id: String,
    pub role: VariantRole,
    pub c_compiler_path: PathBuf,
    pub cxx_compiler_path: PathBuf,
    #[serde(default)]
    pub extra_env: BTreeMap<String, String>,
    #[serde(default)]
    pub revision_scrubbed: bool,
}

impl CompilerVariant {
    /// Environment injected into every build and compile run with this variant.
    pub fn build_env(&self) -> BTreeMap<String, String> {
        let mut env = BTreeMap::new();
        env.insert("CC".to_string(), self.c_compiler_path.display().to_string());
        env.insert("CXX".to_string(), self.cxx_compiler_path.display().to_string());
        env.insert("IMPACT_VARIANT".to_string(), self.variant_id.clone());
        env.insert("IMPACT_VARIANT_ROLE".to_string(), self.role.to_string());
        env.extend(self.extra_env.clone());
        env
    }
}

/// Exactly one compiler per role.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CompilerVariant>", into = "Vec<CompilerVariant>")]
pub struct VariantSet {
    pub buggy: CompilerVariant,
    pub fixed: CompilerVariant,
    pub warning_laden: CompilerVariant,
}

impl VariantSet {
    pub fn get(&self, role: VariantRole) -> &CompilerVariant {
        match role {
            VariantRole::Buggy => &self.buggy,
            VariantRole::Fixed => &self.fixed,
            VariantRole::WarningLaden => &self.warning_laden,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &CompilerVariant> {
        VariantRole::ALL.into_iter().map(|r| self.get(r))
    }
}

impl TryFrom<Vec<CompilerVariant>> for VariantSet {
    type Error = String;

    fn try_from(variants: Vec<CompilerVariant>) -> Result<Self, Self::Error> {
        let mut by_role: BTreeMap<VariantRole, CompilerVariant> = BTreeMap::new();
        for v in variants {
            let role = v.role;
            if by_role.insert(role, v).is_some() {
                return Err(format!("more than one `{role}` variant"));
            }
        }
        let mut take = |role| by_role.remove(&role).ok_or_else(|| format!("missing `{role}` variant"));
        let set = VariantSet {
            buggy: take(VariantRole::Buggy)?,
            fixed: take(VariantRole::Fixed)?,
            warning_laden: take(VariantRole::WarningLaden)?,
        };
        let ids: std::collections::HashSet<_> = set.iter().map(|v| v.variant_id.as_str()).collect();
        if ids.len() != 3 || ids.contains("") {
            return Err("variant ids must be nonempty and distinct".into());
        }
        Ok(set)
    }
}

impl From<VariantSet> for Vec<CompilerVariant> {
    fn from(set: VariantSet) -> Self {
        vec![set.warning_laden, set.buggy, set.fixed]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugDescriptor {
    pub bug_id: String,
    pub tool_family: ToolFamily,
    pub severity: Severity,
    pub precision: Precision,
    pub variants: VariantSet,
    pub reached_marker: String,
    pub triggered_marker: String,
    pub witness_path: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BugFile {
    bug_id: String,
    tool_family: ToolFamily,
    severity: Severity,
    precision: Precision,
    variants: VariantSet,
    #[serde(default)]
    reached_marker: Option<String>,
    #[serde(default)]
    triggered_marker: Option<String>,
    #[serde(default)]
    witness_path: Option<PathBuf>,
}

pub fn default_reached_marker(bug_id: &str) -> String {
    format!("IMPACT-REACHED:{bug_id}")
}

pub fn default_triggered_marker(bug_id: &str) -> String {
    format!("IMPACT-TRIGGERED:{bug_id}")
}

impl BugDescriptor {
    /// Reads a descriptor file. Relative compiler and witness paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ToolchainError> {
        let bytes = fs::read(path).map_err(|source| ToolchainError::Io { path: path.into(), source })?;
        let file: BugFile = serde_json::from_slice(&bytes)
            .map_err(|source| ToolchainError::Parse { path: path.into(), source })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let mut variants = file.variants;
        for v in [&mut variants.buggy, &mut variants.fixed, &mut variants.warning_laden] {
            v.c_compiler_path = resolve(std::mem::take(&mut v.c_compiler_path));
            v.cxx_compiler_path = resolve(std::mem::take(&mut v.cxx_compiler_path));
        }
        let bug = BugDescriptor {
            reached_marker: file.reached_marker.unwrap_or_else(|| default_reached_marker(&file.bug_id)),
            triggered_marker: file
                .triggered_marker
                .unwrap_or_else(|| default_triggered_marker(&file.bug_id)),
            witness_path: file.witness_path.map(resolve),
            bug_id: file.bug_id,
            tool_family: file.tool_family,
            severity: file.severity,
            precision: file.precision,
            variants,
        };
        bug.validate()?;
        Ok(bug)
    }

    pub fn validate(&self) -> Result<(), ToolchainError> {
        let bad = |reason: &str| {
            Err(ToolchainError::Invalid { bug_id: self.bug_id.clone(), reason: reason.into() })
        };
        if self.bug_id.is_empty() {
            return bad("bug_id is empty");
        }
        let (r, t) = (&self.reached_marker, &self.triggered_marker);
        if r.is_empty() || t.is_empty() {
            return bad("markers must be nonempty");
        }
        if r.contains(t.as_str()) || t.contains(r.as_str()) {
            return bad("one marker is a substring of the other");
        }
        if r.contains('\n') || t.contains('\n') {
            return bad("markers must be single-line");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariantFailure {
    NotFound { path: PathBuf },
    NotExecutable { path: PathBuf },
    CompileFailed { exit: String, output: String },
    Spawn { message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant_id: String,
    pub runs: bool,
    pub reason: Option<VariantFailure>,
    pub version: Option<String>,
}

const TRIVIAL_UNIT: &str = "int impact_probe(void) { return 0; }\n";

/// Checks that the variant's C compiler exists, is executable, and compiles a
/// trivial translation unit; records the first line of `--version`.
pub fn validate_variant(v: &CompilerVariant) -> VariantReport {
    let report = |runs, reason, version| VariantReport {
        variant_id: v.variant_id.clone(),
        runs,
        reason,
        version,
    };
    for path in [&v.c_compiler_path, &v.cxx_compiler_path] {
        match fs::metadata(path) {
            Err(_) => return report(false, Some(VariantFailure::NotFound { path: path.clone() }), None),
            Ok(meta) if !meta.is_file() || meta.permissions().mode() & 0o111 == 0 => {
                return report(false, Some(VariantFailure::NotExecutable { path: path.clone() }), None)
            }
            Ok(_) => {}
        }
    }

    let scratch = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return report(false, Some(VariantFailure::Spawn { message: e.to_string() }), None),
    };
    let run = || -> io::Result<(Exit, String, String)> {
        fs::write(scratch.path().join("probe.c"), TRIVIAL_UNIT)?;
        let cc = process::shell_quote(&v.c_compiler_path.display().to_string());
        let log = scratch.path().join("compile.log");
        let fin = process::run_logged(
            &format!("{cc} -c probe.c -o probe.o"),
            scratch.path(),
            &v.build_env(),
            &log,
            None,
        )?;
        let output = String::from_utf8_lossy(&fs::read(&log)?).into_owned();
        let vlog = scratch.path().join("version.log");
        process::run_logged(&format!("{cc} --version"), scratch.path(), &v.build_env(), &vlog, None)?;
        let version =
            String::from_utf8_lossy(&fs::read(&vlog)?).lines().next().unwrap_or("").trim().to_string();
        Ok((fin.exit, output, version))
    };
    match run() {
        Err(e) => report(false, Some(VariantFailure::Spawn { message: e.to_string() }), None),
        Ok((exit, output, version)) => {
            let version = (!version.is_empty()).then_some(version);
            if exit.success() {
                report(true, None, version)
            } else {
                report(
                    false,
                    Some(VariantFailure::CompileFailed { exit: format!("{exit:?}"), output }),
                    version,
                )
            }
        }
    }
}

fn is_cxx_source(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("cc" | "cpp" | "cxx" | "C" | "c++")
    )
}

/// Compiles the bug's witness with the warning-laden compiler and counts
/// marker lines in the combined compiler output. The compiler log is kept in
/// `log_dir` when given.
pub fn witness_sanity_check(
    bug: &BugDescriptor,
    log_dir: Option<&Path>,
) -> Result<MarkerCounts, ToolchainError> {
    let witness = bug.witness_path.as_ref().ok_or_else(|| ToolchainError::NoWitness(bug.bug_id.clone()))?;
    let variant = &bug.variants.warning_laden;
    let scratch = tempfile::tempdir().map_err(|source| ToolchainError::Io { path: "tmp".into(), source })?;
    let log_root = log_dir.unwrap_or(scratch.path());
    fs::create_dir_all(log_root).map_err(|source| ToolchainError::Io { path: log_root.into(), source })?;
    let log = log_root.join("witness.log");

    let compiler = if is_cxx_source(witness) { &variant.cxx_compiler_path } else { &variant.c_compiler_path };
    let script = format!(
        "{} -c {} -o witness.o",
        process::shell_quote(&compiler.display().to_string()),
        process::shell_quote(&witness.display().to_string())
    );
    let fin = process::run_logged(&script, scratch.path(), &variant.build_env(), &log, None)
        .map_err(|source| ToolchainError::Io { path: witness.clone(), source })?;
    if !fin.exit.success() {
        return Err(ToolchainError::WitnessCompileFailed { witness: witness.clone(), exit: fin.exit, log });
    }
    let bytes = fs::read(&log).map_err(|source| ToolchainError::Io { path: log.clone(), source })?;
    Ok(scan_markers(&bytes, &bug.reached_marker, &bug.triggered_marker))
}

/// True iff none of `forbidden` occurs in the file's bytes.
pub fn assert_no_revision_marker(binary_path: &Path, forbidden: &[&str]) -> io::Result<bool> {
    let bytes = fs::read(binary_path)?;
    Ok(!forbidden
        .iter()
        .filter(|f| !f.is_empty())
        .any(|f| bytes.windows(f.len()).any(|w| w == f.as_bytes())))
}
