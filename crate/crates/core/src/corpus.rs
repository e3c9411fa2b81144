//! Corpus manifest: the list of buildable packages a bug is measured against.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::fsutil;

/// File extensions counted as C/C++ source or header code.
pub const C_FAMILY_EXTENSIONS: &[&str] = &["c", "h", "cc", "cpp", "cxx", "hh", "hpp"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid manifest entry `{entry}`: {reason}")]
    Validation { entry: String, reason: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reproducible {
    #[default]
    Unknown,
    Verified,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackageSpec {
    pub name: String,
    pub version: String,
    pub source_path: PathBuf,
    /// Shell command run in a fresh copy of the sources. The compiler variant
    /// is injected through `CC`, `CXX`, and the variant's extra environment.
    pub build_cmd: String,
    /// Shell command speaking the line-oriented test protocol on stdout.
    pub test_cmd: Option<String>,
    pub artifact_globs: Vec<String>,
    pub loc: u64,
    pub reproducible: Reproducible,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusManifest {
    pub min_loc: u64,
    pub created_at: DateTime<Utc>,
    pub packages: Vec<PackageSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    min_loc: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<DateTime<Utc>>,
    packages: Vec<PackageEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PackageEntry {
    name: String,
    version: String,
    source_path: PathBuf,
    build_cmd: String,
    test_cmd: Option<String>,
    artifact_globs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loc: Option<u64>,
    #[serde(default)]
    reproducible: Reproducible,
}

impl CorpusManifest {
    pub fn new(min_loc: u64, packages: Vec<PackageSpec>) -> Result<Self, CorpusError> {
        let m = CorpusManifest { min_loc, created_at: now(), packages };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for pkg in &self.packages {
            if pkg.name.is_empty() {
                return Err(invalid("", "package name is empty"));
            }
            if !seen.insert(pkg.name.as_str()) {
                return Err(invalid(&pkg.name, "duplicate package name"));
            }
            if pkg.artifact_globs.is_empty() {
                return Err(invalid(&pkg.name, "artifact_globs is empty"));
            }
            for glob in &pkg.artifact_globs {
                globset::Glob::new(glob)
                    .map_err(|e| invalid(&pkg.name, &format!("bad artifact glob `{glob}`: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn package(&self, name: &str) -> Option<&PackageSpec> {
        self.packages.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }
}

fn now() -> DateTime<Utc> {
    // Whole seconds keep the RFC 3339 form stable across save/load.
    Utc::now().trunc_subsecs(0)
}

fn invalid(entry: &str, reason: &str) -> CorpusError {
    CorpusError::Validation { entry: entry.to_string(), reason: reason.to_string() }
}

/// Loads and validates a manifest. Relative `source_path`s are resolved
/// against the manifest's directory; a missing `loc` is computed from the tree.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let file: ManifestFile = serde_json::from_slice(&bytes)
        .map_err(|source| CorpusError::Parse { path: path.into(), source })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut packages = Vec::with_capacity(file.packages.len());
    for entry in file.packages {
        let source_path =
            if entry.source_path.is_absolute() { entry.source_path } else { base.join(entry.source_path) };
        let loc = match entry.loc {
            Some(loc) => loc,
            None => count_loc(&source_path)
                .map_err(|e| invalid(&entry.name, &format!("counting lines: {e}")))?,
        };
        packages.push(PackageSpec {
            name: entry.name,
            version: entry.version,
            source_path,
            build_cmd: entry.build_cmd,
            test_cmd: entry.test_cmd,
            artifact_globs: entry.artifact_globs,
            loc,
            reproducible: entry.reproducible,
        });
    }

    let manifest = CorpusManifest {
        min_loc: file.min_loc,
        created_at: file.created_at.unwrap_or_else(now),
        packages,
    };
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(path: &Path, manifest: &CorpusManifest) -> Result<(), CorpusError> {
    let file = ManifestFile {
        min_loc: manifest.min_loc,
        created_at: Some(manifest.created_at),
        packages: manifest
            .packages
            .iter()
            .map(|p| PackageEntry {
                name: p.name.clone(),
                version: p.version.clone(),
                source_path: p.source_path.clone(),
                build_cmd: p.build_cmd.clone(),
                test_cmd: p.test_cmd.clone(),
                artifact_globs: p.artifact_globs.clone(),
                loc: Some(p.loc),
                reproducible: p.reproducible,
            })
            .collect(),
    };
    fsutil::write_json(path, &file).map_err(|source| CorpusError::Io { path: path.into(), source })
}

/// Counts non-blank lines that are not comment-only across the C/C++ files
/// under `source_path`. No preprocessor awareness.
pub fn count_loc(source_path: &Path) -> io::Result<u64> {
    if !source_path.exists() {
        return Err(io::Error::new(io::ErrorKind::NotFound, source_path.display().to_string()));
    }
    let mut total = 0;
    for entry in WalkDir::new(source_path).sort_by_file_name() {
        let entry = entry.map_err(io::Error::other)?;
        if !entry.file_type().is_file() || !is_c_family(entry.path()) {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        total += count_code_lines(&String::from_utf8_lossy(&bytes));
    }
    Ok(total)
}

fn is_c_family(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| C_FAMILY_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Lines with at least one character outside comments. String and character
/// literals are skipped so `"/*"` inside a literal does not open a comment.
pub fn count_code_lines(text: &str) -> u64 {
    let mut in_block = false;
    let mut count = 0;
    for line in text.lines() {
        let chars: Vec<char> = line.chars().collect();
        let mut has_code = false;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let next = chars.get(i + 1).copied();
            if in_block {
                if c == '*' && next == Some('/') {
                    in_block = false;
                    i += 2;
                } else {
                    i += 1;
                }
                continue;
            }
            match (c, next) {
                ('/', Some('/')) => break,
                ('/', Some('*')) => {
                    in_block = true;
                    i += 2;
                }
                ('"', _) | ('\'', _) => {
                    has_code = true;
                    i += 1;
                    while i < chars.len() && chars[i] != c {
                        if chars[i] == '\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                    i += 1;
                }
                (c, _) if c.is_whitespace() => i += 1,
                _ => {
                    has_code = true;
                    i += 1;
                }
            }
        }
        if has_code {
            count += 1;
        }
    }
    count
}

/// Keeps packages with `loc >= min_loc` (and, if asked, a verified
/// reproducibility stamp), preserving order.
pub fn filter_corpus(
    manifest: &CorpusManifest,
    min_loc: u64,
    require_reproducible: bool,
) -> CorpusManifest {
    let packages = manifest
        .packages
        .iter()
        .filter(|p| p.loc >= min_loc)
        .filter(|p| !require_reproducible || p.reproducible == Reproducible::Verified)
        .cloned()
        .collect();
    CorpusManifest { min_loc, created_at: manifest.created_at, packages }
}
