//! Bitwise comparison of artifacts and opcode-only function diffing of their
//! disassembly.
//!
//! The disassembly text grammar is line-oriented (objdump's `-d` layout):
//!
//! ```text
//! Disassembly of section .text:
//!
//! 0000000000001139 <scale>:
//!     1139:	f3 0f 1e fa          	endbr64
//!     113d:	83 c0 03             	add    $0x3,%eax
//! ```
//!
//! An optional `Sections:` summary (objdump `-h`) preceding the disassembly
//! marks which sections hold code; when present only those are parsed.
#![allow(clippy::tabs_in_doc_comments)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::BuildOutcome;
use crate::fsutil;
use crate::process;

pub const DEFAULT_DISASSEMBLER_CMD: &str = "objdump -h -d {input}";

/// Instruction prefixes folded into the following mnemonic.
pub const DEFAULT_PREFIXES: &[&str] = &[
    "lock", "rep", "repe", "repz", "repne", "repnz", "notrack", "bnd", "xacquire", "xrelease",
    "data16", "data32", "addr16", "addr32", "cs", "ds", "es", "fs", "gs", "ss", "rex", "rex.w",
    "rex.W", "rex.B", "rex.R", "rex.X", "rex.WB", "rex.WR", "rex.WX", "rex.RB", "rex.WRB",
];

#[derive(Debug, Error)]
pub enum AsmError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("disassembler failed on {path}: {message}")]
    Disassembler { path: PathBuf, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub address: String,
    pub opcode: String,
    pub operands: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionBody {
    pub name: String,
    pub instructions: Vec<Instruction>,
}

pub type FunctionMap = BTreeMap<String, FunctionBody>;

#[derive(Clone, Debug)]
pub struct ParseOptions {
    pub prefixes: HashSet<String>,
    /// Without a `Sections:` summary, parse every section (true) or none.
    pub keep_all_without_summary: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            prefixes: DEFAULT_PREFIXES.iter().map(|s| s.to_string()).collect(),
            keep_all_without_summary: true,
        }
    }
}

impl ParseOptions {
    /// Splits instruction text into (opcode, operands), folding any leading
    /// prefix tokens into the opcode with `+`.
    pub fn split_opcode(&self, text: &str) -> Option<(String, String)> {
        let mut rest = text.trim_start();
        let mut parts: Vec<&str> = Vec::new();
        loop {
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            let (tok, tail) = rest.split_at(end);
            if tok.is_empty() {
                break;
            }
            parts.push(tok);
            rest = tail.trim_start();
            if !self.prefixes.contains(tok) || rest.is_empty() {
                break;
            }
        }
        if parts.is_empty() {
            return None;
        }
        Some((parts.join("+"), rest.trim_end().to_string()))
    }
}

fn is_hex(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_hexdigit())
}

fn is_byte_column(s: &str) -> bool {
    s.split_whitespace().all(|t| is_hex(t) && t.len() % 2 == 0) && !s.trim().is_empty()
}

/// `<hexaddr> <<symbol>>:`
fn parse_label(line: &str) -> Option<(&str, &str)> {
    let line = line.trim();
    let (addr, rest) = line.split_once(' ')?;
    if !is_hex(addr) {
        return None;
    }
    let name = rest.trim_start().strip_prefix('<')?.strip_suffix(">:")?;
    Some((addr, name))
}

/// `<hexaddr>:` followed by optional byte pairs and the instruction text.
/// Returns `Some((addr, None))` for data lines with no mnemonic.
fn parse_instruction_line(line: &str) -> Option<(&str, Option<&str>)> {
    let trimmed = line.trim_start();
    let colon = trimmed.find(':')?;
    let addr = &trimmed[..colon];
    if !is_hex(addr) {
        return None;
    }
    let rest = &trimmed[colon + 1..];
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    if rest.contains('\t') {
        let cols: Vec<&str> = rest.split('\t').map(str::trim).filter(|c| !c.is_empty()).collect();
        return match cols.as_slice() {
            [] => Some((addr, None)),
            [only] if is_byte_column(only) => Some((addr, None)),
            [first, ..] if is_byte_column(first) => {
                let start = rest.find(cols[1]).expect("column comes from rest");
                Some((addr, Some(rest[start..].trim())))
            }
            _ => Some((addr, Some(rest.trim()))),
        };
    }
    let mut text = rest.trim_start();
    loop {
        let end = text.find(char::is_whitespace).unwrap_or(text.len());
        let tok = &text[..end];
        if tok.len() == 2 && is_hex(tok) {
            text = text[end..].trim_start();
        } else {
            break;
        }
    }
    let text = text.trim();
    Some((addr, (!text.is_empty()).then_some(text)))
}

/// Names of sections flagged `CODE` in an objdump `-h` summary, if present.
fn code_sections(text: &str) -> Option<HashSet<String>> {
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.next() {
        if line.trim() != "Sections:" {
            continue;
        }
        let mut code = HashSet::new();
        while let Some(line) = lines.next() {
            let trimmed = line.trim();
            if trimmed.starts_with("Idx ") {
                continue;
            }
            let mut toks = trimmed.split_whitespace();
            let (Some(idx), Some(name)) = (toks.next(), toks.next()) else { break };
            if !idx.bytes().all(|b| b.is_ascii_digit()) {
                break;
            }
            if let Some(flags) = lines.peek() {
                if flags.split(|c: char| c == ',' || c.is_whitespace()).any(|f| f == "CODE") {
                    code.insert(name.to_string());
                }
                lines.next();
            }
        }
        return Some(code);
    }
    None
}

/// Splits disassembly text into per-function instruction lists keyed by
/// symbol. Duplicate symbols are renamed `name#1`, `name#2`, ... in order of
/// appearance.
pub fn parse_functions(text: &str, opts: &ParseOptions) -> Result<FunctionMap, AsmError> {
    let code = code_sections(text);
    let keep_section = |name: &str| match &code {
        Some(set) => set.contains(name),
        None => opts.keep_all_without_summary,
    };

    let mut bodies: Vec<FunctionBody> = Vec::new();
    // Before any section header the text is treated as one implicit section.
    let mut keeping = opts.keep_all_without_summary || code.is_none();
    let mut in_function = false;
    let mut in_summary = false;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed == "Sections:" {
            in_summary = true;
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("Disassembly of section ") {
            in_summary = false;
            let name = rest.strip_suffix(':').unwrap_or(rest).trim();
            keeping = keep_section(name);
            in_function = false;
            continue;
        }
        if in_summary || trimmed.is_empty() || trimmed.contains("file format") {
            continue;
        }
        if !keeping {
            continue;
        }
        if let Some((_, name)) = parse_label(line) {
            if name.is_empty() {
                return Err(AsmError::Parse { line: lineno, reason: "function label with empty symbol".into() });
            }
            bodies.push(FunctionBody { name: name.to_string(), instructions: Vec::new() });
            in_function = true;
            continue;
        }
        if let Some((addr, text)) = parse_instruction_line(line) {
            let Some(text) = text else { continue };
            if !in_function {
                return Err(AsmError::Parse {
                    line: lineno,
                    reason: "instruction outside of any function label".into(),
                });
            }
            let Some((opcode, operands)) = opts.split_opcode(text) else { continue };
            bodies.last_mut().expect("in_function implies a body").instructions.push(Instruction {
                address: addr.to_string(),
                opcode,
                operands,
            });
        }
    }

    let mut totals: HashMap<String, usize> = HashMap::new();
    for b in &bodies {
        *totals.entry(b.name.clone()).or_default() += 1;
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut map = FunctionMap::new();
    for mut body in bodies {
        if totals[&body.name] > 1 {
            let n = seen.entry(body.name.clone()).or_default();
            *n += 1;
            body.name = format!("{}#{}", body.name, n);
        }
        map.insert(body.name.clone(), body);
    }
    Ok(map)
}

/// Labels objdump synthesizes when no symbol covers an address.
pub fn is_synthetic_label(name: &str) -> bool {
    name.starts_with('.') || name.contains("@plt") || name.contains("+0x")
}

/// True when at least one label names a real symbol.
pub fn symbols_available(functions: &FunctionMap) -> bool {
    functions.values().any(|f| !is_synthetic_label(f.name.split('#').next().unwrap_or("")))
}

/// The function's opcode sequence with every operand dropped.
pub fn normalize(body: &FunctionBody) -> Vec<&str> {
    body.instructions.iter().map(|i| i.opcode.as_str()).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDiff {
    pub functions_total_a: u64,
    pub functions_total_b: u64,
    pub matched: u64,
    pub differing: Vec<String>,
    /// Present only in `b`.
    pub added: Vec<String>,
    /// Present only in `a`.
    pub removed: Vec<String>,
}

pub fn diff_functions(a: &FunctionMap, b: &FunctionMap) -> FunctionDiff {
    let mut diff = FunctionDiff {
        functions_total_a: a.len() as u64,
        functions_total_b: b.len() as u64,
        ..FunctionDiff::default()
    };
    for (name, fa) in a {
        match b.get(name) {
            Some(fb) => {
                diff.matched += 1;
                if normalize(fa) != normalize(fb) {
                    diff.differing.push(name.clone());
                }
            }
            None => diff.removed.push(name.clone()),
        }
    }
    diff.added = b.keys().filter(|k| !a.contains_key(*k)).cloned().collect();
    diff
}

pub fn compare_bitwise(a: &Path, b: &Path) -> io::Result<bool> {
    let (ma, mb) = (fs::metadata(a)?, fs::metadata(b)?);
    if ma.len() != mb.len() {
        return Ok(false);
    }
    Ok(fs::read(a)? == fs::read(b)?)
}

#[derive(Clone, Debug)]
pub struct Disassembler {
    /// Shell template; `{input}` is replaced by the quoted binary path, or the
    /// path is appended when the placeholder is absent.
    pub command: String,
    pub use_cache: bool,
}

impl Default for Disassembler {
    fn default() -> Self {
        Disassembler { command: DEFAULT_DISASSEMBLER_CMD.into(), use_cache: true }
    }
}

impl Disassembler {
    pub fn new(command: impl Into<String>) -> Self {
        Disassembler { command: command.into(), use_cache: true }
    }

    fn cache_path(binary: &Path) -> PathBuf {
        let mut name = binary.file_name().unwrap_or_default().to_os_string();
        name.push(".disasm.txt");
        binary.with_file_name(name)
    }

    /// Runs the configured disassembler. Output is cached beside the binary.
    pub fn disassemble(&self, binary: &Path) -> Result<String, AsmError> {
        let cache = Self::cache_path(binary);
        if self.use_cache {
            if let Ok(text) = fs::read_to_string(&cache) {
                return Ok(text);
            }
        }
        let quoted = process::shell_quote(&binary.display().to_string());
        let script = if self.command.contains("{input}") {
            self.command.replace("{input}", &quoted)
        } else {
            format!("{} {quoted}", self.command)
        };
        let io_ctx = |what: &str| {
            let what = format!("{what} for {}", binary.display());
            move |source| AsmError::Io { context: what, source }
        };
        let scratch = tempfile::tempdir().map_err(io_ctx("scratch dir"))?;
        let out_path = scratch.path().join("stdout");
        let err_path = scratch.path().join("stderr");
        let fin = process::run_shell(
            &script,
            scratch.path(),
            &BTreeMap::new(),
            fs::File::create(&out_path).map_err(io_ctx("stdout capture"))?,
            fs::File::create(&err_path).map_err(io_ctx("stderr capture"))?,
            None,
        )
        .map_err(io_ctx("spawning disassembler"))?;
        if !fin.exit.success() {
            let stderr = fs::read_to_string(&err_path).unwrap_or_default();
            return Err(AsmError::Disassembler {
                path: binary.to_path_buf(),
                message: format!("{:?}: {}", fin.exit, stderr.trim()),
            });
        }
        let text = String::from_utf8_lossy(&fs::read(&out_path).map_err(io_ctx("reading output"))?).into_owned();
        if self.use_cache {
            fsutil::write_atomic(&cache, text.as_bytes()).map_err(io_ctx("writing cache"))?;
        }
        Ok(text)
    }

    pub fn functions(&self, binary: &Path, opts: &ParseOptions) -> Result<FunctionMap, AsmError> {
        parse_functions(&self.disassemble(binary)?, opts)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryDiffReport {
    /// Artifact path relative to the package root.
    pub artifact: String,
    pub path_a: PathBuf,
    pub path_b: PathBuf,
    pub bitwise_identical: bool,
    pub symbols_available: bool,
    pub functions_total_a: Option<u64>,
    pub functions_total_b: Option<u64>,
    pub matched: Option<u64>,
    pub differing: Vec<String>,
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub note: Option<String>,
    pub error: Option<String>,
}

impl BinaryDiffReport {
    fn identical(artifact: &str, a: &Path, b: &Path) -> Self {
        BinaryDiffReport {
            artifact: artifact.to_string(),
            path_a: a.to_path_buf(),
            path_b: b.to_path_buf(),
            bitwise_identical: true,
            symbols_available: true,
            functions_total_a: None,
            functions_total_b: None,
            matched: None,
            differing: Vec::new(),
            added: Vec::new(),
            removed: Vec::new(),
            note: None,
            error: None,
        }
    }

    fn without_functions(mut self, note: Option<String>, error: Option<String>) -> Self {
        self.bitwise_identical = false;
        self.symbols_available = false;
        self.note = note;
        self.error = error;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralAnomaly {
    pub artifact: String,
    pub only_in: Side,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactSetDiff {
    pub reports: Vec<BinaryDiffReport>,
    pub structural: Vec<StructuralAnomaly>,
}

impl ArtifactSetDiff {
    pub fn any_difference(&self) -> bool {
        !self.structural.is_empty() || self.reports.iter().any(|r| !r.bitwise_identical)
    }
}

/// Compares one artifact pair; disassembles only when the bytes differ and
/// `disassemble` is set.
pub fn diff_pair(
    artifact: &str,
    a: &Path,
    b: &Path,
    disassembler: &Disassembler,
    opts: &ParseOptions,
    disassemble: bool,
) -> BinaryDiffReport {
    let base = BinaryDiffReport::identical(artifact, a, b);
    match compare_bitwise(a, b) {
        Ok(true) => return base,
        Ok(false) => {}
        Err(e) => return base.without_functions(None, Some(format!("comparing bytes: {e}"))),
    }
    if !disassemble {
        return base.without_functions(Some("disassembly skipped".into()), None);
    }
    let maps = disassembler.functions(a, opts).and_then(|fa| Ok((fa, disassembler.functions(b, opts)?)));
    let (fa, fb) = match maps {
        Ok(m) => m,
        Err(e) => return base.without_functions(None, Some(e.to_string())),
    };
    if !symbols_available(&fa) || !symbols_available(&fb) {
        return base.without_functions(Some("no symbol labels in disassembly".into()), None);
    }
    let d = diff_functions(&fa, &fb);
    BinaryDiffReport {
        bitwise_identical: false,
        symbols_available: true,
        functions_total_a: Some(d.functions_total_a),
        functions_total_b: Some(d.functions_total_b),
        matched: Some(d.matched),
        differing: d.differing,
        added: d.added,
        removed: d.removed,
        ..base
    }
}

/// Pairs the artifacts of two successful builds by relative path and diffs
/// each pair. Paths present on one side only are structural anomalies.
pub fn diff_artifact_sets(
    a: &BuildOutcome,
    b: &BuildOutcome,
    disassembler: &Disassembler,
    opts: &ParseOptions,
    disassemble: bool,
) -> ArtifactSetDiff {
    let pa: BTreeSet<&str> = a.artifacts.iter().map(|x| x.path.as_str()).collect();
    let pb: BTreeSet<&str> = b.artifacts.iter().map(|x| x.path.as_str()).collect();
    let mut out = ArtifactSetDiff::default();
    for rel in pa.union(&pb) {
        match (pa.contains(rel), pb.contains(rel)) {
            (true, true) => out.reports.push(diff_pair(
                rel,
                &a.artifact_path(rel),
                &b.artifact_path(rel),
                disassembler,
                opts,
                disassemble,
            )),
            (true, false) => out.structural.push(StructuralAnomaly { artifact: rel.to_string(), only_in: Side::A }),
            _ => out.structural.push(StructuralAnomaly { artifact: rel.to_string(), only_in: Side::B }),
        }
    }
    out
}
