//! Impact tables: per-bug rows built from per-package records, grouped
//! totals, and markdown/CSV rendering.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyncompare::{Classification, ImpactRating};
use crate::toolchain::{BugDescriptor, Precision, Severity, ToolFamily};

/// Default corpus-wide function count used as the fraction denominator.
pub const DEFAULT_FUNCTION_TOTAL: u64 = 202_000;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("record for bug {found} (package {package}) passed while building row for bug {expected}")]
    CrossBug { expected: String, found: String, package: String },
    #[error("bug {bug}: {reason}")]
    Inconsistent { bug: String, reason: String },
    #[error("group {group}: {field} is {stored} but member rows sum to {recomputed}")]
    Reconciliation { group: String, field: &'static str, stored: u64, recomputed: u64 },
}

/// Everything the pipeline learned about one (bug, package) pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageRecord {
    pub bug_id: String,
    pub package: String,
    /// All variants needed by the executed stages built.
    pub builds_ok: bool,
    pub reached_count: u64,
    pub triggered_count: u64,
    /// At least one artifact pair differs bitwise (and counts as a diff).
    pub binary_diff: bool,
    pub symbols_available: bool,
    pub diff_functions: u64,
    pub test_verdict: Classification,
    pub manual_rating: Option<ImpactRating>,
}

impl PackageRecord {
    pub fn empty(bug_id: &str, package: &str) -> Self {
        PackageRecord {
            bug_id: bug_id.to_string(),
            package: package.to_string(),
            builds_ok: false,
            reached_count: 0,
            triggered_count: 0,
            binary_diff: false,
            symbols_available: false,
            diff_functions: 0,
            test_verdict: Classification::NotRun,
            manual_rating: None,
        }
    }
}

/// The bug metadata a row needs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugSummary {
    pub bug_id: String,
    pub tool_family: ToolFamily,
    pub severity: Severity,
    pub precision: Precision,
}

impl From<&BugDescriptor> for BugSummary {
    fn from(b: &BugDescriptor) -> Self {
        BugSummary { bug_id: b.bug_id.clone(), tool_family: b.tool_family, severity: b.severity, precision: b.precision }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub bug_id: String,
    pub tool_family: ToolFamily,
    pub severity: Severity,
    pub precision: Precision,
    pub builds_ok: u64,
    pub reached_pkgs: u64,
    pub triggered_pkgs: u64,
    pub diff_pkgs: u64,
    pub diff_functions: u64,
    /// Differing packages left out of `diff_functions` for lack of symbols.
    pub symbols_excluded: u64,
    pub function_total: Option<u64>,
    pub test_diffs: u64,
    pub manual_rating: Option<ImpactRating>,
    pub anomalies: Vec<String>,
}

impl ImpactRow {
    pub fn function_fraction(&self) -> FunctionFraction {
        function_fraction(self.diff_functions, self.function_total)
    }

    fn check(&self) -> Result<(), ReportError> {
        let bad = |reason: String| Err(ReportError::Inconsistent { bug: self.bug_id.clone(), reason });
        if self.triggered_pkgs > self.reached_pkgs || self.reached_pkgs > self.builds_ok {
            return bad(format!(
                "expected triggered ({}) <= reached ({}) <= builds ({})",
                self.triggered_pkgs, self.reached_pkgs, self.builds_ok
            ));
        }
        if self.test_diffs > self.diff_pkgs {
            return bad(format!("{} test diffs exceed {} diff packages", self.test_diffs, self.diff_pkgs));
        }
        if self.precision == Precision::Precise && self.diff_pkgs > self.triggered_pkgs {
            return bad(format!(
                "precise bug has {} diff packages but only {} triggered",
                self.diff_pkgs, self.triggered_pkgs
            ));
        }
        Ok(())
    }
}

/// Folds one bug's package records into its row. `function_total` is the
/// fraction denominator; `None` leaves the fraction unknown.
pub fn build_row(
    bug: &BugSummary,
    records: &[PackageRecord],
    function_total: Option<u64>,
) -> Result<ImpactRow, ReportError> {
    let mut row = ImpactRow {
        bug_id: bug.bug_id.clone(),
        tool_family: bug.tool_family,
        severity: bug.severity,
        precision: bug.precision,
        builds_ok: 0,
        reached_pkgs: 0,
        triggered_pkgs: 0,
        diff_pkgs: 0,
        diff_functions: 0,
        symbols_excluded: 0,
        function_total,
        test_diffs: 0,
        manual_rating: None,
        anomalies: Vec::new(),
    };
    for r in records {
        if r.bug_id != bug.bug_id {
            return Err(ReportError::CrossBug {
                expected: bug.bug_id.clone(),
                found: r.bug_id.clone(),
                package: r.package.clone(),
            });
        }
        if !r.builds_ok {
            continue;
        }
        row.builds_ok += 1;
        let reached = r.reached_count >= 1;
        let triggered = r.triggered_count >= 1;
        if reached {
            row.reached_pkgs += 1;
            if triggered {
                row.triggered_pkgs += 1;
            }
        } else if triggered {
            row.anomalies.push(format!("{}: triggered marker without reached marker", r.package));
        }
        if r.binary_diff {
            row.diff_pkgs += 1;
            if !triggered {
                row.anomalies.push(format!("{}: binaries differ although the fault never triggered", r.package));
            }
            if r.symbols_available {
                row.diff_functions += r.diff_functions;
            } else {
                row.symbols_excluded += 1;
            }
            if r.test_verdict == Classification::Divergent {
                row.test_diffs += 1;
            }
            row.manual_rating = row.manual_rating.max(r.manual_rating);
        } else if r.test_verdict == Classification::Divergent {
            row.anomalies.push(format!("{}: divergent tests without binary differences", r.package));
        }
    }
    row.check()?;
    Ok(row)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionFraction {
    Unknown,
    Known { diff: u64, total: u64 },
}

impl FunctionFraction {
    pub fn value(&self) -> Option<f64> {
        match *self {
            FunctionFraction::Unknown => None,
            FunctionFraction::Known { diff, total } => Some(diff as f64 / total as f64),
        }
    }
}

/// Display: `0%` only for zero, `<0.1%` below a thousandth, otherwise one
/// decimal place rounded half away from zero; unknown totals render `-`.
impl fmt::Display for FunctionFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let FunctionFraction::Known { diff, total } = *self else {
            return f.write_str("-");
        };
        let (d, t) = (u128::from(diff), u128::from(total));
        if d == 0 {
            f.write_str("0%")
        } else if d * 1000 < t {
            f.write_str("<0.1%")
        } else {
            let tenths = (2000 * d + t) / (2 * t);
            write!(f, "{}.{}%", tenths / 10, tenths % 10)
        }
    }
}

pub fn function_fraction(diff_functions: u64, total_functions: Option<u64>) -> FunctionFraction {
    match total_functions {
        Some(total) if total > 0 => FunctionFraction::Known { diff: diff_functions, total },
        _ => FunctionFraction::Unknown,
    }
}

/// Whole-percent rendering of `num / den`, rounded half away from zero.
/// Zero is `0%`; fractions below a thousandth are `<0.1%`; other nonzero
/// values that would round to zero are `<1%`. A zero denominator is `-`.
pub fn percent(num: u64, den: u64) -> String {
    let (n, d) = (u128::from(num), u128::from(den));
    if d == 0 {
        "-".into()
    } else if n == 0 {
        "0%".into()
    } else if n * 1000 < d {
        "<0.1%".into()
    } else {
        match (200 * n + d) / (2 * d) {
            0 => "<1%".into(),
            p => format!("{p}%"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Bug,
    Tool,
    Severity,
    All,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group_key: String,
    pub members: Vec<String>,
    pub builds_ok: u64,
    pub reached_pkgs: u64,
    pub triggered_pkgs: u64,
    pub diff_pkgs: u64,
    pub diff_functions: u64,
    pub symbols_excluded: u64,
    pub test_diffs: u64,
    pub bugs_reached: u64,
    pub bugs_triggered: u64,
    /// Triggered bugs whose conditions are precise.
    pub bugs_triggered_precise: u64,
    pub bugs_diff: u64,
    pub bugs_test_diff: u64,
    pub function_total: Option<u64>,
}

impl AggregateRow {
    pub fn bugs(&self) -> u64 {
        self.members.len() as u64
    }

    pub fn reached_pct(&self) -> String {
        percent(self.reached_pkgs, self.builds_ok)
    }

    pub fn triggered_pct(&self) -> String {
        percent(self.triggered_pkgs, self.builds_ok)
    }

    pub fn diff_pct(&self) -> String {
        percent(self.diff_pkgs, self.builds_ok)
    }

    pub fn test_diff_pct(&self) -> String {
        percent(self.test_diffs, self.builds_ok)
    }

    /// Differing functions relative to one corpus per bug with diffs.
    pub fn function_fraction(&self) -> FunctionFraction {
        function_fraction(self.diff_functions, self.function_total.map(|t| t * self.bugs_diff.max(1)))
    }

    fn fold(group_key: String, rows: &[&ImpactRow]) -> Self {
        let mut members: Vec<&ImpactRow> = rows.to_vec();
        members.sort_by(|a, b| cmp_bug_ids(&a.bug_id, &b.bug_id));
        let sum = |f: fn(&ImpactRow) -> u64| members.iter().map(|r| f(r)).sum::<u64>();
        let count = |f: fn(&ImpactRow) -> bool| members.iter().filter(|r| f(r)).count() as u64;
        let totals: Vec<Option<u64>> = members.iter().map(|r| r.function_total).collect();
        let function_total = match totals.first() {
            Some(first) if totals.iter().all(|t| t == first) => *first,
            _ => None,
        };
        AggregateRow {
            group_key,
            members: members.iter().map(|r| r.bug_id.clone()).collect(),
            builds_ok: sum(|r| r.builds_ok),
            reached_pkgs: sum(|r| r.reached_pkgs),
            triggered_pkgs: sum(|r| r.triggered_pkgs),
            diff_pkgs: sum(|r| r.diff_pkgs),
            diff_functions: sum(|r| r.diff_functions),
            symbols_excluded: sum(|r| r.symbols_excluded),
            test_diffs: sum(|r| r.test_diffs),
            bugs_reached: count(|r| r.reached_pkgs >= 1),
            bugs_triggered: count(|r| r.triggered_pkgs >= 1),
            bugs_triggered_precise: count(|r| r.triggered_pkgs >= 1 && r.precision == Precision::Precise),
            bugs_diff: count(|r| r.diff_pkgs >= 1),
            bugs_test_diff: count(|r| r.test_diffs >= 1),
            function_total,
        }
    }

    fn reconcile(&self, rows: &[ImpactRow]) -> Result<(), ReportError> {
        let members: Vec<&ImpactRow> =
            rows.iter().filter(|r| self.members.iter().any(|m| m == &r.bug_id)).collect();
        let again = AggregateRow::fold(self.group_key.clone(), &members);
        let fields: [(&'static str, u64, u64); 12] = [
            ("bugs", self.bugs(), again.bugs()),
            ("builds_ok", self.builds_ok, again.builds_ok),
            ("reached", self.reached_pkgs, again.reached_pkgs),
            ("triggered", self.triggered_pkgs, again.triggered_pkgs),
            ("diff_pkgs", self.diff_pkgs, again.diff_pkgs),
            ("diff_functions", self.diff_functions, again.diff_functions),
            ("symbols_excluded", self.symbols_excluded, again.symbols_excluded),
            ("test_diffs", self.test_diffs, again.test_diffs),
            ("bugs_reached", self.bugs_reached, again.bugs_reached),
            ("bugs_triggered", self.bugs_triggered, again.bugs_triggered),
            ("bugs_diff", self.bugs_diff, again.bugs_diff),
            ("bugs_test_diff", self.bugs_test_diff, again.bugs_test_diff),
        ];
        for (field, stored, recomputed) in fields {
            if stored != recomputed {
                return Err(ReportError::Reconciliation { group: self.group_key.clone(), field, stored, recomputed });
            }
        }
        Ok(())
    }
}

/// Numeric ids sort numerically and before any non-numeric ones.
pub fn cmp_bug_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Groups rows by tool family or severity (in enum order), or folds all of
/// them into one `ALL` row. `Grouping::Bug` yields one group per bug.
pub fn aggregate(rows: &[ImpactRow], key: Grouping) -> Vec<AggregateRow> {
    match key {
        Grouping::All => vec![AggregateRow::fold("ALL".into(), &rows.iter().collect::<Vec<_>>())],
        Grouping::Tool => {
            let mut groups: BTreeMap<ToolFamily, Vec<&ImpactRow>> = BTreeMap::new();
            for r in rows {
                groups.entry(r.tool_family).or_default().push(r);
            }
            groups.into_iter().map(|(k, v)| AggregateRow::fold(k.to_string(), &v)).collect()
        }
        Grouping::Severity => {
            let mut groups: BTreeMap<Severity, Vec<&ImpactRow>> = BTreeMap::new();
            for r in rows {
                groups.entry(r.severity).or_default().push(r);
            }
            groups.into_iter().map(|(k, v)| AggregateRow::fold(k.to_string(), &v)).collect()
        }
        Grouping::Bug => {
            let mut sorted: Vec<&ImpactRow> = rows.iter().collect();
            sorted.sort_by(|a, b| cmp_bug_ids(&a.bug_id, &b.bug_id));
            sorted.into_iter().map(|r| AggregateRow::fold(r.bug_id.clone(), &[r])).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactTable {
    pub grouping: Grouping,
    pub rows: Vec<ImpactRow>,
    pub groups: Vec<AggregateRow>,
}

impl ImpactTable {
    pub fn new(rows: Vec<ImpactRow>, grouping: Grouping) -> Self {
        let mut rows = rows;
        rows.sort_by(|a, b| {
            (a.tool_family, a.severity).cmp(&(b.tool_family, b.severity)).then(cmp_bug_ids(&a.bug_id, &b.bug_id))
        });
        let groups = match grouping {
            Grouping::Bug => Vec::new(),
            key => aggregate(&rows, key),
        };
        ImpactTable { grouping, rows, groups }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Markdown,
    Csv,
}

pub const BUG_CSV_HEADER: &str =
    "bug_id,severity,builds_ok,reached,triggered,precision,diff_pkgs,diff_functions,diff_fraction,test_diffs,manual_rating";

pub const GROUP_CSV_HEADER: &str = "group,bugs,builds_ok,reached,reached_pct,triggered,triggered_pct,\
bugs_triggered_precise,diff_pkgs,diff_pct,diff_functions,diff_fraction,test_diffs,test_diff_pct,\
bugs_reached,bugs_triggered,bugs_diff,bugs_test_diff";

/// Footer stating the `Builds` denominator convention in markdown tables.
pub const BUILDS_NOTE: &str = "\nBuilds counts packages for which every compiler variant needed by the executed stages built.\n";

fn rating_id(r: Option<ImpactRating>) -> String {
    match r {
        None => "-".into(),
        Some(r) => serde_json::to_value(r).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
    }
}

fn row_test_diffs(r: &ImpactRow) -> String {
    if r.diff_pkgs == 0 { "-".into() } else { r.test_diffs.to_string() }
}

/// Renders the table. Per-bug tables list one line per bug; grouped tables
/// list one line per group after checking every sum against its members.
pub fn render(table: &ImpactTable, format: Format) -> Result<String, ReportError> {
    for g in &table.groups {
        g.reconcile(&table.rows)?;
    }
    let mut out = String::new();
    match (table.grouping, format) {
        (Grouping::Bug, Format::Csv) => {
            out.push_str(BUG_CSV_HEADER);
            out.push('\n');
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    r.bug_id,
                    r.severity,
                    r.builds_ok,
                    r.reached_pkgs,
                    r.triggered_pkgs,
                    r.precision,
                    r.diff_pkgs,
                    r.diff_functions,
                    r.function_fraction(),
                    row_test_diffs(r),
                    rating_id(r.manual_rating),
                );
            }
        }
        (Grouping::Bug, Format::Markdown) => {
            out.push_str("| Bug | Tool | Severity | Builds | Reached | Triggered | Precise | Diff pkgs | Functions | Test diffs | Manual |\n");
            out.push_str("|---|---|---|---:|---:|---:|---|---:|---|---:|---|\n");
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} [{}] | {} | {} |",
                    r.bug_id,
                    r.tool_family,
                    r.severity.to_string().replace('_', " "),
                    r.builds_ok,
                    r.reached_pkgs,
                    r.triggered_pkgs,
                    if r.precision == Precision::Precise { "yes" } else { "no" },
                    r.diff_pkgs,
                    r.function_fraction(),
                    r.diff_functions,
                    row_test_diffs(r),
                    r.manual_rating.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
                );
            }
            let excluded: u64 = table.rows.iter().map(|r| r.symbols_excluded).sum();
            if excluded > 0 {
                let _ = writeln!(out, "\n{excluded} differing package(s) without symbols are not counted in Functions.");
            }
        }
        (_, Format::Csv) => {
            out.push_str(GROUP_CSV_HEADER);
            out.push('\n');
            for g in &table.groups {
                let no_diffs = g.diff_pkgs == 0;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    g.group_key,
                    g.bugs(),
                    g.builds_ok,
                    g.reached_pkgs,
                    g.reached_pct(),
                    g.triggered_pkgs,
                    g.triggered_pct(),
                    g.bugs_triggered_precise,
                    g.diff_pkgs,
                    g.diff_pct(),
                    g.diff_functions,
                    g.function_fraction(),
                    if no_diffs { "-".into() } else { g.test_diffs.to_string() },
                    if no_diffs { "-".into() } else { g.test_diff_pct() },
                    g.bugs_reached,
                    g.bugs_triggered,
                    g.bugs_diff,
                    if g.bugs_diff == 0 { "-".into() } else { g.bugs_test_diff.to_string() },
                );
            }
        }
        (_, Format::Markdown) => {
            out.push_str("| Group | Bugs | Builds | Reached | Triggered | Diff pkgs | Functions | Test diffs | Bugs reached | Bugs triggered (precise) | Bugs with diffs | Bugs with test diffs |\n");
            out.push_str("|---|---:|---:|---|---|---|---|---|---:|---|---:|---|\n");
            for g in &table.groups {
                let no_diffs = g.diff_pkgs == 0;
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} ({}) | {} ({}) | {} ({}) | {} [{}] | {} | {} | {} ({}) | {} | {} |",
                    g.group_key.replace('_', " "),
                    g.bugs(),
                    g.builds_ok,
                    g.reached_pkgs,
                    g.reached_pct(),
                    g.triggered_pkgs,
                    g.triggered_pct(),
                    g.diff_pkgs,
                    g.diff_pct(),
                    g.function_fraction(),
                    g.diff_functions,
                    if no_diffs { "-".into() } else { format!("{} ({})", g.test_diffs, g.test_diff_pct()) },
                    g.bugs_reached,
                    g.bugs_triggered,
                    g.bugs_triggered_precise,
                    g.bugs_diff,
                    if g.bugs_diff == 0 { "-".into() } else { g.bugs_test_diff.to_string() },
                );
            }
        }
    }
    if format == Format::Markdown {
        out.push_str(BUILDS_NOTE);
    }
    Ok(out)
}
