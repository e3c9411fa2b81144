//! Shared fixtures: published impact rows, toy packages and shim compilers.
#![allow(dead_code)]

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use miscomp_impact::dyncompare::{Classification, ImpactRating};
use miscomp_impact::fsutil::write_json;
use miscomp_impact::report::{BugSummary, PackageRecord};
use miscomp_impact::toolchain::{Precision, Severity, ToolFamily};
use serde_json::json;

/// One per-bug row as printed in the published impact tables.
#[derive(Clone, Copy, Debug)]
pub struct PublishedRow {
    pub id: &'static str,
    pub tool: ToolFamily,
    pub severity: Severity,
    pub builds: u64,
    pub reached: u64,
    pub triggered: u64,
    pub precise: bool,
    pub diff: u64,
    pub functions: u64,
    pub test_diffs: u64,
    pub manual: Option<ImpactRating>,
}

/// Corpus size every published row was measured against.
pub const CORPUS_SIZE: u64 = 309;

const fn row(
    id: &'static str,
    tool: ToolFamily,
    severity: Severity,
    counts: (u64, u64, u64),
    precise: bool,
    diff: (u64, u64, u64),
    manual: Option<ImpactRating>,
) -> PublishedRow {
    PublishedRow {
        id,
        tool,
        severity,
        builds: counts.0,
        reached: counts.1,
        triggered: counts.2,
        precise,
        diff: diff.0,
        functions: diff.1,
        test_diffs: diff.2,
        manual,
    }
}

use ImpactRating::{Low, VeryLow};
use Severity::{Enhancement as Enh, Normal as Nor, ReleaseBlocker as Rb};
use ToolFamily::{Alive, Csmith, Emi, Orange, User, Yarpgen};

pub const FUZZER_ROWS: &[PublishedRow] = &[
    row("11964", Csmith, Enh, (307, 306, 2), false, (2, 52, 0), Some(Low)),
    row("11977", Csmith, Nor, (307, 301, 118), false, (20, 35, 0), None),
    row("12189", Csmith, Enh, (307, 297, 291), false, (46, 177, 0), None),
    row("12885", Csmith, Enh, (304, 284, 1), false, (0, 0, 0), None),
    row("12899", Csmith, Enh, (306, 143, 6), false, (0, 0, 0), None),
    row("12901", Csmith, Enh, (306, 291, 286), false, (36, 50, 0), None),
    row("13326", Csmith, Enh, (304, 125, 125), false, (0, 0, 0), None),
    row("17179", Csmith, Nor, (305, 245, 3), false, (2, 7, 0), None),
    row("17473", Csmith, Rb, (308, 285, 16), false, (10, 16, 0), None),
    row("27392", Csmith, Nor, (308, 205, 205), true, (202, 4997, 0), Some(VeryLow)),
    row("24516", Emi, Nor, (307, 130, 0), true, (0, 0, 0), None),
    row("25900", Emi, Nor, (307, 221, 5), false, (0, 0, 0), None),
    row("26266", Emi, Nor, (308, 302, 195), false, (0, 0, 0), None),
    row("26323", Emi, Nor, (305, 281, 32), false, (12, 18, 0), Some(VeryLow)),
    row("26734", Emi, Nor, (308, 175, 5), false, (0, 0, 0), None),
    row("27968", Emi, Nor, (308, 122, 0), true, (0, 0, 0), None),
    row("28610", Emi, Nor, (306, 300, 295), false, (9, 15, 0), None),
    row("29031", Emi, Nor, (307, 297, 215), false, (127, 639, 1), Some(Low)),
    row("30841", Emi, Nor, (308, 306, 191), false, (0, 0, 0), None),
    row("30935", Emi, Nor, (308, 287, 10), false, (3, 3, 0), Some(Low)),
    row("15940", Orange, Nor, (307, 158, 19), false, (0, 0, 0), None),
    row("15959", Orange, Nor, (307, 108, 9), false, (8, 14, 0), None),
    row("19636", Orange, Nor, (307, 7, 7), false, (0, 0, 0), None),
    row("26407", Orange, Nor, (308, 4, 0), true, (0, 0, 0), None),
    row("28504", Orange, Nor, (306, 16, 0), false, (0, 0, 0), None),
    row("32830", Yarpgen, Enh, (308, 301, 0), true, (0, 0, 0), None),
    row("34381", Yarpgen, Enh, (307, 307, 257), false, (0, 0, 0), None),
];

pub const OTHER_ROWS: &[PublishedRow] = &[
    row("20186", Alive, Nor, (309, 34, 0), true, (0, 0, 0), None),
    row("20189", Alive, Nor, (309, 266, 176), false, (122, 2094, 0), None),
    row("21242", Alive, Nor, (309, 253, 151), false, (50, 130, 0), None),
    row("21243", Alive, Nor, (309, 56, 0), true, (0, 0, 0), None),
    row("21245", Alive, Nor, (309, 274, 0), true, (0, 0, 0), None),
    row("21255", Alive, Nor, (309, 9, 0), true, (0, 0, 0), None),
    row("21256", Alive, Nor, (309, 167, 0), true, (0, 0, 0), None),
    row("21274", Alive, Nor, (309, 0, 0), true, (0, 0, 0), None),
    row("13547", User, Rb, (306, 300, 278), false, (0, 0, 0), None),
    row("15674", User, Rb, (307, 301, 0), true, (0, 0, 0), None),
    row("17103", User, Rb, (305, 305, 0), false, (0, 0, 0), None),
    row("24187", User, Nor, (309, 0, 0), true, (0, 0, 0), None),
    row("26711", User, Nor, (308, 0, 0), true, (0, 0, 0), None),
    row("27575", User, Nor, (308, 133, 44), false, (0, 0, 0), None),
    row("27903", User, Nor, (308, 286, 231), false, (52, 169, 1), Some(Low)),
    row("31808", User, Nor, (308, 229, 0), true, (0, 0, 0), None),
    row("33706", User, Nor, (308, 259, 40), false, (4, 9, 0), Some(Low)),
    row("37119", User, Nor, (303, 177, 0), false, (0, 0, 0), None),
];

pub fn all_rows() -> Vec<PublishedRow> {
    FUZZER_ROWS.iter().chain(OTHER_ROWS).copied().collect()
}

pub fn summary(r: &PublishedRow) -> BugSummary {
    BugSummary {
        bug_id: r.id.into(),
        tool_family: r.tool,
        severity: r.severity,
        precision: if r.precise { Precision::Precise } else { Precision::OverApproximating },
    }
}

/// Per-package records that fold back into `r`: the first `builds` of the
/// corpus built, prefixes of those reached, triggered, differ and diverge.
pub fn records_for(r: &PublishedRow) -> Vec<PackageRecord> {
    (0..CORPUS_SIZE)
        .map(|i| {
            let mut rec = PackageRecord::empty(r.id, &format!("pkg{i:03}"));
            if i >= r.builds {
                return rec;
            }
            rec.builds_ok = true;
            rec.symbols_available = true;
            if i < r.reached {
                rec.reached_count = 1 + i % 7;
            }
            if i < r.triggered {
                rec.triggered_count = 1 + i % 3;
            }
            if i < r.diff {
                rec.binary_diff = true;
                rec.diff_functions = r.functions / r.diff + u64::from(i == 0) * (r.functions % r.diff);
                rec.test_verdict = if i < r.test_diffs { Classification::Divergent } else { Classification::Identical };
                if i == 0 {
                    rec.manual_rating = r.manual;
                }
            }
            rec
        })
        .collect()
}

/// Writes a record store under `run_dir` holding the given rows.
pub fn write_store(run_dir: &Path, rows: &[PublishedRow]) {
    for r in rows {
        let bug_dir = run_dir.join(r.id);
        write_json(&bug_dir.join("bug.json"), &summary(r)).unwrap();
        for rec in records_for(r) {
            write_json(&bug_dir.join(&rec.package).join("record.json"), &rec).unwrap();
        }
    }
}

pub fn write_exec(path: &Path, body: &str) -> PathBuf {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    fs::write(path, body).unwrap();
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
    path.to_path_buf()
}

/// Three compiler shims around the system C compiler. The warning-laden shim
/// reports a reached marker for every C file it compiles and a triggered
/// marker for files defining `int <target>(` unless the file name is listed
/// in `silent`. The buggy shim rewrites the first `addl` inside `<target>`
/// to `subl`, for files whose name is not listed in `spared`.
pub struct Shims {
    pub warn: PathBuf,
    pub buggy: PathBuf,
    pub fixed: PathBuf,
}

pub fn make_shims(dir: &Path, bug_id: &str, target: &str, silent: &[&str], spared: &[&str]) -> Shims {
    let list = |names: &[&str]| names.join(" ");
    let warn = format!(
        r#"#!/bin/sh
for a in "$@"; do
  case "$a" in
    *.c)
      echo "note: IMPACT-REACHED:{bug_id} in $a" >&2
      skip=
      for s in {silent}; do [ "$(basename "$a")" = "$s" ] && skip=1; done
      if [ -z "$skip" ] && grep -q '^int {target}(.*{{' "$a"; then
        echo "warning: IMPACT-TRIGGERED:{bug_id} in $a" >&2
      fi
      ;;
  esac
done
exec cc "$@"
"#,
        silent = list(silent)
    );
    let buggy = format!(
        r#"#!/bin/sh
src=; compile=
for a in "$@"; do
  case "$a" in
    *.c) src=$a ;;
    -c) compile=1 ;;
  esac
done
spare=
for s in {spared}; do [ -n "$src" ] && [ "$(basename "$src")" = "$s" ] && spare=1; done
if [ -z "$compile" ] || [ -z "$src" ] || [ -n "$spare" ] || ! grep -q '^int {target}(.*{{' "$src"; then
  exec cc "$@"
fi
tmp=$(mktemp -d)
trap 'rm -rf "$tmp"' EXIT
out=${{src%.c}}.o
want_out=
for a in "$@"; do
  shift
  if [ -n "$want_out" ]; then out=$a; set -- "$@" "$tmp/x.s"; want_out=; continue; fi
  case "$a" in
    -c) set -- "$@" -S ;;
    -o) set -- "$@" -o; want_out=1 ;;
    *) set -- "$@" "$a" ;;
  esac
done
cc "$@" || exit 1
awk '/^{target}:/ {{ f = 1 }} f && !done && /addl/ {{ sub(/addl/, "subl"); done = 1 }} /\.cfi_endproc/ {{ f = 0 }} {{ print }}' "$tmp/x.s" > "$tmp/y.s"
exec cc -c "$tmp/y.s" -o "$out"
"#,
        spared = list(spared)
    );
    Shims {
        warn: write_exec(&dir.join("shims/warn-cc"), &warn),
        buggy: write_exec(&dir.join("shims/buggy-cc"), &buggy),
        fixed: write_exec(&dir.join("shims/fixed-cc"), "#!/bin/sh\nexec cc \"$@\"\n"),
    }
}

pub fn write_bug(dir: &Path, bug_id: &str, precise: bool, shims: &Shims, witness: Option<&Path>) -> PathBuf {
    let variant = |id: &str, role: &str, cc: &Path| {
        json!({"variant_id": id, "role": role, "c_compiler_path": cc, "cxx_compiler_path": cc})
    };
    let mut doc = json!({
        "bug_id": bug_id,
        "tool_family": "csmith",
        "severity": "normal",
        "precision": if precise { "precise" } else { "over_approximating" },
        "variants": [
            variant("warn", "warning_laden", &shims.warn),
            variant("buggy", "buggy", &shims.buggy),
            variant("fixed", "fixed", &shims.fixed),
        ],
    });
    if let Some(w) = witness {
        doc["witness_path"] = json!(w);
    }
    let path = dir.join(format!("bug-{bug_id}.json"));
    write_json(&path, &doc).unwrap();
    path
}

pub struct ToyPackage {
    pub name: &'static str,
    pub files: Vec<(&'static str, String)>,
    pub build_cmd: String,
    pub test_cmd: Option<String>,
    pub globs: Vec<&'static str>,
}

/// Writes sources under `dir/<name>/` and a manifest listing the packages.
pub fn write_corpus(dir: &Path, packages: &[ToyPackage]) -> PathBuf {
    let mut entries = Vec::new();
    for p in packages {
        let src = dir.join("src").join(p.name);
        for (file, body) in &p.files {
            let path = src.join(file);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(&path, body).unwrap();
            if file.ends_with(".sh") {
                fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
            }
        }
        entries.push(json!({
            "name": p.name,
            "version": "1.0",
            "source_path": src,
            "build_cmd": p.build_cmd,
            "test_cmd": p.test_cmd,
            "artifact_globs": p.globs,
        }));
    }
    let path = dir.join("manifest.json");
    write_json(&path, &json!({"min_loc": 0, "packages": entries})).unwrap();
    path
}

/// Build command compiling each listed unit at -O0 and linking `prog`.
pub fn build_units(units: &[&str]) -> String {
    let mut cmd: Vec<String> = units.iter().map(|u| format!("$CC -O0 -c {u}.c -o {u}.o")).collect();
    let objs: Vec<String> = units.iter().map(|u| format!("{u}.o")).collect();
    cmd.push(format!("$CC {} -o prog", objs.join(" ")));
    cmd.join(" && ")
}

/// A test script speaking the test protocol. Each check is
/// `(id, shell condition)`.
pub fn protocol_script(checks: &[(&str, &str)]) -> String {
    let mut s = String::from("#!/bin/sh\necho 'TESTPROTO 1'\n");
    for (id, cond) in checks {
        s.push_str(&format!("if {cond}; then echo '{id} pass'; else echo '{id} fail'; fi\n"));
    }
    s.push_str(&format!("echo 'END {}'\n", checks.len()));
    s
}

const SCALE_C: &str = "int scale(int x) {\n  int y = x;\n  y = y + 3;\n  return y;\n}\n";

/// The four-package corpus: `mathlib` defines the target function and its
/// tests check it; the others never define it.
pub fn toy_corpus() -> Vec<ToyPackage> {
    vec![
        ToyPackage {
            name: "mathlib",
            files: vec![
                ("scale.c", SCALE_C.into()),
                (
                    "main.c",
                    "#include <stdio.h>\n#include <stdlib.h>\nint scale(int x);\nint twice(int x) { return x * 2; }\nint main(int argc, char **argv) {\n  int v = argc > 2 ? atoi(argv[2]) : 0;\n  if (argc > 1 && argv[1][0] == 's') printf(\"%d\\n\", scale(v));\n  else printf(\"%d\\n\", twice(v));\n  return 0;\n}\n".into(),
                ),
                (
                    "test.sh",
                    protocol_script(&[
                        ("scale_small", "[ \"$(./prog s 4)\" = 7 ]"),
                        ("twice", "[ \"$(./prog t 5)\" = 10 ]"),
                        ("scale_zero_arg", "[ \"$(./prog t 0)\" = 0 ]"),
                    ]),
                ),
            ],
            build_cmd: build_units(&["scale", "main"]),
            test_cmd: Some("./test.sh".into()),
            globs: vec!["prog"],
        },
        ToyPackage {
            name: "strutil",
            files: vec![
                ("len.c", "int my_len(const char *s) { int n = 0; while (s[n]) n++; return n; }\n".into()),
                (
                    "main.c",
                    "#include <stdio.h>\nint my_len(const char *s);\nint main(int argc, char **argv) { printf(\"%d\\n\", argc > 1 ? my_len(argv[1]) : 0); return 0; }\n".into(),
                ),
                ("test.sh", protocol_script(&[("len", "[ \"$(./prog hello)\" = 5 ]"), ("empty", "[ \"$(./prog)\" = 0 ]")])),
            ],
            build_cmd: build_units(&["len", "main"]),
            test_cmd: Some("./test.sh".into()),
            globs: vec!["prog"],
        },
        ToyPackage {
            name: "counter",
            files: vec![
                (
                    "main.c",
                    "#include <stdio.h>\nint count(int n) { int c = 0; for (int i = 0; i < n; i++) c += i; return c; }\nint main(void) { printf(\"%d\\n\", count(5)); return 0; }\n".into(),
                ),
                ("test.sh", protocol_script(&[("sum", "[ \"$(./prog)\" = 10 ]")])),
            ],
            build_cmd: build_units(&["main"]),
            test_cmd: Some("./test.sh".into()),
            globs: vec!["prog"],
        },
        ToyPackage {
            name: "notests",
            files: vec![("lib.c", "int helper(int a, int b) { return a * b - a; }\n".into())],
            build_cmd: "$CC -O0 -c lib.c -o lib.o && ar rcD libhelper.a lib.o".into(),
            test_cmd: None,
            globs: vec!["libhelper.a"],
        },
    ]
}

/// Every file under `root` as (relative path, bytes), sorted.
pub fn snapshot(root: &Path, keep: impl Fn(&str) -> bool) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.unwrap();
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if keep(&rel) {
                out.push((rel, fs::read(entry.path()).unwrap()));
            }
        }
    }
    out
}
