//! Command-line interface: `corpus verify`, `run`, and `report`.
//!
//! Every flag can also be set through an `IMPACT_`-prefixed environment
//! variable named after it (`--rerun-count` ↔ `IMPACT_RERUN_COUNT`).

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::builder::BuildSettings;
use crate::pipeline::{self, PipelineError, RunConfig, Stages};
use crate::report::{Format, Grouping, DEFAULT_FUNCTION_TOTAL};
use crate::toolchain::{CompilerVariant, VariantRole};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "miscomp-impact", version, about = "Measure how miscompilation bugs affect a package corpus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus maintenance.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Run the selected stages of one bug over the corpus.
    Run(RunArgs),
    /// Render impact tables from a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Build every package twice and stamp whether the builds are bitwise reproducible.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, env = "IMPACT_MANIFEST")]
    pub manifest: PathBuf,
    /// Where to write the stamped manifest (defaults to overwriting the input).
    #[arg(long, env = "IMPACT_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "IMPACT_CC", default_value = "cc")]
    pub cc: PathBuf,
    #[arg(long, env = "IMPACT_CXX", default_value = "c++")]
    pub cxx: PathBuf,
    #[arg(long, env = "IMPACT_PARALLELISM", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub parallelism: u64,
    /// Per-build timeout in seconds; 0 disables it.
    #[arg(long, env = "IMPACT_BUILD_TIMEOUT", default_value_t = 1800)]
    pub build_timeout: u64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, env = "IMPACT_RUN_DIR")]
    pub run_dir: PathBuf,
    #[arg(long = "bug", env = "IMPACT_BUG")]
    pub bug_file: PathBuf,
    #[arg(long = "manifest", env = "IMPACT_MANIFEST")]
    pub manifest_file: PathBuf,
    /// Comma-separated stage numbers.
    #[arg(long, env = "IMPACT_STAGES", default_value = "1,2,3")]
    pub stages: Stages,
    #[arg(long, env = "IMPACT_PARALLELISM", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub parallelism: u64,
    #[arg(long, env = "IMPACT_RERUN_COUNT", default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub rerun_count: u32,
    #[arg(long, env = "IMPACT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Shell template; `{input}` is replaced by the binary path.
    #[arg(long, env = "IMPACT_DISASSEMBLER_CMD", default_value = crate::asmdiff::DEFAULT_DISASSEMBLER_CMD)]
    pub disassembler_cmd: String,
    /// Functions sampled into each inspection worksheet.
    #[arg(long, env = "IMPACT_SAMPLE_SIZE", default_value_t = 10)]
    pub sample_size: usize,
    /// Per-build timeout in seconds; 0 disables it.
    #[arg(long, env = "IMPACT_BUILD_TIMEOUT", default_value_t = 1800)]
    pub build_timeout: u64,
    /// Per-suite timeout in seconds; 0 disables it.
    #[arg(long, env = "IMPACT_TEST_TIMEOUT", default_value_t = 1800)]
    pub test_timeout: u64,
    /// Corpus-wide function count, or `unknown`.
    #[arg(long, env = "IMPACT_FUNCTION_TOTAL", default_value = "202000", value_parser = parse_total)]
    pub function_total: Total,
    /// Validate configuration, compilers and witness, then stop.
    #[arg(long, env = "IMPACT_DRY_RUN")]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, env = "IMPACT_RUN_DIR")]
    pub run_dir: PathBuf,
    #[arg(long, env = "IMPACT_GROUP_BY", value_enum, default_value_t = GroupBy::Bug)]
    pub group_by: GroupBy,
    #[arg(long, env = "IMPACT_FORMAT", value_enum, default_value_t = Format::Markdown)]
    pub format: Format,
    /// Corpus-wide function count, or `unknown`.
    #[arg(long, env = "IMPACT_FUNCTION_TOTAL", default_value = "202000", value_parser = parse_total)]
    pub function_total: Total,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum GroupBy {
    Bug,
    Tool,
    Severity,
}

impl From<GroupBy> for Grouping {
    fn from(g: GroupBy) -> Self {
        match g {
            GroupBy::Bug => Grouping::Bug,
            GroupBy::Tool => Grouping::Tool,
            GroupBy::Severity => Grouping::Severity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Total(pub Option<u64>);

fn parse_total(s: &str) -> Result<Total, String> {
    if s == "unknown" {
        return Ok(Total(None));
    }
    match s.parse::<u64>() {
        Ok(0) => Err("function total must be positive".into()),
        Ok(n) => Ok(Total(Some(n))),
        Err(e) => Err(format!("expected a positive integer or `unknown`: {e}")),
    }
}

impl Default for Total {
    fn default() -> Self {
        Total(Some(DEFAULT_FUNCTION_TOTAL))
    }
}

fn timeout(secs: u64) -> Option<Duration> {
    (secs > 0).then(|| Duration::from_secs(secs))
}

impl RunArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            stages: self.stages,
            parallelism: self.parallelism as usize,
            rerun_count: self.rerun_count,
            build_timeout: timeout(self.build_timeout),
            test_timeout: timeout(self.test_timeout),
            disassembler_cmd: self.disassembler_cmd.clone(),
            seed: self.seed,
            sample_size: self.sample_size,
            function_total: self.function_total.0,
            dry_run: self.dry_run,
            ..RunConfig::new(&self.run_dir, &self.bug_file, &self.manifest_file)
        }
    }
}

/// What a command wants written to standard output, plus its exit code.
#[derive(Debug)]
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

pub fn exit_code(err: &PipelineError) -> i32 {
    if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_INTERNAL
    }
}

pub fn execute(cli: Cli) -> Result<Outcome, PipelineError> {
    match cli.command {
        Command::Corpus { command: CorpusCommand::Verify(args) } => {
            let variant = CompilerVariant {
                variant_id: "verify".into(),
                role: VariantRole::Fixed,
                c_compiler_path: args.cc,
                cxx_compiler_path: args.cxx,
                extra_env: Default::default(),
                revision_scrubbed: false,
            };
            let out = args.out.unwrap_or_else(|| args.manifest.clone());
            let scratch = tempfile::tempdir().map_err(|source| PipelineError::Io {
                context: "creating scratch directory".into(),
                source,
            })?;
            let settings = BuildSettings {
                timeout: timeout(args.build_timeout),
                ..BuildSettings::new(scratch.path())
            };
            let results = pipeline::cmd_corpus_verify(&args.manifest, &out, &variant, &settings, args.parallelism as usize)?;
            let errored = pipeline::errored(&results);
            let verified = results.iter().filter(|r| r.verdict == crate::builder::ReproVerdict::Verified).count();
            let stdout = format!(
                "verified {verified} of {} package(s); {} build error(s); manifest written to {}\n",
                results.len(),
                errored.len(),
                out.display()
            );
            Ok(Outcome { stdout, code: if errored.is_empty() { EXIT_OK } else { EXIT_CONFIG } })
        }
        Command::Run(args) => {
            let summary = pipeline::cmd_run(&args.config())?;
            let mut stdout = serde_json::to_string_pretty(&summary).expect("summary serializes");
            stdout.push('\n');
            Ok(Outcome { stdout, code: EXIT_OK })
        }
        Command::Report(args) => {
            let stdout = pipeline::cmd_report(&args.run_dir, args.group_by.into(), args.format, args.function_total.0)?;
            Ok(Outcome { stdout, code: EXIT_OK })
        }
    }
}
