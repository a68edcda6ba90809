//! The `tracesynth` command line.
//!
//! Production-side commands (`extract-chars`, `extract-logic`,
//! `extract-dist`) read raw tables and traces and write statistics files.
//! Evaluation-side commands (`gen-db`, `gen-workload`, `report`) read only
//! those statistics plus schema and template definitions. `simulate` measures
//! any trace. Every run leaves a manifest, including failed ones.

mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use tracesynth::dist::DistMode;
use tracesynth::workload::ExecutionModel;

pub use manifest::{parse_manifest, RunManifest, MANIFEST_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

/// A failure caused by the files or flags the user supplied.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct InputError(pub String);

#[derive(Debug, Parser)]
#[command(
    name = "tracesynth",
    version,
    about = "Characterize OLTP traces and replay synthetic workloads"
)]
pub struct Cli {
    /// Where to write the run manifest (defaults next to the main output).
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract table statistics from a directory of CSV tables.
    ExtractChars(ExtractCharsArgs),
    /// Mine transaction logic from a heavy trace.
    ExtractLogic(ExtractLogicArgs),
    /// Build windowed access distributions from a trace.
    ExtractDist(ExtractDistArgs),
    /// Generate a synthetic database from table statistics.
    GenDb(GenDbArgs),
    /// Drive a synthetic workload.
    GenWorkload(GenWorkloadArgs),
    /// Replay a trace through the conflict simulator.
    Simulate(SimulateArgs),
    /// Compare real and synthetic simulator metrics.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ExtractChars(_) => "extract-chars",
            Command::ExtractLogic(_) => "extract-logic",
            Command::ExtractDist(_) => "extract-dist",
            Command::GenDb(_) => "gen-db",
            Command::GenWorkload(_) => "gen-workload",
            Command::Simulate(_) => "simulate",
            Command::Report(_) => "report",
        }
    }

    /// Commands that must not see raw application data.
    pub fn is_evaluation_side(&self) -> bool {
        matches!(
            self,
            Command::GenDb(_) | Command::GenWorkload(_) | Command::Report(_)
        )
    }

    fn main_output(&self) -> Option<PathBuf> {
        match self {
            Command::ExtractChars(a) => Some(a.out.clone()),
            Command::ExtractLogic(a) => Some(a.out.clone()),
            Command::ExtractDist(a) => Some(a.out.clone()),
            Command::GenDb(a) => Some(a.out_dir.join("gen-db")),
            Command::GenWorkload(a) => a.emit_trace.clone().or_else(|| a.metrics.clone()),
            Command::Simulate(a) => Some(a.out.clone()),
            Command::Report(a) => a.out.clone(),
        }
    }

    fn manifest_path(&self) -> PathBuf {
        match self.main_output() {
            Some(p) => {
                let mut s = p.into_os_string();
                s.push(".manifest");
                PathBuf::from(s)
            }
            None => PathBuf::from(format!("{}.manifest", self.name())),
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractCharsArgs {
    #[arg(long)]
    pub schema: PathBuf,
    /// Directory holding one `<table>.csv` per table.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractLogicArgs {
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Instances per template used for statistics.
    #[arg(long = "K", visible_alias = "k", default_value_t = 10_000)]
    pub k: usize,
    /// Instance pairs used to fit linear dependencies.
    #[arg(long = "N", visible_alias = "n", default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub max_deps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub min_pr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExtractDistArgs {
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Table statistics; their column ranges fix histogram ranges when
    /// `--fixed-range` is set.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long = "H", visible_alias = "h", default_value_t = 50)]
    pub h: usize,
    #[arg(long = "I", visible_alias = "i", default_value_t = 50)]
    pub i: usize,
    #[arg(long, default_value_t = 1000)]
    pub window_ms: u64,
    /// Use one value range for all windows instead of each window's own.
    #[arg(long)]
    pub fixed_range: bool,
}

#[derive(Debug, Args)]
pub struct GenDbArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TargetKind {
    /// Accept every operation and return no rows.
    Null,
    /// Answer reads from the synthetic database.
    Db,
    /// Answer reads from the synthetic database, then simulate the run.
    Sim,
}

#[derive(Debug, Args)]
pub struct GenWorkloadArgs {
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub logic: Option<PathBuf>,
    #[arg(long)]
    pub dist: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, default_value = "c", value_parser = parse_mode)]
    pub mode: DistMode,
    #[arg(long, default_value = "loop", value_parser = parse_model)]
    pub model: ExecutionModel,
    #[arg(long, default_value_t = 1)]
    pub workers: u32,
    #[arg(long, default_value_t = 0)]
    pub first_worker: u32,
    /// Run length in seconds of virtual time.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Service time charged per operation, in milliseconds.
    #[arg(long, default_value_t = 0.5)]
    pub op_cost_ms: f64,
    #[arg(long, value_enum, default_value_t = TargetKind::Null)]
    pub target: TargetKind,
    /// Heavy trace of every generated transaction.
    #[arg(long)]
    pub emit_trace: Option<PathBuf>,
    /// Simulator metrics when `--target sim`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Candidate pool spool for C mode: read if present, written otherwise.
    #[arg(long)]
    pub spool: Option<PathBuf>,
    /// Fixed mix `name:weight,...` used when no distribution file is given.
    #[arg(long)]
    pub mix: Option<String>,
    /// Observed rate of the fixed mix, in transactions per second.
    #[arg(long, default_value_t = 100.0)]
    pub tps: f64,
    #[arg(long, default_value_t = 1000)]
    pub window_ms: u64,
    /// Upper bound on rows returned by non-key reads.
    #[arg(long, default_value_t = 10)]
    pub max_rows: u64,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SimFlags {
    #[arg(long, default_value_t = 5)]
    pub partitions: usize,
    /// Buffer pool capacity in records.
    #[arg(long, default_value_t = 10_000)]
    pub buffer: usize,
    #[arg(long, default_value_t = 500)]
    pub op_cost_us: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Workers for records without a worker id.
    #[arg(long, default_value_t = 1)]
    pub workers: u32,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synth: PathBuf,
    #[arg(long, default_value_t = 0.10)]
    pub threshold: f64,
    /// Machine-readable deviations.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<DistMode, String> {
    s.parse()
}

fn parse_model(s: &str) -> Result<ExecutionModel, String> {
    s.parse()
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
            let _ = e.print();
            return code;
        }
    };
    let manifest_path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| cli.command.manifest_path());
    let mut m = RunManifest::new(cli.command.name());
    let result = commands::dispatch(&cli.command, &mut m);
    let error = result.as_ref().err().map(|e| format!("{e:#}"));
    if let Err(e) = write_manifest(&manifest_path, &m.render(error.as_deref())) {
        eprintln!(
            "tracesynth: cannot write manifest {}: {e}",
            manifest_path.display()
        );
    }
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("tracesynth {}: {e:#}", cli.command.name());
            if e.downcast_ref::<InputError>().is_some() {
                EXIT_INPUT
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

fn write_manifest(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)
}
