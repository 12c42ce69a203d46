//! Command-line front end: `run`, `compare` and `validate`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::engine::{run, RunOptions, RunOutput, SimError};
use crate::mac::ModeKind;
use crate::metrics::{
    compare, render_table, write_comparison_outputs, write_run_outputs, ComparisonReport, MetricsError, RunSummary,
};
use crate::scenario::{load_scenario, ConfigError, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const LOG_ENV: &str = "LLMSLICE_LOG";

#[derive(Debug, Parser)]
#[command(name = "llmslice", version, about = "LLM downlink slicing simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario in one mode and write summary.json and deliveries.csv.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        mode: Option<ModeKind>,
        /// Also write the event log to trace.log.
        #[arg(long)]
        trace: bool,
        /// Write outputs even if no LLM stream started.
        #[arg(long)]
        allow_empty: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both modes over a seed set and write comparison.json and table.txt.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        baseline: ModeKind,
        #[arg(long)]
        treatment: ModeKind,
        /// `a..b` (inclusive) or a comma-separated list.
        #[arg(long)]
        seeds: SeedSet,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a scenario.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSet(pub Vec<u64>);

impl std::str::FromStr for SeedSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = |p: &str| format!("invalid seed {p:?}");
        let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad(a))?;
            let b: u64 = b.trim().parse().map_err(|_| bad(b))?;
            if a > b {
                return Err(format!("empty seed range {a}..{b}"));
            }
            (a..=b).collect()
        } else {
            s.split(',')
                .map(|p| p.trim().parse().map_err(|_| bad(p)))
                .collect::<Result<_, _>>()?
        };
        if seeds.is_empty() {
            return Err("no seeds".into());
        }
        Ok(SeedSet(seeds))
    }
}

/// A failure tagged with the stage that produced it.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(SimError),
    Metrics(MetricsError),
    Io(PathBuf, std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Run(e) => write!(f, "simulation error: {e}"),
            CliError::Metrics(e) => write!(f, "metrics error: {e}"),
            CliError::Io(p, e) => write!(f, "io error writing {}: {e}", p.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Run(e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Metrics(e)
    }
}

fn scenario_in_mode(path: &Path, mode: Option<ModeKind>) -> Result<Scenario, CliError> {
    let scenario = load_scenario(path)?;
    Ok(match mode {
        Some(m) => scenario.with_mode(m)?,
        None => scenario,
    })
}

pub fn cmd_validate(scenario: &Path) -> Result<Scenario, CliError> {
    let s = load_scenario(scenario)?;
    s.permission_db()?;
    Ok(s)
}

pub fn cmd_run(
    scenario: &Path,
    seed: u64,
    mode: Option<ModeKind>,
    out: &Path,
    trace: bool,
    allow_empty: bool,
) -> Result<RunSummary, CliError> {
    let s = scenario_in_mode(scenario, mode)?;
    let opts = RunOptions {
        record_trace: trace,
        ..Default::default()
    };
    log::info!("running {} seed {seed} mode {}", s.name, s.mode.kind);
    let output = run(&s, seed, &opts)?;
    let summary = output.summary(allow_empty)?;
    write_run_outputs(&summary, &output.deliveries, out)?;
    if trace {
        let path = out.join("trace.log");
        std::fs::write(&path, output.trace.to_log()).map_err(|e| CliError::Io(path, e))?;
    }
    log::info!("trace digest {}", output.trace.digest);
    Ok(summary)
}

/// Runs every `(mode, seed)` pair in parallel and merges by sorted
/// `(mode, seed)`.
pub fn run_seeds(s: &Scenario, modes: &[ModeKind], seeds: &[u64]) -> Result<Vec<(ModeKind, u64, RunOutput)>, CliError> {
    let scenarios: Vec<(ModeKind, Scenario)> = modes
        .iter()
        .map(|&m| s.with_mode(m).map(|sc| (m, sc)))
        .collect::<Result<_, _>>()?;
    let mut jobs: Vec<(ModeKind, u64, &Scenario)> = Vec::new();
    for (m, sc) in &scenarios {
        for &seed in seeds {
            jobs.push((*m, seed, sc));
        }
    }
    let mut results: Vec<(ModeKind, u64, RunOutput)> = jobs
        .into_par_iter()
        .map(|(m, seed, sc)| {
            log::debug!("run mode {m} seed {seed}");
            run(sc, seed, &RunOptions::default()).map(|o| (m, seed, o))
        })
        .collect::<Result<_, _>>()?;
    results.sort_by_key(|(m, seed, _)| (*m, *seed));
    Ok(results)
}

/// Per-mode seed-averaged summaries and their comparison.
pub fn compare_scenario(
    s: &Scenario,
    baseline: ModeKind,
    treatment: ModeKind,
    seeds: &[u64],
) -> Result<ComparisonReport, CliError> {
    let mut modes = vec![baseline, treatment];
    modes.dedup();
    let results = run_seeds(s, &modes, seeds)?;
    let averaged = |mode: ModeKind| -> Result<RunSummary, CliError> {
        let summaries: Vec<RunSummary> = results
            .iter()
            .filter(|(m, _, _)| *m == mode)
            .map(|(_, _, o)| o.summary(false))
            .collect::<Result<_, _>>()?;
        Ok(RunSummary::mean_of(&summaries)?)
    };
    let base = averaged(baseline)?;
    let treat = averaged(treatment)?;
    Ok(compare(&base, &treat)?)
}

pub fn cmd_compare(
    scenario: &Path,
    baseline: ModeKind,
    treatment: ModeKind,
    seeds: &[u64],
    out: &Path,
) -> Result<ComparisonReport, CliError> {
    let s = load_scenario(scenario)?;
    let report = compare_scenario(&s, baseline, treatment, seeds)?;
    write_comparison_outputs(&report, out)?;
    Ok(report)
}

pub fn init_logging() {
    let level = match std::env::var(LOG_ENV).as_deref() {
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Off,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` and executes the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            mode,
            trace,
            allow_empty,
            out,
        } => cmd_run(&scenario, seed, mode, &out, trace, allow_empty).map(|s| {
            println!(
                "{} mode={} latency_ms={} utilization={:.4} stability={:.4}",
                out.display(),
                s.mode,
                s.mean_completion_latency_ms
                    .map(|v| format!("{v:.1}"))
                    .unwrap_or_else(|| "n/a".into()),
                s.utilization,
                s.stability
            );
        }),
        Command::Compare {
            scenario,
            baseline,
            treatment,
            seeds,
            out,
        } => cmd_compare(&scenario, baseline, treatment, &seeds.0, &out).map(|r| print!("{}", render_table(&r))),
        Command::Validate { scenario } => cmd_validate(&scenario).map(|s| {
            println!("{}: ok", s.name);
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("llmslice: {e}");
            e.exit_code()
        }
    }
}
