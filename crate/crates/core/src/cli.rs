//! Command-line front end: single runs, policy comparisons, sweeps, and trace
//! materialization.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::arbiter::{PickRow, PICK_CSV_HEADER};
use crate::config::{config_value, parse_config, set_field};
use crate::engine::{run_with, SimError, SimOptions};
use crate::model::{ConfigError, FetchPolicy, SimConfig};
use crate::monitor::write_monitor_csv;
use crate::stats::SimReport;
use crate::workload::{read_trace, SyntheticSpec, WorkloadError, WorkloadSource, WorkloadTemplate};

pub const DEFAULT_SWEEP_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("workload error: {0}")]
    Workload(#[from] WorkloadError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write `{path}`: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("simulation failed: {0}")]
    Internal(String),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
            SimError::ThreadCountMismatch { .. }
            | SimError::MissingOracleFlag { .. }
            | SimError::ForeignRecord { .. } => {
                CliError::Workload(WorkloadError::InvalidSpec(e.to_string()))
            }
            SimError::Contract(_) | SimError::Feedback(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Workload(_) => 3,
            CliError::Internal(_) => 4,
            CliError::Output { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EmitFlags {
    pub report: bool,
    pub monitor_log: bool,
    pub pick_log: bool,
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub config: SimConfig,
    pub workload: WorkloadTemplate,
    pub out_dir: PathBuf,
    pub emit: EmitFlags,
}

impl RunSpec {
    fn execute(&self, cfg: SimConfig) -> Result<SimReport, CliError> {
        let workload = self.workload.instantiate(cfg.seed)?;
        let opts = SimOptions {
            record_picks: self.emit.pick_log,
        };
        Ok(run_with(cfg, workload, opts)?)
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let wrap = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    fs::write(path, contents).map_err(wrap)
}

pub fn summary_line(report: &SimReport) -> String {
    format!(
        "policy={} ipc={} wrong_path_fraction={} committed={} demotions={}",
        report.config.policy,
        report.ipc(),
        report.wrong_path_fraction(),
        report.total.committed,
        report.demotions()
    )
}

/// Writes the report (always) and any requested logs into `dir`.
pub fn emit_outputs(report: &SimReport, dir: &Path, emit: EmitFlags) -> Result<(), CliError> {
    write_file(&dir.join("report.txt"), report.to_text().as_bytes())?;
    write_file(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    if emit.monitor_log {
        let mut buf = Vec::new();
        write_monitor_csv(&mut buf, &report.monitor_events).expect("writing to memory");
        write_file(&dir.join("monitor_log.csv"), &buf)?;
    }
    if emit.pick_log {
        let mut buf = Vec::new();
        writeln!(buf, "{PICK_CSV_HEADER}").unwrap();
        for entry in &report.pick_log {
            writeln!(
                buf,
                "{}",
                PickRow {
                    policy: report.config.policy,
                    entry
                }
            )
            .unwrap();
        }
        write_file(&dir.join("pick_log.csv"), &buf)?;
    }
    Ok(())
}

pub fn cmd_run(spec: &RunSpec) -> Result<SimReport, CliError> {
    let report = spec.execute(spec.config)?;
    emit_outputs(&report, &spec.out_dir, spec.emit)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub policy: FetchPolicy,
    pub ipc: f64,
    pub wrong_path_fraction: f64,
    pub energy_proxy: u64,
    pub demotions: usize,
}

pub const COMPARE_CSV_HEADER: &str = "policy,ipc,wrong_path_fraction,energy_proxy,demotions";

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("{COMPARE_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.policy, r.ipc, r.wrong_path_fraction, r.energy_proxy, r.demotions
        ));
    }
    out
}

/// Runs the same workload and seed under each policy; writes `compare.csv`.
pub fn cmd_compare(spec: &RunSpec, policies: &[FetchPolicy]) -> Result<Vec<CompareRow>, CliError> {
    if policies.len() < 2 {
        return Err(CliError::Usage("compare requires ≥ 2 policies".into()));
    }
    let reports: Vec<Result<SimReport, CliError>> = policies
        .par_iter()
        .map(|&policy| {
            spec.execute(SimConfig {
                policy,
                ..spec.config
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(policies.len());
    for r in reports {
        let r = r?;
        rows.push(CompareRow {
            policy: r.config.policy,
            ipc: r.ipc(),
            wrong_path_fraction: r.wrong_path_fraction(),
            energy_proxy: r.energy_proxy(),
            demotions: r.demotions(),
        });
    }
    write_file(&spec.out_dir.join("compare.csv"), compare_csv(&rows).as_bytes())?;
    Ok(rows)
}

pub const SWEEP_KEYS: [&str; 6] = [
    "threshold_H",
    "window_T",
    "policy",
    "pipeline_depth",
    "predictor",
    "seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl SweepAxis {
    /// Parses `key=v1,v2,...`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let (key, vals) = text
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("axis `{text}` is not key=v1,v2,...")))?;
        let key = key.trim().to_string();
        if !SWEEP_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!(
                "`{key}` is not a sweepable key (one of {})",
                SWEEP_KEYS.join(", ")
            )));
        }
        let values: Vec<String> = vals
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(CliError::Usage(format!("axis `{key}` has no values")));
        }
        Ok(SweepAxis { key, values })
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: RunSpec,
    pub axes: Vec<SweepAxis>,
    pub cap: usize,
}

impl SweepSpec {
    /// Cross product of the axes, first axis varying slowest.
    pub fn points(&self) -> Result<Vec<SimConfig>, CliError> {
        if self.axes.is_empty() {
            return Err(CliError::Usage("sweep requires at least one axis".into()));
        }
        if let Some(a) = self.axes.iter().find(|a| a.values.is_empty()) {
            return Err(CliError::Usage(format!("axis `{}` has no values", a.key)));
        }
        let size = self
            .axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.values.len()))
            .unwrap_or(usize::MAX);
        if size > self.cap {
            return Err(CliError::Usage(format!(
                "sweep has {size} points, above the cap of {}",
                self.cap
            )));
        }
        let mut points = vec![self.base.config];
        for axis in &self.axes {
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for p in &points {
                for v in &axis.values {
                    let mut cfg = *p;
                    set_field(&mut cfg, &axis.key, v)?;
                    next.push(cfg.validate()?);
                }
            }
            points = next;
        }
        Ok(points)
    }
}

/// One row per point; columns are the axis values then the report scalars.
pub fn cmd_sweep(spec: &SweepSpec) -> Result<String, CliError> {
    let points = spec.points()?;
    let reports: Vec<Result<SimReport, CliError>> =
        points.par_iter().map(|&cfg| spec.base.execute(cfg)).collect();
    let mut out = String::new();
    let scalar_names: Vec<&str> = SimReport::new(spec.base.config, 0, vec![], vec![], vec![])
        .scalars()
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let header: Vec<&str> = spec
        .axes
        .iter()
        .map(|a| a.key.as_str())
        .chain(scalar_names.iter().copied())
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (cfg, report) in points.iter().zip(reports) {
        let report = report?;
        let mut cols: Vec<String> = spec
            .axes
            .iter()
            .map(|a| config_value(cfg, &a.key).expect("axis keys are config keys"))
            .collect();
        cols.extend(report.scalars().into_iter().map(|(_, v)| v));
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    write_file(&spec.base.out_dir.join("sweep.csv"), out.as_bytes())?;
    Ok(out)
}

/// Materializes a synthetic workload as a trace file.
pub fn cmd_gen_trace(
    spec: &SyntheticSpec,
    seed: u64,
    count: Option<u64>,
    out: &Path,
) -> Result<u64, CliError> {
    if spec.repeat && count.is_none() {
        return Err(CliError::Usage(
            "a repeating synthetic spec needs --count".into(),
        ));
    }
    let source: WorkloadSource = crate::workload::generate_synthetic(spec, seed)?;
    let data = source.collect_records(count);
    let n = data.threads.iter().map(|t| t.len() as u64).sum();
    let mut text = format!("# synthetic workload, seed {seed}\n");
    text.push_str(&data.to_trace_text());
    write_file(out, text.as_bytes())?;
    Ok(n)
}

#[derive(Debug, Parser)]
#[command(name = "smtsim", version, about = "SMT fetch-arbitration simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation.
    Run(RunArgs),
    /// Run the same workload under several policies.
    Compare(CompareArgs),
    /// Cross-product parameter sweep.
    Sweep(SweepArgs),
    /// Write a synthetic workload out as a trace file.
    GenTrace(GenTraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmitKind {
    Report,
    MonitorLog,
    PickLog,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// key=value configuration file
    #[arg(long)]
    pub config: PathBuf,
    /// Trace file workload
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub trace: Option<PathBuf>,
    /// Synthetic workload spec (TOML)
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override max_cycles
    #[arg(long)]
    pub cycles: Option<u64>,
    #[arg(long, value_enum)]
    pub emit: Vec<EmitKind>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Policies to compare; repeat the flag or separate with commas.
    #[arg(long = "policy", value_delimiter = ',')]
    pub policies: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `key=v1,v2,...`; repeatable. Keys: threshold_H, window_T, policy,
    /// pipeline_depth, predictor, seed.
    #[arg(long = "axis")]
    pub axes: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_SWEEP_CAP)]
    pub cap: usize,
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Records per thread (required for repeating specs)
    #[arg(long)]
    pub count: Option<u64>,
    /// Output trace file
    #[arg(long)]
    pub out: PathBuf,
}

fn build_spec(common: &CommonArgs, policy: Option<&str>) -> Result<RunSpec, CliError> {
    let text = fs::read_to_string(&common.config).map_err(|e| {
        ConfigError::Invalid(format!("cannot read `{}`: {e}", common.config.display()))
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(c) = common.cycles {
        cfg.max_cycles = c;
    }
    if let Some(p) = policy {
        cfg.policy = p.parse()?;
    }
    let cfg = cfg.validate()?;
    let workload = match (&common.trace, &common.synthetic) {
        (Some(t), None) => WorkloadTemplate::Trace(Arc::new(read_trace(t)?)),
        (None, Some(s)) => WorkloadTemplate::Synthetic(SyntheticSpec::load(s)?),
        _ => {
            return Err(CliError::Usage(
                "exactly one of --trace or --synthetic is required".into(),
            ))
        }
    };
    let mut emit = EmitFlags {
        report: true,
        ..EmitFlags::default()
    };
    for e in &common.emit {
        match e {
            EmitKind::Report => emit.report = true,
            EmitKind::MonitorLog => emit.monitor_log = true,
            EmitKind::PickLog => emit.pick_log = true,
        }
    }
    Ok(RunSpec {
        config: cfg,
        workload,
        out_dir: common.out.clone(),
        emit,
    })
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let spec = build_spec(&args.common, args.policy.as_deref())?;
            let report = cmd_run(&spec)?;
            println!("{}", summary_line(&report));
        }
        Command::Compare(args) => {
            let spec = build_spec(&args.common, None)?;
            let policies = args
                .policies
                .iter()
                .map(|p| p.parse::<FetchPolicy>())
                .collect::<Result<Vec<_>, _>>()?;
            let rows = cmd_compare(&spec, &policies)?;
            print!("{}", compare_csv(&rows));
        }
        Command::Sweep(args) => {
            let base = build_spec(&args.common, args.policy.as_deref())?;
            let axes = args
                .axes
                .iter()
                .map(|a| SweepAxis::parse(a))
                .collect::<Result<Vec<_>, _>>()?;
            let spec = SweepSpec {
                base,
                axes,
                cap: args.cap,
            };
            let csv = cmd_sweep(&spec)?;
            println!(
                "{} rows written to {}",
                csv.lines().count() - 1,
                spec.base.out_dir.join("sweep.csv").display()
            );
        }
        Command::GenTrace(args) => {
            let spec = SyntheticSpec::load(&args.synthetic)?;
            let n = cmd_gen_trace(&spec, args.seed, args.count, &args.out)?;
            println!("{n} records written to {}", args.out.display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
