//! Per-thread instruction streams: text traces and seeded synthetic phases.

use std::fmt;
use std::fs;
use std::iter::Peekable;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InstrKind, InstrRecord, ThreadId, MAX_THREADS};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// Resolve-latency distribution of a phase, in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LatencyDist {
    Fixed(u64),
    /// Inclusive on both ends.
    Uniform(u64, u64),
}

impl LatencyDist {
    fn sample(self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            LatencyDist::Fixed(c) => c,
            LatencyDist::Uniform(lo, hi) => rng.gen_range(lo..=hi),
        }
    }
}

impl fmt::Display for LatencyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyDist::Fixed(c) => write!(f, "fixed:{c}"),
            LatencyDist::Uniform(lo, hi) => write!(f, "uniform:{lo}:{hi}"),
        }
    }
}

impl FromStr for LatencyDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |p: &str| p.parse::<u64>().map_err(|e| format!("latency `{s}`: {e}"));
        match parts.as_slice() {
            ["fixed", c] => Ok(LatencyDist::Fixed(num(c)?)),
            ["uniform", lo, hi] => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(format!("latency `{s}`: lo > hi"));
                }
                Ok(LatencyDist::Uniform(lo, hi))
            }
            _ => Err(format!(
                "latency `{s}`: expected fixed:<c> or uniform:<lo>:<hi>"
            )),
        }
    }
}

impl TryFrom<String> for LatencyDist {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LatencyDist> for String {
    fn from(d: LatencyDist) -> String {
        d.to_string()
    }
}

/// A stretch of instructions with fixed statistical behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub length: u64,
    pub branch_fraction: f64,
    /// Oracle miss rate; otherwise each branch is taken with probability
    /// `1 - mispredict_prob`.
    pub mispredict_prob: f64,
    pub latency: LatencyDist,
}

impl PhaseSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::InvalidSpec(m));
        if self.length < 1 {
            return bad("phase length must be ≥ 1".into());
        }
        for (name, p) in [
            ("branch_fraction", self.branch_fraction),
            ("mispredict_prob", self.mispredict_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} is outside [0, 1]"));
            }
        }
        if let LatencyDist::Uniform(lo, hi) = self.latency {
            if lo > hi {
                return bad(format!("uniform latency lo {lo} > hi {hi}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadSpec {
    pub phases: Vec<PhaseSpec>,
}

impl ThreadSpec {
    /// Index of the phase that produces the record with sequence number `seq`.
    pub fn phase_index_at(&self, seq: u64, repeat: bool) -> Option<usize> {
        let total: u64 = self.phases.iter().map(|p| p.length).sum();
        let mut offset = if repeat && total > 0 {
            seq % total
        } else {
            seq
        };
        for (i, p) in self.phases.iter().enumerate() {
            if offset < p.length {
                return Some(i);
            }
            offset -= p.length;
        }
        None
    }
}

/// Synthetic workload description, one entry per hardware thread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub repeat: bool,
    pub threads: Vec<ThreadSpec>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.threads.is_empty() {
            return Err(WorkloadError::InvalidSpec("no threads".into()));
        }
        if self.threads.len() > MAX_THREADS {
            return Err(WorkloadError::InvalidSpec(format!(
                "{} threads exceeds the limit of {MAX_THREADS}",
                self.threads.len()
            )));
        }
        for (t, th) in self.threads.iter().enumerate() {
            if th.phases.is_empty() {
                return Err(WorkloadError::InvalidSpec(format!(
                    "thread {t} has no phases"
                )));
            }
            for p in &th.phases {
                p.validate()?;
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, WorkloadError> {
        let spec: SyntheticSpec =
            toml::from_str(text).map_err(|e| WorkloadError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let text = fs::read_to_string(path).map_err(|source| WorkloadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("synthetic spec always serializes")
    }
}

/// Substream seed for one thread; depends only on `(seed, thread)`.
pub fn thread_seed(seed: u64, thread: ThreadId) -> u64 {
    splitmix64(seed ^ splitmix64(thread.index() as u64))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates one thread's records phase by phase.
#[derive(Debug, Clone)]
pub struct PhaseGenerator {
    thread: ThreadId,
    phases: Vec<PhaseSpec>,
    repeat: bool,
    phase: usize,
    emitted_in_phase: u64,
    seq: u64,
    rng: ChaCha8Rng,
}

impl PhaseGenerator {
    pub fn new(thread: ThreadId, spec: &ThreadSpec, repeat: bool, seed: u64) -> Self {
        PhaseGenerator {
            thread,
            phases: spec.phases.clone(),
            repeat,
            phase: 0,
            emitted_in_phase: 0,
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(thread_seed(seed, thread)),
        }
    }
}

impl Iterator for PhaseGenerator {
    type Item = InstrRecord;

    fn next(&mut self) -> Option<InstrRecord> {
        while self.phase < self.phases.len()
            && self.emitted_in_phase >= self.phases[self.phase].length
        {
            self.phase += 1;
            self.emitted_in_phase = 0;
            if self.phase == self.phases.len() && self.repeat {
                self.phase = 0;
            }
        }
        let phase = *self.phases.get(self.phase)?;
        let kind = if self.rng.gen_bool(phase.branch_fraction) {
            let taken = self.rng.gen_bool(1.0 - phase.mispredict_prob);
            InstrKind::Branch {
                taken,
                resolve_latency: phase.latency.sample(&mut self.rng),
                // A miss is a branch that goes against its phase bias.
                oracle_mispredict: Some(!taken),
            }
        } else {
            InstrKind::NonBranch
        };
        let rec = InstrRecord {
            thread: self.thread,
            seq: self.seq,
            kind,
        };
        self.seq += 1;
        self.emitted_in_phase += 1;
        Some(rec)
    }
}

type BoxedStream = Box<dyn Iterator<Item = InstrRecord> + Send>;

/// Per-thread record streams consumed by the engine.
pub struct WorkloadSource {
    streams: Vec<Peekable<BoxedStream>>,
}

impl fmt::Debug for WorkloadSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkloadSource")
            .field("streams", &self.streams.len())
            .finish()
    }
}

impl WorkloadSource {
    pub fn from_streams(streams: Vec<BoxedStream>) -> Self {
        WorkloadSource {
            streams: streams.into_iter().map(Iterator::peekable).collect(),
        }
    }

    pub fn from_trace(trace: &TraceData) -> Self {
        Self::from_streams(
            trace
                .threads
                .iter()
                .map(|recs| Box::new(recs.clone().into_iter()) as BoxedStream)
                .collect(),
        )
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    /// Adds empty streams until there are `n`.
    pub fn pad_to(&mut self, n: usize) {
        while self.streams.len() < n {
            self.streams
                .push((Box::new(std::iter::empty()) as BoxedStream).peekable());
        }
    }

    pub fn peek(&mut self, thread: ThreadId) -> Option<&InstrRecord> {
        self.streams.get_mut(thread.index())?.peek()
    }

    pub fn next_record(&mut self, thread: ThreadId) -> Option<InstrRecord> {
        self.streams.get_mut(thread.index())?.next()
    }

    pub fn is_exhausted(&mut self, thread: ThreadId) -> bool {
        self.peek(thread).is_none()
    }

    /// Drains up to `limit` records per thread.
    pub fn collect_records(mut self, limit: Option<u64>) -> TraceData {
        let threads = (0..self.streams.len())
            .map(|t| {
                let s = &mut self.streams[t];
                match limit {
                    Some(n) => s.take(n as usize).collect(),
                    None => s.collect(),
                }
            })
            .collect();
        TraceData { threads }
    }
}

/// Deterministic stream for `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<WorkloadSource, WorkloadError> {
    spec.validate()?;
    Ok(WorkloadSource::from_streams(
        spec.threads
            .iter()
            .enumerate()
            .map(|(t, th)| {
                Box::new(PhaseGenerator::new(ThreadId(t), th, spec.repeat, seed)) as BoxedStream
            })
            .collect(),
    ))
}

/// Parsed trace contents, one record list per thread in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceData {
    pub threads: Vec<Vec<InstrRecord>>,
}

impl TraceData {
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let mut threads: Vec<Vec<InstrRecord>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |reason: String| WorkloadError::Parse { line, reason };
            let body = raw.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = body.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let thread: usize = tokens[0]
                .parse()
                .map_err(|_| err(format!("bad thread id `{}`", tokens[0])))?;
            if thread >= MAX_THREADS {
                return Err(err(format!("thread id {thread} exceeds {}", MAX_THREADS - 1)));
            }
            let kind = match tokens.get(1).copied() {
                Some("N") => {
                    if tokens.len() != 2 {
                        return Err(err("trailing fields after non-branch".into()));
                    }
                    InstrKind::NonBranch
                }
                Some("B") => {
                    if !(4..=5).contains(&tokens.len()) {
                        return Err(err("branch needs `<T|N> <latency> [M|C]`".into()));
                    }
                    let taken = match tokens[2] {
                        "T" => true,
                        "N" => false,
                        _ => return Err(err("bad taken flag".into())),
                    };
                    let resolve_latency = tokens[3]
                        .parse()
                        .map_err(|_| err(format!("bad resolve latency `{}`", tokens[3])))?;
                    let oracle_mispredict = match tokens.get(4).copied() {
                        None => None,
                        Some("M") => Some(true),
                        Some("C") => Some(false),
                        Some(_) => return Err(err("bad oracle flag".into())),
                    };
                    InstrKind::Branch {
                        taken,
                        resolve_latency,
                        oracle_mispredict,
                    }
                }
                Some(other) => return Err(err(format!("bad kind `{other}`"))),
                None => return Err(err("missing kind".into())),
            };
            if threads.len() <= thread {
                threads.resize_with(thread + 1, Vec::new);
            }
            let seq = threads[thread].len() as u64;
            threads[thread].push(InstrRecord {
                thread: ThreadId(thread),
                seq,
                kind,
            });
        }
        Ok(TraceData { threads })
    }

    /// Serializes to the trace format, thread by thread.
    pub fn to_trace_text(&self) -> String {
        let mut out = String::new();
        for recs in &self.threads {
            for r in recs {
                out.push_str(&format_record(r));
                out.push('\n');
            }
        }
        out
    }
}

pub fn format_record(r: &InstrRecord) -> String {
    match r.kind {
        InstrKind::NonBranch => format!("{} N", r.thread),
        InstrKind::Branch {
            taken,
            resolve_latency,
            oracle_mispredict,
        } => {
            let t = if taken { "T" } else { "N" };
            match oracle_mispredict {
                None => format!("{} B {t} {resolve_latency}", r.thread),
                Some(m) => format!(
                    "{} B {t} {resolve_latency} {}",
                    r.thread,
                    if m { "M" } else { "C" }
                ),
            }
        }
    }
}

pub fn load_trace(path: &Path) -> Result<WorkloadSource, WorkloadError> {
    Ok(WorkloadSource::from_trace(&read_trace(path)?))
}

pub fn read_trace(path: &Path) -> Result<TraceData, WorkloadError> {
    let text = fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TraceData::parse(&text)
}

/// Reusable workload description that can be instantiated once per run.
#[derive(Debug, Clone)]
pub enum WorkloadTemplate {
    Trace(Arc<TraceData>),
    Synthetic(SyntheticSpec),
}

impl WorkloadTemplate {
    pub fn instantiate(&self, seed: u64) -> Result<WorkloadSource, WorkloadError> {
        match self {
            WorkloadTemplate::Trace(t) => Ok(WorkloadSource::from_trace(t)),
            WorkloadTemplate::Synthetic(s) => generate_synthetic(s, seed),
        }
    }
}
