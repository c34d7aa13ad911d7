//! Cycle loop.
//!
//! Every cycle runs three phases in a fixed order:
//!
//! 1. resolution of entries whose `resolves_at` is now: correct-path
//!    completions commit, branches release their predictor update, and a
//!    mispredicted branch squashes everything younger in its thread, charges
//!    the monitor and lets the thread resume its real stream;
//! 2. at window boundaries, monitor evaluation and priority feedback (feedback
//!    policies only);
//! 3. fetch of up to `fetch_width` instructions from the single thread picked
//!    by the arbiter.
//!
//! A thread that fetched a mispredicted branch keeps fetching, but what it
//! fetches are wrong-path placeholders that occupy slots in the shared window
//! until the squash. Its real stream stays parked at the record after the
//! branch.

use std::collections::VecDeque;

use thiserror::Error;

use crate::arbiter::{
    apply_feedback, eligible_mask, pick, priority_mask, FeedbackError, PickLogEntry, Priority,
    RrCursor, ThreadSchedState,
};
use crate::model::{ConfigError, Cycle, InstrKind, SimConfig, ThreadId};
use crate::monitor::{end_of_window, HysteresisState, MonitorEvent, WindowCounters};
use crate::predictor::{BranchPredictor, Prediction, SyntheticPc};
use crate::stats::{SimReport, ThreadCounts};
use crate::workload::WorkloadSource;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("workload has {streams} thread streams but the config has {threads} threads")]
    ThreadCountMismatch { streams: usize, threads: usize },
    #[error("thread {thread} record {seq}: branch has no oracle flag but the predictor is `oracle`")]
    MissingOracleFlag { thread: ThreadId, seq: u64 },
    #[error("thread {thread} stream yielded a record for thread {found}")]
    ForeignRecord { thread: ThreadId, found: ThreadId },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("contract violation: {0}")]
    Feedback(#[from] FeedbackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InFlightEntry {
    pub thread: ThreadId,
    /// Stream position; `None` for wrong-path placeholders.
    pub seq: Option<u64>,
    pub kind: InstrKind,
    pub is_wrong_path: bool,
    pub fetched_at: Cycle,
    pub resolves_at: Cycle,
    pub pc: Option<SyntheticPc>,
    pub predicted: Option<Prediction>,
    pub actual_taken: Option<bool>,
    pub mispredicted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingRedirect {
    pub resolves_at: Cycle,
    pub branch_seq: u64,
}

/// Predictor training for one branch, released in program order.
#[derive(Debug, Clone, Copy)]
struct BranchUpdate {
    seq: u64,
    pc: SyntheticPc,
    actual: bool,
    predicted: Prediction,
    resolved: bool,
}

#[derive(Debug, Clone, Default)]
struct ThreadRuntime {
    pending_redirect: Option<PendingRedirect>,
    counters: WindowCounters,
    fsm: HysteresisState,
    /// Program order, oldest first.
    inflight: Vec<InFlightEntry>,
    branch_updates: VecDeque<BranchUpdate>,
    branch_sites_seen: u64,
    shape: PathShape,
    counts: ThreadCounts,
}

const SHAPE_HISTORY: usize = 64;

/// Branch/non-branch mix of a thread's recent correct-path fetches.
///
/// Wrong-path placeholders replay this mix, oldest first, so that a thread on
/// the wrong path carries unresolved branches at its current branch density.
#[derive(Debug, Clone, Default)]
struct PathShape {
    recent: VecDeque<bool>,
    replay: usize,
}

impl PathShape {
    fn observe(&mut self, is_branch: bool) {
        if self.recent.len() == SHAPE_HISTORY {
            self.recent.pop_front();
        }
        self.recent.push_back(is_branch);
    }

    fn start_wrong_path(&mut self) {
        self.replay = 0;
    }

    fn wrong_path_kind(&mut self) -> InstrKind {
        let is_branch = !self.recent.is_empty() && self.recent[self.replay % self.recent.len()];
        self.replay += 1;
        if is_branch {
            InstrKind::Branch {
                taken: false,
                resolve_latency: 0,
                oracle_mispredict: None,
            }
        } else {
            InstrKind::NonBranch
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    pub record_picks: bool,
}

pub struct Simulator {
    cfg: SimConfig,
    workload: WorkloadSource,
    predictor: Option<BranchPredictor>,
    sched: Vec<ThreadSchedState>,
    threads: Vec<ThreadRuntime>,
    cursor: RrCursor,
    now: Cycle,
    window_used: usize,
    events: Vec<MonitorEvent>,
    pick_log: Option<Vec<PickLogEntry>>,
}

impl Simulator {
    pub fn new(cfg: SimConfig, mut workload: WorkloadSource, opts: SimOptions) -> Result<Self, SimError> {
        let cfg = cfg.validate()?;
        if workload.num_streams() > cfg.num_threads {
            return Err(SimError::ThreadCountMismatch {
                streams: workload.num_streams(),
                threads: cfg.num_threads,
            });
        }
        workload.pad_to(cfg.num_threads);
        Ok(Simulator {
            predictor: BranchPredictor::from_kind(cfg.predictor, cfg.num_threads),
            sched: vec![ThreadSchedState::default(); cfg.num_threads],
            threads: vec![ThreadRuntime::default(); cfg.num_threads],
            cfg,
            workload,
            cursor: RrCursor::default(),
            now: 0,
            window_used: 0,
            events: Vec::new(),
            pick_log: opts.record_picks.then(Vec::new),
        })
    }

    pub fn now(&self) -> Cycle {
        self.now
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn events(&self) -> &[MonitorEvent] {
        &self.events
    }

    pub fn sched_state(&self, t: ThreadId) -> ThreadSchedState {
        self.sched[t.index()]
    }

    pub fn counts(&self, t: ThreadId) -> ThreadCounts {
        let rt = &self.threads[t.index()];
        ThreadCounts {
            in_flight_at_end: rt.inflight.len() as u64,
            ..rt.counts
        }
    }

    pub fn window_counters(&self, t: ThreadId) -> WindowCounters {
        self.threads[t.index()].counters
    }

    pub fn pending_redirect(&self, t: ThreadId) -> Option<PendingRedirect> {
        self.threads[t.index()].pending_redirect
    }

    pub fn inflight(&self, t: ThreadId) -> &[InFlightEntry] {
        &self.threads[t.index()].inflight
    }

    /// Sequence number of the next correct-path record the thread will fetch.
    pub fn next_seq(&mut self, t: ThreadId) -> Option<u64> {
        self.workload.peek(t).map(|r| r.seq)
    }

    pub fn window_occupancy(&self) -> usize {
        self.window_used
    }

    /// All streams drained and nothing left in flight.
    pub fn is_finished(&mut self) -> bool {
        (0..self.cfg.num_threads).all(|t| {
            let id = ThreadId(t);
            let rt = &self.threads[t];
            rt.inflight.is_empty() && rt.pending_redirect.is_none() && self.workload.is_exhausted(id)
        })
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        for t in 0..self.cfg.num_threads {
            self.resolve_thread(ThreadId(t))?;
        }
        self.window_boundary()?;
        self.fetch()?;
        self.now += 1;
        Ok(())
    }

    fn resolve_thread(&mut self, t: ThreadId) -> Result<(), SimError> {
        let now = self.now;
        let rt = &mut self.threads[t.index()];
        let sched = &mut self.sched[t.index()];
        let mut i = 0;
        while i < rt.inflight.len() {
            let e = rt.inflight[i];
            if e.is_wrong_path || e.resolves_at != now {
                i += 1;
                continue;
            }
            rt.inflight.remove(i);
            self.window_used -= 1;
            rt.counts.committed += 1;
            sched.inflight = dec(sched.inflight, "inflight", t)?;
            if let InstrKind::Branch { taken, .. } = e.kind {
                rt.counts.branches += 1;
                sched.unresolved_branches =
                    dec(sched.unresolved_branches, "unresolved_branches", t)?;
                let seq = e.seq.expect("correct-path entries carry a seq");
                let upd = rt
                    .branch_updates
                    .iter_mut()
                    .find(|u| u.seq == seq)
                    .ok_or_else(|| SimError::Contract(format!("thread {t}: no pending update for branch {seq}")))?;
                upd.resolved = true;
                debug_assert_eq!(upd.actual, taken);
                if let Some(p) = self.predictor.as_mut() {
                    while rt.branch_updates.front().is_some_and(|u| u.resolved) {
                        let u = rt.branch_updates.pop_front().unwrap();
                        p.update(t, u.pc, u.actual, u.predicted);
                    }
                } else {
                    while rt.branch_updates.front().is_some_and(|u| u.resolved) {
                        rt.branch_updates.pop_front();
                    }
                }
                if e.mispredicted {
                    rt.counts.mispredictions += 1;
                    rt.counters.record_misprediction(e.resolves_at - e.fetched_at);
                    // Everything from index i on is younger than the branch.
                    for y in rt.inflight.drain(i..) {
                        rt.counts.squashed += 1;
                        if y.is_wrong_path {
                            rt.counts.squashed_wrong_path += 1;
                        } else {
                            rt.counts.squashed_correct_path += 1;
                            if let Some(seq) = y.seq {
                                rt.branch_updates.retain(|u| u.seq != seq);
                            }
                        }
                        if y.kind != InstrKind::NonBranch {
                            sched.unresolved_branches =
                                dec(sched.unresolved_branches, "unresolved_branches", t)?;
                        }
                        self.window_used -= 1;
                        sched.inflight = dec(sched.inflight, "inflight", t)?;
                    }
                    match rt.pending_redirect.take() {
                        Some(r) if r.branch_seq == seq => {}
                        other => {
                            return Err(SimError::Contract(format!(
                                "thread {t}: branch {seq} resolved mispredicted but redirect is {other:?}"
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn window_boundary(&mut self) -> Result<(), SimError> {
        let now = self.now;
        if now == 0 || !now.is_multiple_of(self.cfg.window_t) {
            return Ok(());
        }
        if !self.cfg.policy.uses_feedback() {
            for rt in &mut self.threads {
                rt.counters.reset(now);
            }
            return Ok(());
        }
        for t in 0..self.cfg.num_threads {
            let id = ThreadId(t);
            let rt = &mut self.threads[t];
            let (rec, event) = end_of_window(
                id,
                now,
                &mut rt.counters,
                &mut rt.fsm,
                self.cfg.threshold_h,
                self.cfg.hysteresis_enabled,
                self.sched[t].priority == Priority::Demoted,
            );
            self.events.push(event);
            apply_feedback(&mut self.sched, id, rec)?;
        }
        Ok(())
    }

    fn fetch(&mut self) -> Result<(), SimError> {
        let n = self.cfg.num_threads;
        for t in 0..n {
            let id = ThreadId(t);
            let blocked =
                self.threads[t].pending_redirect.is_none() && self.workload.is_exhausted(id);
            self.sched[t].fetch_blocked = blocked;
        }
        let scheds = &self.sched;
        let has_space = self.window_used < self.cfg.window_capacity;
        let result = pick(self.cfg.policy, scheds, &self.cursor, has_space);
        if let Some(log) = self.pick_log.as_mut() {
            log.push(PickLogEntry {
                cycle: self.now,
                chosen: result.chosen,
                eligible_mask: eligible_mask(scheds),
                priority_mask: priority_mask(scheds),
            });
        }
        let Some(t) = result.chosen else {
            return Ok(());
        };
        self.cursor.record(t);
        let now = self.now;
        let depth = self.cfg.pipeline_depth;
        for _ in 0..self.cfg.fetch_width {
            if self.window_used >= self.cfg.window_capacity {
                break;
            }
            let rt = &mut self.threads[t.index()];
            let entry = if rt.pending_redirect.is_some() {
                rt.counts.fetched_wrong_path += 1;
                let kind = rt.shape.wrong_path_kind();
                if kind != InstrKind::NonBranch {
                    self.sched[t.index()].unresolved_branches += 1;
                }
                InFlightEntry {
                    thread: t,
                    seq: None,
                    kind,
                    is_wrong_path: true,
                    fetched_at: now,
                    resolves_at: now + depth + 1,
                    pc: None,
                    predicted: None,
                    actual_taken: None,
                    mispredicted: false,
                }
            } else {
                let Some(rec) = self.workload.next_record(t) else {
                    break;
                };
                rt.shape.observe(rec.is_branch());
                if rec.thread != t {
                    return Err(SimError::ForeignRecord {
                        thread: t,
                        found: rec.thread,
                    });
                }
                match rec.kind {
                    InstrKind::NonBranch => InFlightEntry {
                        thread: t,
                        seq: Some(rec.seq),
                        kind: rec.kind,
                        is_wrong_path: false,
                        fetched_at: now,
                        resolves_at: now + depth + 1,
                        pc: None,
                        predicted: None,
                        actual_taken: None,
                        mispredicted: false,
                    },
                    InstrKind::Branch {
                        taken,
                        resolve_latency,
                        oracle_mispredict,
                    } => {
                        let pc = SyntheticPc::for_site(t, rt.branch_sites_seen);
                        rt.branch_sites_seen += 1;
                        let (predicted, mispredicted) = match self.predictor.as_ref() {
                            Some(p) => {
                                let pred = p.predict(t, pc);
                                (pred, pred.taken != taken)
                            }
                            None => {
                                let m = oracle_mispredict.ok_or(SimError::MissingOracleFlag {
                                    thread: t,
                                    seq: rec.seq,
                                })?;
                                let pred = Prediction {
                                    taken: taken != m,
                                    confidence: None,
                                };
                                (pred, m)
                            }
                        };
                        let resolves_at = now + depth + resolve_latency;
                        self.sched[t.index()].unresolved_branches += 1;
                        rt.branch_updates.push_back(BranchUpdate {
                            seq: rec.seq,
                            pc,
                            actual: taken,
                            predicted,
                            resolved: false,
                        });
                        if mispredicted {
                            rt.shape.start_wrong_path();
                            rt.pending_redirect = Some(PendingRedirect {
                                resolves_at,
                                branch_seq: rec.seq,
                            });
                        }
                        InFlightEntry {
                            thread: t,
                            seq: Some(rec.seq),
                            kind: rec.kind,
                            is_wrong_path: false,
                            fetched_at: now,
                            resolves_at,
                            pc: Some(pc),
                            predicted: Some(predicted),
                            actual_taken: Some(taken),
                            mispredicted,
                        }
                    }
                }
            };
            let rt = &mut self.threads[t.index()];
            rt.counts.fetched_total += 1;
            self.sched[t.index()].inflight += 1;
            rt.inflight.push(entry);
            self.window_used += 1;
        }
        Ok(())
    }

    /// Steps until `max_cycles` or until everything has drained.
    pub fn run_to_end(mut self) -> Result<SimReport, SimError> {
        while self.now < self.cfg.max_cycles && !self.is_finished() {
            self.step()?;
        }
        self.into_report()
    }

    pub fn into_report(self) -> Result<SimReport, SimError> {
        let threads: Vec<ThreadCounts> = self
            .threads
            .iter()
            .map(|rt| ThreadCounts {
                in_flight_at_end: rt.inflight.len() as u64,
                ..rt.counts
            })
            .collect();
        for (t, c) in threads.iter().enumerate() {
            if !c.is_conserved() {
                return Err(SimError::Contract(format!(
                    "thread {t}: instruction conservation broken: {c:?}"
                )));
            }
        }
        Ok(SimReport::new(
            self.cfg,
            self.now,
            threads,
            self.events,
            self.pick_log.unwrap_or_default(),
        ))
    }
}

fn dec(v: usize, what: &str, t: ThreadId) -> Result<usize, SimError> {
    v.checked_sub(1)
        .ok_or_else(|| SimError::Contract(format!("thread {t}: {what} would go negative")))
}

pub fn run(cfg: SimConfig, workload: WorkloadSource) -> Result<SimReport, SimError> {
    run_with(cfg, workload, SimOptions::default())
}

pub fn run_with(cfg: SimConfig, workload: WorkloadSource, opts: SimOptions) -> Result<SimReport, SimError> {
    Simulator::new(cfg, workload, opts)?.run_to_end()
}
