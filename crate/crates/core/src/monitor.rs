//! Per-thread branch misprediction stall monitor.
//!
//! Each thread keeps two counters per window of `T` cycles: how many branches
//! it mispredicted and how many stall cycles those mispredictions cost. At
//! every window boundary the average stall per misprediction is compared
//! against the threshold `H`; a thread above it is recommended for demotion
//! and a demoted thread that falls back to or below it is recommended for
//! restoration. The optional two-bit hysteresis requires the same verdict in
//! two consecutive windows before acting.

use std::fmt;
use std::io::{self, Write};

use crate::model::{Cycle, ThreadId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WindowCounters {
    pub mispredict_count: u64,
    pub stall_cycles: u64,
    pub window_start: Cycle,
}

impl WindowCounters {
    pub fn new(window_start: Cycle) -> Self {
        WindowCounters {
            mispredict_count: 0,
            stall_cycles: 0,
            window_start,
        }
    }

    /// Charges one resolved misprediction. Correct predictions are never recorded.
    pub fn record_misprediction(&mut self, stall: u64) {
        self.mispredict_count += 1;
        self.stall_cycles += stall;
    }

    /// Stall cycles per misprediction; zero for a window without mispredictions.
    pub fn average_stall(&self) -> f64 {
        average_stall(self.mispredict_count, self.stall_cycles)
    }

    pub fn reset(&mut self, window_start: Cycle) {
        *self = WindowCounters::new(window_start);
    }
}

pub fn average_stall(mispredicts: u64, stall_cycles: u64) -> f64 {
    if mispredicts == 0 {
        0.0
    } else {
        stall_cycles as f64 / mispredicts as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorityRecommendation {
    Demote,
    Restore,
    NoChange,
}

impl fmt::Display for PriorityRecommendation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorityRecommendation::Demote => "demote",
            PriorityRecommendation::Restore => "restore",
            PriorityRecommendation::NoChange => "no_change",
        })
    }
}

/// Two-bit hysteresis state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HysteresisState {
    #[default]
    StableNormal,
    PendingDemote,
    StableDemoted,
    PendingRestore,
}

impl HysteresisState {
    pub const ALL: [HysteresisState; 4] = [
        HysteresisState::StableNormal,
        HysteresisState::PendingDemote,
        HysteresisState::StableDemoted,
        HysteresisState::PendingRestore,
    ];

    pub fn bits(self) -> u8 {
        match self {
            HysteresisState::StableNormal => 0b00,
            HysteresisState::PendingDemote => 0b01,
            HysteresisState::StableDemoted => 0b10,
            HysteresisState::PendingRestore => 0b11,
        }
    }

    pub fn transition(self, above: bool) -> (HysteresisState, PriorityRecommendation) {
        use HysteresisState::*;
        use PriorityRecommendation::*;
        match (self, above) {
            (StableNormal, true) => (PendingDemote, NoChange),
            (StableNormal, false) => (StableNormal, NoChange),
            (PendingDemote, true) => (StableDemoted, Demote),
            (PendingDemote, false) => (StableNormal, NoChange),
            (StableDemoted, true) => (StableDemoted, NoChange),
            (StableDemoted, false) => (PendingRestore, NoChange),
            (PendingRestore, true) => (StableDemoted, NoChange),
            (PendingRestore, false) => (StableNormal, Restore),
        }
    }

    /// Whether a thread in this state runs at demoted priority.
    pub fn is_demoted(self) -> bool {
        matches!(
            self,
            HysteresisState::StableDemoted | HysteresisState::PendingRestore
        )
    }
}

impl fmt::Display for HysteresisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HysteresisState::StableNormal => "stable_normal",
            HysteresisState::PendingDemote => "pending_demote",
            HysteresisState::StableDemoted => "stable_demoted",
            HysteresisState::PendingRestore => "pending_restore",
        })
    }
}

/// One row of the window audit log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorEvent {
    pub cycle: Cycle,
    pub thread: ThreadId,
    pub mispredicts: u64,
    pub stall_cycles: u64,
    pub metric: f64,
    pub above_threshold: bool,
    pub recommendation: PriorityRecommendation,
    /// Present only with hysteresis enabled.
    pub fsm_state_after: Option<HysteresisState>,
}

pub const MONITOR_CSV_HEADER: &str =
    "cycle,thread,mispredicts,stall_cycles,metric,above,recommendation,fsm_state";

impl MonitorEvent {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.cycle,
            self.thread,
            self.mispredicts,
            self.stall_cycles,
            self.metric,
            self.above_threshold,
            self.recommendation,
            self.fsm_state_after.map(|s| s.to_string()).unwrap_or_default()
        )
    }
}

pub fn write_monitor_csv<W: Write>(out: &mut W, events: &[MonitorEvent]) -> io::Result<()> {
    writeln!(out, "{MONITOR_CSV_HEADER}")?;
    for e in events {
        writeln!(out, "{}", e.csv_row())?;
    }
    Ok(())
}

/// Recommendation without hysteresis.
pub fn direct_recommendation(above: bool, currently_demoted: bool) -> PriorityRecommendation {
    match (above, currently_demoted) {
        (true, false) => PriorityRecommendation::Demote,
        (false, true) => PriorityRecommendation::Restore,
        _ => PriorityRecommendation::NoChange,
    }
}

/// Closes the window ending at `now`: evaluates the metric, advances the FSM,
/// and resets the counters for the next window.
pub fn end_of_window(
    thread: ThreadId,
    now: Cycle,
    counters: &mut WindowCounters,
    fsm: &mut HysteresisState,
    threshold_h: f64,
    hysteresis_enabled: bool,
    currently_demoted: bool,
) -> (PriorityRecommendation, MonitorEvent) {
    let metric = counters.average_stall();
    // Strict: equality counts as below, and +inf is never exceeded.
    let above = metric > threshold_h;
    let (rec, fsm_after) = if hysteresis_enabled {
        debug_assert_eq!(fsm.is_demoted(), currently_demoted);
        let (next, rec) = fsm.transition(above);
        *fsm = next;
        (rec, Some(next))
    } else {
        (direct_recommendation(above, currently_demoted), None)
    };
    let event = MonitorEvent {
        cycle: now,
        thread,
        mispredicts: counters.mispredict_count,
        stall_cycles: counters.stall_cycles,
        metric,
        above_threshold: above,
        recommendation: rec,
        fsm_state_after: fsm_after,
    };
    counters.reset(now);
    (rec, event)
}
