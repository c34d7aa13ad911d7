#![allow(dead_code)]

use smtsim::{
    BasePolicy, FetchPolicy, InstrKind, InstrRecord, LatencyDist, PhaseSpec, PredictorKind,
    SimConfig, SyntheticSpec, ThreadId, ThreadSpec,
};
use smtsim::workload::{TraceData, WorkloadSource};

pub const PATHOLOGICAL: usize = 1;

pub fn predictable(length: u64) -> PhaseSpec {
    PhaseSpec {
        length,
        branch_fraction: 0.2,
        mispredict_prob: 0.01,
        latency: LatencyDist::Fixed(2),
    }
}

pub fn pathological(length: u64) -> PhaseSpec {
    PhaseSpec {
        length,
        branch_fraction: 0.2,
        mispredict_prob: 0.30,
        latency: LatencyDist::Uniform(10, 40),
    }
}

/// Thread 0 alternates predictable and pathological phases; threads 1-3 stay
/// predictable.
pub fn mixed_workload() -> SyntheticSpec {
    SyntheticSpec {
        repeat: true,
        threads: vec![
            ThreadSpec {
                phases: vec![predictable(20_000), pathological(20_000)],
            },
            ThreadSpec {
                phases: vec![predictable(40_000)],
            },
            ThreadSpec {
                phases: vec![predictable(40_000)],
            },
            ThreadSpec {
                phases: vec![predictable(40_000)],
            },
        ],
    }
}

/// Saturated four-thread oracle-flag machine. Predictable-phase windows
/// average exactly 12 cycles per miss, pathological ones about 35.
pub fn mixed_config(policy: FetchPolicy) -> SimConfig {
    SimConfig {
        num_threads: 4,
        pipeline_depth: 10,
        fetch_width: 4,
        window_capacity: 64,
        window_t: 1024,
        threshold_h: 20.0,
        hysteresis_enabled: false,
        policy,
        predictor: PredictorKind::OracleFlag,
        max_cycles: 300_000,
        seed: 7,
    }
}

pub fn base(p: BasePolicy) -> FetchPolicy {
    FetchPolicy::Base(p)
}

pub fn feedback(p: BasePolicy) -> FetchPolicy {
    FetchPolicy::StallFeedback(p)
}

pub const BASES: [BasePolicy; 3] = [BasePolicy::RoundRobin, BasePolicy::ICount, BasePolicy::BrCount];

pub fn nb(t: usize, seq: u64) -> InstrRecord {
    InstrRecord {
        thread: ThreadId(t),
        seq,
        kind: InstrKind::NonBranch,
    }
}

pub fn br(t: usize, seq: u64, latency: u64, mispredict: bool) -> InstrRecord {
    InstrRecord {
        thread: ThreadId(t),
        seq,
        kind: InstrKind::Branch {
            taken: true,
            resolve_latency: latency,
            oracle_mispredict: Some(mispredict),
        },
    }
}

pub fn source(threads: Vec<Vec<InstrRecord>>) -> WorkloadSource {
    WorkloadSource::from_trace(&TraceData { threads })
}

pub fn single_thread(cfg_width: usize, depth: u64, capacity: usize) -> SimConfig {
    SimConfig {
        num_threads: 1,
        pipeline_depth: depth,
        fetch_width: cfg_width,
        window_capacity: capacity,
        window_t: 1024,
        threshold_h: 20.0,
        hysteresis_enabled: false,
        policy: FetchPolicy::Base(BasePolicy::RoundRobin),
        predictor: PredictorKind::OracleFlag,
        max_cycles: 100_000,
        seed: 0,
    }
}
