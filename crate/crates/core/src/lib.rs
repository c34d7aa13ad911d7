//! Deterministic simultaneous-multithreading fetch simulator.
//!
//! Threads compete for one fetch slot per cycle and a shared window of
//! in-flight instructions. Mispredicted branches keep their thread fetching
//! wrong-path work until they resolve, and a per-thread monitor can feed the
//! average misprediction stall back into the fetch arbiter to demote threads
//! that are going through a bad phase.

pub mod arbiter;
pub mod cli;
pub mod config;
pub mod engine;
pub mod model;
pub mod monitor;
pub mod predictor;
pub mod stats;
pub mod workload;

pub use engine::{run, run_with, SimError, SimOptions, Simulator};
pub use model::{BasePolicy, Cycle, FetchPolicy, InstrKind, InstrRecord, PredictorKind, SimConfig, ThreadId};
pub use stats::{SimReport, ThreadCounts};
pub use workload::{generate_synthetic, load_trace, LatencyDist, PhaseSpec, SyntheticSpec, ThreadSpec, WorkloadSource};
