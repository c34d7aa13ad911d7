//! Configuration and shared vocabulary.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Simulation time in cycles.
pub type Cycle = u64;

/// Upper bound on hardware threads; arbiter masks are packed into a `u64`.
pub const MAX_THREADS: usize = 64;

/// Index of a hardware thread, stable for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ThreadId(pub usize);

impl ThreadId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One instruction of a per-thread stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstrRecord {
    pub thread: ThreadId,
    pub seq: u64,
    pub kind: InstrKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrKind {
    NonBranch,
    Branch {
        taken: bool,
        /// Cycles past the front-end depth before the branch resolves.
        resolve_latency: u64,
        /// Pre-drawn predictor outcome, consumed only by the oracle predictor mode.
        oracle_mispredict: Option<bool>,
    },
}

impl InstrRecord {
    pub fn is_branch(&self) -> bool {
        matches!(self.kind, InstrKind::Branch { .. })
    }
}

/// Thread-selection policies that can stand on their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasePolicy {
    RoundRobin,
    ICount,
    BrCount,
}

/// Fetch policy. The feedback wrapper holds exactly one base policy, so nesting
/// it is unrepresentable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FetchPolicy {
    Base(BasePolicy),
    StallFeedback(BasePolicy),
}

impl FetchPolicy {
    pub fn base(self) -> BasePolicy {
        match self {
            FetchPolicy::Base(b) | FetchPolicy::StallFeedback(b) => b,
        }
    }

    pub fn uses_feedback(self) -> bool {
        matches!(self, FetchPolicy::StallFeedback(_))
    }
}

impl fmt::Display for BasePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasePolicy::RoundRobin => "round_robin",
            BasePolicy::ICount => "icount",
            BasePolicy::BrCount => "brcount",
        })
    }
}

impl fmt::Display for FetchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FetchPolicy::Base(b) => write!(f, "{b}"),
            FetchPolicy::StallFeedback(b) => write!(f, "stall_feedback:{b}"),
        }
    }
}

impl FromStr for BasePolicy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "round_robin" | "roundrobin" | "rr" => Ok(BasePolicy::RoundRobin),
            "icount" => Ok(BasePolicy::ICount),
            "brcount" => Ok(BasePolicy::BrCount),
            other => Err(ConfigError::BadValue {
                key: "policy".into(),
                reason: format!("unknown policy `{other}`"),
            }),
        }
    }
}

impl FromStr for FetchPolicy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s.split_once(':') {
            Some((head, rest)) => {
                let head = head.to_ascii_lowercase();
                if head != "stall_feedback" && head != "stallfeedback" {
                    return Err(ConfigError::BadValue {
                        key: "policy".into(),
                        reason: format!("unknown policy wrapper `{head}`"),
                    });
                }
                if rest.contains(':') {
                    return Err(ConfigError::Invalid(
                        "stall_feedback must wrap exactly one base policy".into(),
                    ));
                }
                Ok(FetchPolicy::StallFeedback(rest.parse()?))
            }
            None => {
                let lower = s.to_ascii_lowercase();
                if lower == "stall_feedback" || lower == "stallfeedback" {
                    return Err(ConfigError::Invalid(
                        "stall_feedback must wrap exactly one base policy".into(),
                    ));
                }
                Ok(FetchPolicy::Base(s.parse()?))
            }
        }
    }
}

/// Branch direction predictor selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictorKind {
    AlwaysTaken,
    Bimodal {
        table_bits: u32,
    },
    Gshare {
        history_bits: u32,
        table_bits: u32,
    },
    Perceptron {
        history_len: u32,
        table_entries: u32,
        /// Training threshold.
        theta: i32,
    },
    /// Mispredictions come from the per-branch oracle flag of the workload.
    OracleFlag,
}

impl PredictorKind {
    /// Perceptron with the customary training threshold `floor(1.93 * h + 14)`.
    pub fn perceptron(history_len: u32, table_entries: u32) -> Self {
        PredictorKind::Perceptron {
            history_len,
            table_entries,
            theta: default_theta(history_len),
        }
    }
}

pub fn default_theta(history_len: u32) -> i32 {
    (1.93 * f64::from(history_len) + 14.0).floor() as i32
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PredictorKind::AlwaysTaken => f.write_str("always_taken"),
            PredictorKind::Bimodal { table_bits } => write!(f, "bimodal:{table_bits}"),
            PredictorKind::Gshare {
                history_bits,
                table_bits,
            } => write!(f, "gshare:{history_bits}:{table_bits}"),
            PredictorKind::Perceptron {
                history_len,
                table_entries,
                theta,
            } => write!(f, "perceptron:{history_len}:{table_entries}:{theta}"),
            PredictorKind::OracleFlag => f.write_str("oracle"),
        }
    }
}

impl FromStr for PredictorKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: String| ConfigError::BadValue {
            key: "predictor".into(),
            reason,
        };
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let num = |i: usize| -> Result<u32, ConfigError> {
            parts
                .get(i)
                .ok_or_else(|| bad(format!("`{s}` is missing parameter {i}")))?
                .parse::<u32>()
                .map_err(|e| bad(format!("`{}`: {e}", parts[i])))
        };
        let arity = |n: usize| -> Result<(), ConfigError> {
            if parts.len() == n {
                Ok(())
            } else {
                Err(bad(format!("`{s}` expects {} parameter(s)", n - 1)))
            }
        };
        match parts[0].to_ascii_lowercase().as_str() {
            "always_taken" | "alwaystaken" => {
                arity(1)?;
                Ok(PredictorKind::AlwaysTaken)
            }
            "bimodal" => {
                arity(2)?;
                Ok(PredictorKind::Bimodal { table_bits: num(1)? })
            }
            "gshare" => {
                arity(3)?;
                Ok(PredictorKind::Gshare {
                    history_bits: num(1)?,
                    table_bits: num(2)?,
                })
            }
            "perceptron" => match parts.len() {
                3 => Ok(PredictorKind::perceptron(num(1)?, num(2)?)),
                4 => {
                    let theta = parts[3]
                        .parse::<i32>()
                        .map_err(|e| bad(format!("theta `{}`: {e}", parts[3])))?;
                    Ok(PredictorKind::Perceptron {
                        history_len: num(1)?,
                        table_entries: num(2)?,
                        theta,
                    })
                }
                _ => Err(bad(format!("`{s}` expects perceptron:history:entries[:theta]"))),
            },
            "oracle" | "oracle_flag" | "oracleflag" => {
                arity(1)?;
                Ok(PredictorKind::OracleFlag)
            }
            other => Err(bad(format!("unknown predictor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
}

/// Every simulator knob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub num_threads: usize,
    /// Front-end depth; the fixed redirect part of a misprediction penalty.
    pub pipeline_depth: u64,
    pub fetch_width: usize,
    /// Shared in-flight instruction slots across all threads.
    pub window_capacity: usize,
    /// Cycles per monitoring window.
    pub window_t: Cycle,
    /// Average-stall threshold in cycles; `f64::INFINITY` disables demotion.
    pub threshold_h: f64,
    pub hysteresis_enabled: bool,
    pub policy: FetchPolicy,
    pub predictor: PredictorKind,
    pub max_cycles: Cycle,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_threads: 4,
            pipeline_depth: 10,
            fetch_width: 4,
            window_capacity: 128,
            window_t: 1024,
            threshold_h: 20.0,
            hysteresis_enabled: false,
            policy: FetchPolicy::Base(BasePolicy::RoundRobin),
            predictor: PredictorKind::Gshare {
                history_bits: 12,
                table_bits: 14,
            },
            max_cycles: 1_000_000,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Returns the config unchanged if every invariant holds, otherwise the
    /// first violated one.
    pub fn validate(self) -> Result<SimConfig, ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.num_threads < 1 {
            return fail("num_threads must be ≥ 1");
        }
        if self.num_threads > MAX_THREADS {
            return fail("num_threads must be ≤ 64");
        }
        if self.pipeline_depth < 1 {
            return fail("pipeline_depth must be ≥ 1");
        }
        if self.fetch_width < 1 {
            return fail("fetch_width must be ≥ 1");
        }
        if self.window_capacity < self.fetch_width {
            return fail("window_capacity < fetch_width");
        }
        if self.window_t < 1 {
            return fail("window_T must be ≥ 1");
        }
        if self.threshold_h.is_nan() || self.threshold_h < 0.0 {
            return fail("threshold_H must be ≥ 0");
        }
        if self.max_cycles < 1 {
            return fail("max_cycles must be ≥ 1");
        }
        match self.predictor {
            PredictorKind::Bimodal { table_bits } if !(1..=30).contains(&table_bits) => {
                return fail("bimodal table_bits must be in 1..=30");
            }
            PredictorKind::Gshare {
                history_bits,
                table_bits,
            } => {
                if !(1..=30).contains(&table_bits) {
                    return fail("gshare table_bits must be in 1..=30");
                }
                if history_bits > 64 {
                    return fail("gshare history_bits must be ≤ 64");
                }
            }
            PredictorKind::Perceptron {
                history_len,
                table_entries,
                theta,
            } => {
                if !(1..=64).contains(&history_len) {
                    return fail("perceptron history_len must be in 1..=64");
                }
                if table_entries < 1 {
                    return fail("perceptron table_entries must be ≥ 1");
                }
                if theta < 1 {
                    return fail("perceptron theta must be ≥ 1");
                }
            }
            _ => {}
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.validate(), Ok(cfg));
        assert_eq!(cfg.num_threads, 4);
        assert_eq!(cfg.pipeline_depth, 10);
        assert_eq!(cfg.window_capacity, 128);
    }

    #[test]
    fn zero_threads_rejected() {
        let cfg = SimConfig {
            num_threads: 0,
            ..SimConfig::default()
        };
        assert_eq!(
            cfg.validate().unwrap_err().to_string(),
            "num_threads must be ≥ 1"
        );
    }

    #[test]
    fn capacity_below_width_rejected() {
        let cfg = SimConfig {
            window_capacity: 4,
            fetch_width: 8,
            ..SimConfig::default()
        };
        assert_eq!(
            cfg.validate().unwrap_err().to_string(),
            "window_capacity < fetch_width"
        );
    }

    #[test]
    fn threshold_rules() {
        let inf = SimConfig {
            threshold_h: f64::INFINITY,
            ..SimConfig::default()
        };
        assert!(inf.validate().is_ok());
        for bad in [-1.0, f64::NAN] {
            let cfg = SimConfig {
                threshold_h: bad,
                ..SimConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn validate_is_idempotent() {
        let once = SimConfig::default().validate().unwrap();
        assert_eq!(once.validate().unwrap(), once);
    }

    #[test]
    fn policy_names() {
        assert_eq!(
            "stall_feedback:icount".parse::<FetchPolicy>().unwrap(),
            FetchPolicy::StallFeedback(BasePolicy::ICount)
        );
        assert_eq!(
            "brcount".parse::<FetchPolicy>().unwrap(),
            FetchPolicy::Base(BasePolicy::BrCount)
        );
        assert!("stall_feedback".parse::<FetchPolicy>().is_err());
        assert!("stall_feedback:stall_feedback:icount"
            .parse::<FetchPolicy>()
            .is_err());
        for p in [
            FetchPolicy::Base(BasePolicy::RoundRobin),
            FetchPolicy::StallFeedback(BasePolicy::BrCount),
        ] {
            assert_eq!(p.to_string().parse::<FetchPolicy>().unwrap(), p);
        }
    }

    #[test]
    fn predictor_names() {
        assert_eq!(
            "gshare:12:14".parse::<PredictorKind>().unwrap(),
            PredictorKind::Gshare {
                history_bits: 12,
                table_bits: 14
            }
        );
        assert_eq!(
            "perceptron:16:256".parse::<PredictorKind>().unwrap(),
            PredictorKind::Perceptron {
                history_len: 16,
                table_entries: 256,
                theta: 44
            }
        );
        assert!("gshare:12".parse::<PredictorKind>().is_err());
        assert!("tage".parse::<PredictorKind>().is_err());
        assert_eq!("oracle".parse::<PredictorKind>().unwrap(), PredictorKind::OracleFlag);
    }

    #[test]
    fn default_theta_formula() {
        assert_eq!(default_theta(1), 15);
        assert_eq!(default_theta(12), 37);
        assert_eq!(default_theta(62), 133);
    }
}
