//! Run statistics and their text/CSV renderings.

use std::fmt::Write as _;

use crate::arbiter::PickLogEntry;
use crate::config::format_config;
use crate::model::SimConfig;
use crate::monitor::{MonitorEvent, PriorityRecommendation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ThreadCounts {
    pub committed: u64,
    pub fetched_total: u64,
    pub fetched_wrong_path: u64,
    pub squashed: u64,
    pub squashed_wrong_path: u64,
    /// Correct-path entries younger than a mispredicted branch.
    pub squashed_correct_path: u64,
    pub in_flight_at_end: u64,
    pub mispredictions: u64,
    /// Resolved correct-path branches.
    pub branches: u64,
}

impl ThreadCounts {
    fn add(&mut self, o: &ThreadCounts) {
        self.committed += o.committed;
        self.fetched_total += o.fetched_total;
        self.fetched_wrong_path += o.fetched_wrong_path;
        self.squashed += o.squashed;
        self.squashed_wrong_path += o.squashed_wrong_path;
        self.squashed_correct_path += o.squashed_correct_path;
        self.in_flight_at_end += o.in_flight_at_end;
        self.mispredictions += o.mispredictions;
        self.branches += o.branches;
    }

    /// `fetched = committed + squashed + in flight` and the squash split.
    pub fn is_conserved(&self) -> bool {
        self.fetched_total == self.committed + self.squashed + self.in_flight_at_end
            && self.squashed == self.squashed_wrong_path + self.squashed_correct_path
    }

    /// One unit per fetch plus one per squash for the wasted occupancy.
    pub fn energy_proxy(&self) -> u64 {
        self.fetched_total + self.squashed
    }

    pub fn wrong_path_fraction(&self) -> f64 {
        if self.fetched_total == 0 {
            0.0
        } else {
            self.fetched_wrong_path as f64 / self.fetched_total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub config: SimConfig,
    pub seed: u64,
    pub cycles_run: u64,
    pub threads: Vec<ThreadCounts>,
    pub total: ThreadCounts,
    pub monitor_events: Vec<MonitorEvent>,
    /// Empty unless pick logging was requested.
    pub pick_log: Vec<PickLogEntry>,
}

impl SimReport {
    pub fn new(
        config: SimConfig,
        cycles_run: u64,
        threads: Vec<ThreadCounts>,
        monitor_events: Vec<MonitorEvent>,
        pick_log: Vec<PickLogEntry>,
    ) -> Self {
        let mut total = ThreadCounts::default();
        for t in &threads {
            total.add(t);
        }
        SimReport {
            seed: config.seed,
            config,
            cycles_run,
            threads,
            total,
            monitor_events,
            pick_log,
        }
    }

    pub fn ipc(&self) -> f64 {
        ipc(self.total.committed, self.cycles_run)
    }

    pub fn thread_ipc(&self, t: usize) -> f64 {
        ipc(self.threads[t].committed, self.cycles_run)
    }

    pub fn wrong_path_fraction(&self) -> f64 {
        self.total.wrong_path_fraction()
    }

    pub fn energy_proxy(&self) -> u64 {
        self.total.energy_proxy()
    }

    pub fn demotions(&self) -> usize {
        self.count_recs(PriorityRecommendation::Demote)
    }

    pub fn restores(&self) -> usize {
        self.count_recs(PriorityRecommendation::Restore)
    }

    fn count_recs(&self, r: PriorityRecommendation) -> usize {
        self.monitor_events
            .iter()
            .filter(|e| e.recommendation == r)
            .count()
    }

    /// Headline scalars, in a fixed column order.
    pub fn scalars(&self) -> Vec<(&'static str, String)> {
        let t = &self.total;
        vec![
            ("cycles_run", self.cycles_run.to_string()),
            ("committed", t.committed.to_string()),
            ("fetched_total", t.fetched_total.to_string()),
            ("fetched_wrong_path", t.fetched_wrong_path.to_string()),
            ("squashed", t.squashed.to_string()),
            ("in_flight_at_end", t.in_flight_at_end.to_string()),
            ("mispredictions", t.mispredictions.to_string()),
            ("branches", t.branches.to_string()),
            ("ipc", self.ipc().to_string()),
            ("wrong_path_fraction", self.wrong_path_fraction().to_string()),
            ("energy_proxy", self.energy_proxy().to_string()),
            ("demotions", self.demotions().to_string()),
            ("restores", self.restores().to_string()),
        ]
    }

    /// Measured results only, without the configuration echo.
    pub fn results_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "seed: {}", self.seed).unwrap();
        for (k, v) in self.scalars() {
            writeln!(out, "{k}: {v}").unwrap();
        }
        for (i, t) in self.threads.iter().enumerate() {
            for (k, v) in thread_fields(t) {
                writeln!(out, "thread.{i}.{k}: {v}").unwrap();
            }
            writeln!(out, "thread.{i}.ipc: {}", self.thread_ipc(i)).unwrap();
        }
        out
    }

    /// Full report: configuration echo followed by results, `key: value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in format_config(&self.config).lines() {
            if let Some((k, v)) = line.split_once('=') {
                writeln!(out, "config.{k}: {v}").unwrap();
            }
        }
        out.push_str(&self.results_text());
        out
    }

    /// Per-thread table plus a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("thread");
        for (k, _) in thread_fields(&self.total) {
            out.push(',');
            out.push_str(k);
        }
        out.push_str(",ipc,wrong_path_fraction,energy_proxy\n");
        let mut row = |label: String, t: &ThreadCounts| {
            out.push_str(&label);
            for (_, v) in thread_fields(t) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            writeln!(
                out,
                ",{},{},{}",
                ipc(t.committed, self.cycles_run),
                t.wrong_path_fraction(),
                t.energy_proxy()
            )
            .unwrap();
        };
        for (i, t) in self.threads.iter().enumerate() {
            row(i.to_string(), t);
        }
        row("total".into(), &self.total);
        out
    }
}

fn ipc(committed: u64, cycles: u64) -> f64 {
    if cycles == 0 {
        0.0
    } else {
        committed as f64 / cycles as f64
    }
}

fn thread_fields(t: &ThreadCounts) -> [(&'static str, u64); 9] {
    [
        ("committed", t.committed),
        ("fetched_total", t.fetched_total),
        ("fetched_wrong_path", t.fetched_wrong_path),
        ("squashed", t.squashed),
        ("squashed_wrong_path", t.squashed_wrong_path),
        ("squashed_correct_path", t.squashed_correct_path),
        ("in_flight_at_end", t.in_flight_at_end),
        ("mispredictions", t.mispredictions),
        ("branches", t.branches),
    ]
}
