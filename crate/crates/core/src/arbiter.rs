//! Fetch-thread selection.
//!
//! One thread is chosen per cycle. The feedback policy splits threads into a
//! normal and a demoted class: the base policy runs over eligible normal
//! threads, and only when none is eligible does it run over the demoted ones.

use std::fmt;

use thiserror::Error;

use crate::model::{BasePolicy, FetchPolicy, ThreadId};
use crate::monitor::PriorityRecommendation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Priority {
    #[default]
    Normal,
    Demoted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ThreadSchedState {
    /// Unsquashed in-flight instructions, wrong-path included.
    pub inflight: usize,
    /// Correct-path branches fetched but not yet resolved.
    pub unresolved_branches: usize,
    pub priority: Priority,
    /// Nothing left to fetch.
    pub fetch_blocked: bool,
}

impl ThreadSchedState {
    pub fn eligible(&self) -> bool {
        !self.fetch_blocked
    }
}

/// Round-robin position; owned by the engine and passed into [`pick`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RrCursor {
    last: Option<ThreadId>,
}

impl RrCursor {
    pub fn last_picked(&self) -> Option<ThreadId> {
        self.last
    }

    pub fn record(&mut self, picked: ThreadId) {
        self.last = Some(picked);
    }

    pub fn after(last: ThreadId) -> Self {
        RrCursor { last: Some(last) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PickResult {
    pub chosen: Option<ThreadId>,
}

fn select<F>(base: BasePolicy, states: &[ThreadSchedState], cursor: &RrCursor, allowed: F) -> Option<ThreadId>
where
    F: Fn(&ThreadSchedState) -> bool,
{
    let n = states.len();
    let candidate = |i: usize| states[i].eligible() && allowed(&states[i]);
    match base {
        BasePolicy::RoundRobin => {
            let start = cursor.last.map_or(0, |t| t.index() + 1);
            (0..n).map(|k| (start + k) % n).find(|&i| candidate(i))
        }
        // min_by_key keeps the first minimum, i.e. the lowest thread id.
        BasePolicy::ICount => (0..n).filter(|&i| candidate(i)).min_by_key(|&i| states[i].inflight),
        BasePolicy::BrCount => (0..n)
            .filter(|&i| candidate(i))
            .min_by_key(|&i| states[i].unresolved_branches),
    }
    .map(ThreadId)
}

/// Chooses the thread allowed to fetch this cycle. Nothing is chosen when the
/// shared window has no free slot or no thread is eligible.
pub fn pick(
    policy: FetchPolicy,
    states: &[ThreadSchedState],
    cursor: &RrCursor,
    window_has_space: bool,
) -> PickResult {
    if !window_has_space {
        return PickResult { chosen: None };
    }
    let chosen = match policy {
        FetchPolicy::Base(base) => select(base, states, cursor, |_| true),
        FetchPolicy::StallFeedback(base) => {
            select(base, states, cursor, |s| s.priority == Priority::Normal)
                .or_else(|| select(base, states, cursor, |s| s.priority == Priority::Demoted))
        }
    };
    PickResult { chosen }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("thread {0}: demote recommended while already demoted")]
    AlreadyDemoted(ThreadId),
    #[error("thread {0}: restore recommended while at normal priority")]
    NotDemoted(ThreadId),
}

pub fn apply_feedback(
    states: &mut [ThreadSchedState],
    thread: ThreadId,
    rec: PriorityRecommendation,
) -> Result<(), FeedbackError> {
    let s = &mut states[thread.index()];
    match (rec, s.priority) {
        (PriorityRecommendation::NoChange, _) => {}
        (PriorityRecommendation::Demote, Priority::Normal) => s.priority = Priority::Demoted,
        (PriorityRecommendation::Demote, Priority::Demoted) => {
            return Err(FeedbackError::AlreadyDemoted(thread))
        }
        (PriorityRecommendation::Restore, Priority::Demoted) => s.priority = Priority::Normal,
        (PriorityRecommendation::Restore, Priority::Normal) => {
            return Err(FeedbackError::NotDemoted(thread))
        }
    }
    Ok(())
}

/// Bit `i` set when thread `i` is eligible.
pub fn eligible_mask(states: &[ThreadSchedState]) -> u64 {
    mask(states, ThreadSchedState::eligible)
}

/// Bit `i` set when thread `i` is demoted.
pub fn priority_mask(states: &[ThreadSchedState]) -> u64 {
    mask(states, |s| s.priority == Priority::Demoted)
}

fn mask(states: &[ThreadSchedState], f: impl Fn(&ThreadSchedState) -> bool) -> u64 {
    states
        .iter()
        .enumerate()
        .filter(|(_, s)| f(s))
        .fold(0, |m, (i, _)| m | (1 << i))
}

/// One row of the optional per-cycle pick log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PickLogEntry {
    pub cycle: u64,
    pub chosen: Option<ThreadId>,
    pub eligible_mask: u64,
    pub priority_mask: u64,
}

pub const PICK_CSV_HEADER: &str = "cycle,policy,chosen_thread,eligible_mask,priority_mask";

pub struct PickRow<'a> {
    pub policy: FetchPolicy,
    pub entry: &'a PickLogEntry,
}

impl fmt::Display for PickRow<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let chosen = self
            .entry
            .chosen
            .map(|t| t.to_string())
            .unwrap_or_default();
        write!(
            f,
            "{},{},{},{},{}",
            self.entry.cycle, self.policy, chosen, self.entry.eligible_mask, self.entry.priority_mask
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(inflight: usize, branches: usize, priority: Priority) -> ThreadSchedState {
        ThreadSchedState {
            inflight,
            unresolved_branches: branches,
            priority,
            fetch_blocked: false,
        }
    }

    const RR: FetchPolicy = FetchPolicy::Base(BasePolicy::RoundRobin);
    const IC: FetchPolicy = FetchPolicy::Base(BasePolicy::ICount);
    const BC: FetchPolicy = FetchPolicy::Base(BasePolicy::BrCount);

    #[test]
    fn round_robin_rotates() {
        let s = [st(0, 0, Priority::Normal); 2];
        let r = pick(RR, &s, &RrCursor::after(ThreadId(0)), true);
        assert_eq!(r.chosen, Some(ThreadId(1)));
        let r = pick(RR, &s, &RrCursor::after(ThreadId(1)), true);
        assert_eq!(r.chosen, Some(ThreadId(0)));
        assert_eq!(pick(RR, &s, &RrCursor::default(), true).chosen, Some(ThreadId(0)));
    }

    #[test]
    fn round_robin_skips_blocked() {
        let mut s = [st(0, 0, Priority::Normal); 3];
        s[1].fetch_blocked = true;
        let r = pick(RR, &s, &RrCursor::after(ThreadId(0)), true);
        assert_eq!(r.chosen, Some(ThreadId(2)));
    }

    #[test]
    fn icount_argmin() {
        let s = [
            st(12, 0, Priority::Normal),
            st(3, 0, Priority::Normal),
            st(7, 0, Priority::Normal),
        ];
        assert_eq!(pick(IC, &s, &RrCursor::default(), true).chosen, Some(ThreadId(1)));
    }

    #[test]
    fn brcount_ties_go_to_lowest_id() {
        let s = [
            st(1, 4, Priority::Normal),
            st(9, 2, Priority::Normal),
            st(0, 2, Priority::Normal),
        ];
        assert_eq!(pick(BC, &s, &RrCursor::default(), true).chosen, Some(ThreadId(1)));
    }

    #[test]
    fn feedback_prefers_normal_class() {
        let s = [st(12, 0, Priority::Normal), st(3, 0, Priority::Demoted)];
        let p = FetchPolicy::StallFeedback(BasePolicy::ICount);
        assert_eq!(pick(p, &s, &RrCursor::default(), true).chosen, Some(ThreadId(0)));
    }

    #[test]
    fn feedback_falls_back_to_demoted() {
        let mut s = [st(12, 0, Priority::Normal), st(3, 0, Priority::Demoted)];
        s[0].fetch_blocked = true;
        let p = FetchPolicy::StallFeedback(BasePolicy::ICount);
        assert_eq!(pick(p, &s, &RrCursor::default(), true).chosen, Some(ThreadId(1)));
    }

    #[test]
    fn all_demoted_behaves_as_base() {
        let s = [
            st(5, 1, Priority::Demoted),
            st(2, 3, Priority::Demoted),
            st(8, 0, Priority::Demoted),
        ];
        for base in [BasePolicy::RoundRobin, BasePolicy::ICount, BasePolicy::BrCount] {
            for last in 0..3 {
                let c = RrCursor::after(ThreadId(last));
                assert_eq!(
                    pick(FetchPolicy::StallFeedback(base), &s, &c, true),
                    pick(FetchPolicy::Base(base), &s, &c, true)
                );
            }
        }
    }

    #[test]
    fn full_window_picks_nothing() {
        let s = [st(0, 0, Priority::Normal); 3];
        assert_eq!(pick(IC, &s, &RrCursor::default(), false).chosen, None);
    }

    #[test]
    fn nobody_eligible() {
        let mut s = [st(0, 0, Priority::Normal); 2];
        s[0].fetch_blocked = true;
        s[1].fetch_blocked = true;
        assert_eq!(pick(RR, &s, &RrCursor::default(), true).chosen, None);
    }

    #[test]
    fn feedback_transitions() {
        let mut s = [st(0, 0, Priority::Normal)];
        let t = ThreadId(0);
        apply_feedback(&mut s, t, PriorityRecommendation::NoChange).unwrap();
        assert_eq!(s[0].priority, Priority::Normal);
        apply_feedback(&mut s, t, PriorityRecommendation::Demote).unwrap();
        assert_eq!(s[0].priority, Priority::Demoted);
        assert_eq!(
            apply_feedback(&mut s, t, PriorityRecommendation::Demote),
            Err(FeedbackError::AlreadyDemoted(t))
        );
        apply_feedback(&mut s, t, PriorityRecommendation::Restore).unwrap();
        assert_eq!(s[0].priority, Priority::Normal);
        assert_eq!(
            apply_feedback(&mut s, t, PriorityRecommendation::Restore),
            Err(FeedbackError::NotDemoted(t))
        );
    }

    #[test]
    fn masks() {
        let mut s = [st(0, 0, Priority::Normal); 3];
        s[1].fetch_blocked = true;
        s[2].priority = Priority::Demoted;
        assert_eq!(eligible_mask(&s), 0b101);
        assert_eq!(priority_mask(&s), 0b100);
        let e = PickLogEntry {
            cycle: 7,
            chosen: None,
            eligible_mask: 0,
            priority_mask: 4,
        };
        assert_eq!(PickRow { policy: IC, entry: &e }.to_string(), "7,icount,,0,4");
    }

    fn arb_states() -> impl Strategy<Value = Vec<ThreadSchedState>> {
        prop::collection::vec(
            (0usize..40, 0usize..8, any::<bool>(), any::<bool>()).prop_map(|(i, b, d, blk)| {
                ThreadSchedState {
                    inflight: i,
                    unresolved_branches: b,
                    priority: if d { Priority::Demoted } else { Priority::Normal },
                    fetch_blocked: blk,
                }
            }),
            1..9,
        )
    }

    fn arb_policy() -> impl Strategy<Value = FetchPolicy> {
        (0usize..3, any::<bool>()).prop_map(|(b, fb)| {
            let base = [BasePolicy::RoundRobin, BasePolicy::ICount, BasePolicy::BrCount][b];
            if fb {
                FetchPolicy::StallFeedback(base)
            } else {
                FetchPolicy::Base(base)
            }
        })
    }

    proptest! {
        #[test]
        fn work_conserving_and_argmin(states in arb_states(), policy in arb_policy(), last in 0usize..9) {
            let cursor = RrCursor::after(ThreadId(last % states.len()));
            let r = pick(policy, &states, &cursor, true);
            let any_eligible = states.iter().any(|s| s.eligible());
            prop_assert_eq!(r.chosen.is_some(), any_eligible);
            if let Some(t) = r.chosen {
                let chosen = states[t.index()];
                prop_assert!(chosen.eligible());
                let class: Vec<&ThreadSchedState> = states
                    .iter()
                    .filter(|s| s.eligible())
                    .filter(|s| !policy.uses_feedback() || s.priority == chosen.priority)
                    .collect();
                if policy.uses_feedback() && chosen.priority == Priority::Demoted {
                    prop_assert!(!states.iter().any(|s| s.eligible() && s.priority == Priority::Normal));
                }
                match policy.base() {
                    BasePolicy::ICount => prop_assert!(class.iter().all(|s| s.inflight >= chosen.inflight)),
                    BasePolicy::BrCount => prop_assert!(class.iter().all(|s| s.unresolved_branches >= chosen.unresolved_branches)),
                    BasePolicy::RoundRobin => {}
                }
            }
        }

        #[test]
        fn neutral_wrapper_matches_base(mut states in arb_states(), b in 0usize..3, last in 0usize..9) {
            for s in states.iter_mut() {
                s.priority = Priority::Normal;
            }
            let base = [BasePolicy::RoundRobin, BasePolicy::ICount, BasePolicy::BrCount][b];
            let cursor = RrCursor::after(ThreadId(last % states.len()));
            prop_assert_eq!(
                pick(FetchPolicy::StallFeedback(base), &states, &cursor, true),
                pick(FetchPolicy::Base(base), &states, &cursor, true)
            );
        }

        #[test]
        fn round_robin_fairness(n in 1usize..10, start in 0usize..10) {
            let states = vec![st(0, 0, Priority::Normal); n];
            let mut cursor = RrCursor::after(ThreadId(start % n));
            let mut seen = vec![0; n];
            for _ in 0..n {
                let t = pick(RR, &states, &cursor, true).chosen.unwrap();
                seen[t.index()] += 1;
                cursor.record(t);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
