//! Branch direction predictors.
//!
//! Tables are shared by all hardware threads and indexed by a synthetic PC that
//! already encodes the thread; global history registers are private per
//! thread. Predictors train at branch resolution only, so fetch never
//! modifies history speculatively.

use crate::model::{PredictorKind, ThreadId};

/// Branch sites per thread in the synthetic PC space.
pub const SITES_PER_THREAD: u64 = 64;

pub const WEIGHT_MIN: i32 = -128;
pub const WEIGHT_MAX: i32 = 127;

/// Index key for predictor tables, stable per branch site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SyntheticPc(pub u64);

impl SyntheticPc {
    pub fn for_site(thread: ThreadId, site: u64) -> Self {
        SyntheticPc(thread.index() as u64 * SITES_PER_THREAD + site % SITES_PER_THREAD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub taken: bool,
    /// Perceptron output magnitude.
    pub confidence: Option<i32>,
}

impl Prediction {
    fn plain(taken: bool) -> Self {
        Prediction {
            taken,
            confidence: None,
        }
    }
}

/// Two-bit saturating counter; values 2 and 3 predict taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SatCounter(u8);

impl SatCounter {
    pub const WEAKLY_TAKEN: SatCounter = SatCounter(2);

    pub fn new(v: u8) -> Self {
        SatCounter(v.min(3))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn taken(self) -> bool {
        self.0 >= 2
    }

    pub fn train(&mut self, taken: bool) {
        if taken {
            self.0 = (self.0 + 1).min(3);
        } else {
            self.0 = self.0.saturating_sub(1);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BimodalState {
    counters: Vec<SatCounter>,
}

impl BimodalState {
    pub fn new(table_bits: u32) -> Self {
        BimodalState {
            counters: vec![SatCounter::WEAKLY_TAKEN; 1 << table_bits],
        }
    }

    fn index(&self, pc: SyntheticPc) -> usize {
        (pc.0 % self.counters.len() as u64) as usize
    }

    pub fn counter(&self, pc: SyntheticPc) -> SatCounter {
        self.counters[self.index(pc)]
    }

    pub fn counters(&self) -> &[SatCounter] {
        &self.counters
    }
}

#[derive(Debug, Clone)]
pub struct GshareState {
    history_bits: u32,
    histories: Vec<u64>,
    counters: Vec<SatCounter>,
}

impl GshareState {
    pub fn new(history_bits: u32, table_bits: u32, num_threads: usize) -> Self {
        GshareState {
            history_bits,
            histories: vec![0; num_threads],
            counters: vec![SatCounter::WEAKLY_TAKEN; 1 << table_bits],
        }
    }

    fn index(&self, thread: ThreadId, pc: SyntheticPc) -> usize {
        ((pc.0 ^ self.histories[thread.index()]) % self.counters.len() as u64) as usize
    }

    /// Newest outcome in bit 0.
    pub fn history(&self, thread: ThreadId) -> u64 {
        self.histories[thread.index()]
    }

    pub fn counters(&self) -> &[SatCounter] {
        &self.counters
    }

    fn push_history(&mut self, thread: ThreadId, taken: bool) {
        let mask = history_mask(self.history_bits);
        let h = &mut self.histories[thread.index()];
        *h = ((*h << 1) | u64::from(taken)) & mask;
    }
}

fn history_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Perceptron predictor: one weight vector per row, bias in column 0.
#[derive(Debug, Clone)]
pub struct PerceptronState {
    history_len: u32,
    rows: usize,
    theta: i32,
    weights: Vec<i16>,
    /// Bit i set means the i-th most recent branch was taken (+1), clear means -1.
    histories: Vec<u64>,
}

impl PerceptronState {
    pub fn new(history_len: u32, table_entries: u32, theta: i32, num_threads: usize) -> Self {
        let rows = table_entries as usize;
        PerceptronState {
            history_len,
            rows,
            theta,
            weights: vec![0; rows * (history_len as usize + 1)],
            histories: vec![0; num_threads],
        }
    }

    fn row(&self, pc: SyntheticPc) -> usize {
        (pc.0 % self.rows as u64) as usize
    }

    pub fn theta(&self) -> i32 {
        self.theta
    }

    pub fn weights(&self, pc: SyntheticPc) -> &[i16] {
        let w = self.history_len as usize + 1;
        let r = self.row(pc);
        &self.weights[r * w..(r + 1) * w]
    }

    pub fn all_weights(&self) -> &[i16] {
        &self.weights
    }

    fn input(&self, thread: ThreadId, i: u32) -> i32 {
        if (self.histories[thread.index()] >> i) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn output(&self, thread: ThreadId, pc: SyntheticPc) -> i32 {
        let w = self.weights(pc);
        let mut y = i32::from(w[0]);
        for i in 0..self.history_len {
            y += i32::from(w[i as usize + 1]) * self.input(thread, i);
        }
        y
    }

    fn train(&mut self, thread: ThreadId, pc: SyntheticPc, taken: bool) {
        let t = if taken { 1 } else { -1 };
        let y = self.output(thread, pc);
        let mispredicted = (y >= 0) != taken;
        if mispredicted || y.abs() <= self.theta {
            let inputs: Vec<i32> = (0..self.history_len).map(|i| self.input(thread, i)).collect();
            let width = self.history_len as usize + 1;
            let base = self.row(pc) * width;
            let row = &mut self.weights[base..base + width];
            row[0] = saturate(i32::from(row[0]) + t);
            for (w, x) in row[1..].iter_mut().zip(inputs) {
                *w = saturate(i32::from(*w) + t * x);
            }
        }
        let mask = history_mask(self.history_len);
        let h = &mut self.histories[thread.index()];
        *h = ((*h << 1) | u64::from(taken)) & mask;
    }
}

fn saturate(v: i32) -> i16 {
    v.clamp(WEIGHT_MIN, WEIGHT_MAX) as i16
}

#[derive(Debug, Clone)]
pub enum BranchPredictor {
    AlwaysTaken,
    Bimodal(BimodalState),
    Gshare(GshareState),
    Perceptron(PerceptronState),
}

impl BranchPredictor {
    /// `None` for the oracle mode, which takes outcomes from the workload.
    pub fn from_kind(kind: PredictorKind, num_threads: usize) -> Option<Self> {
        Some(match kind {
            PredictorKind::AlwaysTaken => BranchPredictor::AlwaysTaken,
            PredictorKind::Bimodal { table_bits } => {
                BranchPredictor::Bimodal(BimodalState::new(table_bits))
            }
            PredictorKind::Gshare {
                history_bits,
                table_bits,
            } => BranchPredictor::Gshare(GshareState::new(history_bits, table_bits, num_threads)),
            PredictorKind::Perceptron {
                history_len,
                table_entries,
                theta,
            } => BranchPredictor::Perceptron(PerceptronState::new(
                history_len,
                table_entries,
                theta,
                num_threads,
            )),
            PredictorKind::OracleFlag => return None,
        })
    }

    pub fn predict(&self, thread: ThreadId, pc: SyntheticPc) -> Prediction {
        match self {
            BranchPredictor::AlwaysTaken => Prediction::plain(true),
            BranchPredictor::Bimodal(s) => Prediction::plain(s.counter(pc).taken()),
            BranchPredictor::Gshare(s) => Prediction::plain(s.counters[s.index(thread, pc)].taken()),
            BranchPredictor::Perceptron(s) => {
                let y = s.output(thread, pc);
                Prediction {
                    taken: y >= 0,
                    confidence: Some(y.abs()),
                }
            }
        }
    }

    /// Trains on one resolved branch. Called once per branch, in program order
    /// per thread.
    pub fn update(
        &mut self,
        thread: ThreadId,
        pc: SyntheticPc,
        actual_taken: bool,
        _predicted: Prediction,
    ) {
        match self {
            BranchPredictor::AlwaysTaken => {}
            BranchPredictor::Bimodal(s) => {
                let i = s.index(pc);
                s.counters[i].train(actual_taken);
            }
            BranchPredictor::Gshare(s) => {
                let i = s.index(thread, pc);
                s.counters[i].train(actual_taken);
                s.push_history(thread, actual_taken);
            }
            // The perceptron recomputes its output at training time; the
            // history has not moved since predict, so the result matches.
            BranchPredictor::Perceptron(s) => s.train(thread, pc, actual_taken),
        }
    }
}

/// Hit statistics from [`accuracy_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub hits: u64,
    pub total: u64,
    /// `1.0` for an empty stream; check `total` to tell it apart.
    pub hit_rate: f64,
}

/// Predicts then trains on each `(pc, outcome)` in turn, on behalf of `thread`.
pub fn accuracy_probe<I>(predictor: &mut BranchPredictor, thread: ThreadId, stream: I) -> ProbeResult
where
    I: IntoIterator<Item = (SyntheticPc, bool)>,
{
    let mut hits = 0;
    let mut total = 0;
    for (pc, outcome) in stream {
        let p = predictor.predict(thread, pc);
        if p.taken == outcome {
            hits += 1;
        }
        total += 1;
        predictor.update(thread, pc, outcome, p);
    }
    let hit_rate = if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    };
    ProbeResult {
        hits,
        total,
        hit_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const T0: ThreadId = ThreadId(0);

    fn all_kinds() -> Vec<PredictorKind> {
        vec![
            PredictorKind::AlwaysTaken,
            PredictorKind::Bimodal { table_bits: 10 },
            PredictorKind::Gshare {
                history_bits: 8,
                table_bits: 12,
            },
            PredictorKind::perceptron(16, 128),
        ]
    }

    fn pcs(n: usize) -> impl Iterator<Item = SyntheticPc> {
        (0..n as u64).map(|i| SyntheticPc::for_site(T0, i))
    }

    #[test]
    fn always_taken_predicts_taken() {
        let p = BranchPredictor::AlwaysTaken;
        assert!(p.predict(T0, SyntheticPc(12345)).taken);
    }

    #[test]
    fn fresh_bimodal_is_weakly_taken() {
        let p = BranchPredictor::from_kind(PredictorKind::Bimodal { table_bits: 4 }, 1).unwrap();
        assert!(p.predict(T0, SyntheticPc(3)).taken);
    }

    #[test]
    fn zero_perceptron_ties_to_taken() {
        let p = BranchPredictor::from_kind(PredictorKind::perceptron(8, 16), 1).unwrap();
        let pred = p.predict(T0, SyntheticPc(5));
        assert_eq!(
            pred,
            Prediction {
                taken: true,
                confidence: Some(0)
            }
        );
    }

    #[test]
    fn counter_steps_and_saturates() {
        let mut c = SatCounter::new(3);
        c.train(true);
        assert_eq!(c.value(), 3);
        let mut c = SatCounter::new(2);
        c.train(false);
        assert_eq!(c.value(), 1);
        c.train(false);
        c.train(false);
        assert_eq!(c.value(), 0);
    }

    #[test]
    fn bimodal_update_moves_indexed_counter() {
        let mut p = BranchPredictor::from_kind(PredictorKind::Bimodal { table_bits: 4 }, 1).unwrap();
        let pc = SyntheticPc(17);
        let pred = p.predict(T0, pc);
        p.update(T0, pc, false, pred);
        let BranchPredictor::Bimodal(s) = &p else { unreachable!() };
        assert_eq!(s.counter(pc).value(), 1);
        // 17 mod 16 aliases with 1
        assert_eq!(s.counter(SyntheticPc(1)).value(), 1);
        assert_eq!(s.counter(SyntheticPc(2)).value(), 2);
    }

    #[test]
    fn gshare_history_newest_in_bit_zero() {
        let mut p = BranchPredictor::from_kind(
            PredictorKind::Gshare {
                history_bits: 3,
                table_bits: 4,
            },
            2,
        )
        .unwrap();
        for taken in [true, false, true, true] {
            let pred = p.predict(T0, SyntheticPc(0));
            p.update(T0, SyntheticPc(0), taken, pred);
        }
        let BranchPredictor::Gshare(s) = &p else { unreachable!() };
        assert_eq!(s.history(T0), 0b011);
        assert_eq!(s.history(ThreadId(1)), 0);
    }

    #[test]
    fn perceptron_learns_always_taken_within_1000() {
        let mut p = BranchPredictor::from_kind(PredictorKind::perceptron(16, 64), 1).unwrap();
        let warm = accuracy_probe(&mut p, T0, pcs(1000).map(|pc| (pc, true)));
        assert_eq!(warm.total, 1000);
        let after = accuracy_probe(&mut p, T0, pcs(5000).map(|pc| (pc, true)));
        assert_eq!(after.hit_rate, 1.0);
    }

    #[test]
    fn perceptron_training_halts_on_separable_stream() {
        // Always-not-taken: the bias weight alone separates it. Once |y| > theta,
        // no further training happens and weights freeze.
        let mut p = BranchPredictor::from_kind(PredictorKind::perceptron(8, 1), 1).unwrap();
        let pc = SyntheticPc(0);
        accuracy_probe(&mut p, T0, std::iter::repeat_n((pc, false), 2000));
        let BranchPredictor::Perceptron(s) = &p else { unreachable!() };
        let frozen = s.weights(pc).to_vec();
        assert!(s.output(T0, pc).abs() > s.theta());
        accuracy_probe(&mut p, T0, std::iter::repeat_n((pc, false), 500));
        let BranchPredictor::Perceptron(s) = &p else { unreachable!() };
        assert_eq!(s.weights(pc), &frozen[..]);
    }

    #[test]
    fn every_predictor_handles_always_taken() {
        for kind in all_kinds() {
            let mut p = BranchPredictor::from_kind(kind, 1).unwrap();
            accuracy_probe(&mut p, T0, pcs(1000).map(|pc| (pc, true)));
            let r = accuracy_probe(&mut p, T0, pcs(10_000).map(|pc| (pc, true)));
            assert!(r.hit_rate >= 0.99, "{kind}: {}", r.hit_rate);
        }
    }

    #[test]
    fn empty_probe_is_one_with_zero_count() {
        let mut p = BranchPredictor::AlwaysTaken;
        let r = accuracy_probe(&mut p, T0, std::iter::empty());
        assert_eq!((r.hit_rate, r.total), (1.0, 0));
    }

    #[test]
    fn gshare_fair_coin_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let stream: Vec<_> = (0..100_000u64)
            .map(|i| (SyntheticPc::for_site(T0, i), rng.gen_bool(0.5)))
            .collect();
        let mut p = BranchPredictor::from_kind(
            PredictorKind::Gshare {
                history_bits: 12,
                table_bits: 14,
            },
            1,
        )
        .unwrap();
        let r = accuracy_probe(&mut p, T0, stream);
        assert!((r.hit_rate - 0.5).abs() <= 0.02, "{}", r.hit_rate);
    }

    #[test]
    fn gshare_learns_alternation() {
        for hb in [1, 4, 12] {
            let mut p = BranchPredictor::from_kind(
                PredictorKind::Gshare {
                    history_bits: hb,
                    table_bits: 10,
                },
                1,
            )
            .unwrap();
            let pc = SyntheticPc(9);
            let alt = |n: usize| (0..n).map(move |i| (pc, i % 2 == 0));
            accuracy_probe(&mut p, T0, alt(1000));
            let r = accuracy_probe(&mut p, T0, alt(10_000));
            assert!(r.hit_rate >= 0.99, "history {hb}: {}", r.hit_rate);
        }
    }

    #[test]
    fn oracle_kind_has_no_predictor() {
        assert!(BranchPredictor::from_kind(PredictorKind::OracleFlag, 1).is_none());
    }

    proptest! {
        #[test]
        fn counters_stay_in_range(kind_idx in 1usize..3, ops in prop::collection::vec((0u64..512, any::<bool>(), 0usize..3), 1..400)) {
            let kind = all_kinds()[kind_idx];
            let mut p = BranchPredictor::from_kind(kind, 3).unwrap();
            for (pc, taken, t) in ops {
                let th = ThreadId(t);
                let pred = p.predict(th, SyntheticPc(pc));
                p.update(th, SyntheticPc(pc), taken, pred);
            }
            let counters = match &p {
                BranchPredictor::Bimodal(s) => s.counters(),
                BranchPredictor::Gshare(s) => s.counters(),
                _ => unreachable!(),
            };
            prop_assert!(counters.iter().all(|c| c.value() <= 3));
        }

        #[test]
        fn perceptron_weights_saturate(hist in 1u32..16, ops in prop::collection::vec((0u64..8, any::<bool>()), 1..3000)) {
            // A tiny table and a huge theta force training on every branch.
            let mut p = BranchPredictor::Perceptron(PerceptronState::new(hist, 2, 10_000, 1));
            for (pc, taken) in ops {
                let pred = p.predict(T0, SyntheticPc(pc));
                p.update(T0, SyntheticPc(pc), taken, pred);
            }
            let BranchPredictor::Perceptron(s) = &p else { unreachable!() };
            prop_assert!(s.all_weights().iter().all(|&w| (WEIGHT_MIN..=WEIGHT_MAX).contains(&i32::from(w))));
        }

        #[test]
        fn predict_is_deterministic(ops in prop::collection::vec((0u64..64, any::<bool>()), 0..200), probe in 0u64..64) {
            for kind in all_kinds() {
                let mut a = BranchPredictor::from_kind(kind, 1).unwrap();
                let mut b = BranchPredictor::from_kind(kind, 1).unwrap();
                for &(pc, t) in &ops {
                    let pa = a.predict(T0, SyntheticPc(pc));
                    let pb = b.predict(T0, SyntheticPc(pc));
                    prop_assert_eq!(pa, pb);
                    a.update(T0, SyntheticPc(pc), t, pa);
                    b.update(T0, SyntheticPc(pc), t, pb);
                }
                prop_assert_eq!(a.predict(T0, SyntheticPc(probe)), b.predict(T0, SyntheticPc(probe)));
            }
        }
    }
}
