//! Measuring and reciprocating inter-agent influence.
//!
//! The central quantity is the one-step *value influence* of agent `i` on
//! agent `j`:
//!
//! ```text
//! VI[i->j](s, a) = Q_j(s, a) - Q_{j|i}(s, a without a_i)
//! ```
//!
//! where the baseline marginalizes `i`'s action under `i`'s own policy. A
//! reciprocating agent keeps a running *balance* of net influence received
//! minus exerted per opponent,
//!
//! ```text
//! B(t) = B(t-1) + [VI[i->rc](t) - VI[rc->i](t)]
//! ```
//!
//! and earns the intrinsic reward `w * B(t-1) * VI[rc->i](t)`: while in
//! influence debt it is driven to affect the opponent's return positively,
//! and to retaliate when the balance runs negative.
//!
//! Influence estimates are deliberately stale: they come from estimators
//! refreshed only at period boundaries from a replay buffer of past joint
//! transitions, which keeps the reciprocal reward from chasing the
//! optimizer's own current step.

mod ipd;
mod neural;

pub use ipd::IpdInfluenceEstimator;
pub use neural::{NeuralInfluence, NeuralInfluenceConfig};

use std::collections::VecDeque;

use rand::Rng;

/// One step of joint experience, extrinsic rewards only. Episodes are stored
/// as ordered transition sequences, so successor states and step indices are
/// implicit in the ordering.
#[derive(Clone, Debug)]
pub struct JointTransition<S> {
    pub state: S,
    pub actions: [usize; 2],
    pub rewards: [f64; 2],
}

/// Ring buffer of completed episodes with a capacity counted in episodes;
/// the oldest episode is evicted first. With batched rollouts each lane
/// contributes one episode per collection round, so a capacity of
/// `rounds * lanes` keeps the most recent `rounds` collection rounds.
#[derive(Clone, Debug)]
pub struct InfluenceReplayBuffer<S> {
    episodes: VecDeque<Vec<JointTransition<S>>>,
    capacity: usize,
    n_transitions: usize,
}

impl<S> InfluenceReplayBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        InfluenceReplayBuffer {
            episodes: VecDeque::new(),
            capacity,
            n_transitions: 0,
        }
    }

    pub fn push_episode(&mut self, episode: Vec<JointTransition<S>>) {
        if episode.is_empty() {
            return;
        }
        self.n_transitions += episode.len();
        self.episodes.push_back(episode);
        while self.episodes.len() > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty");
            self.n_transitions -= old.len();
        }
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.n_transitions
    }

    pub fn episodes(&self) -> impl Iterator<Item = &[JointTransition<S>]> {
        self.episodes.iter().map(|e| e.as_slice())
    }

    /// Uniform draw over every stored transition.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> &JointTransition<S> {
        let mut k = rng.random_range(0..self.n_transitions);
        for ep in &self.episodes {
            if k < ep.len() {
                return &ep[k];
            }
            k -= ep.len();
        }
        unreachable!("index within counted transitions")
    }
}

/// Per-lane influence balances against one opponent, plus the intrinsic
/// reward weight.
#[derive(Clone, Debug)]
pub struct InfluenceLedger {
    pub weight: f64,
    /// Saturation bound on each balance's magnitude. A persistent ledger
    /// integrates influence every round, so against a drifting opponent the
    /// accumulated balance can grow far past the scale of any single round's
    /// influence and then takes as long to change sign as it took to build.
    /// Saturating the magnitude keeps the reciprocal drive responsive;
    /// unbounded by default.
    max_balance: f64,
    /// Balance installed at construction and by [`InfluenceLedger::reset`].
    /// Zero by default; a positive value extends opening goodwill, which
    /// matters when both sides reciprocate: each opens cooperatively and the
    /// other returns it. (A non-reciprocating opponent just pockets the
    /// credit, so this is only useful between reciprocators.)
    reset_balance: f64,
    balances: Vec<f64>,
}

impl InfluenceLedger {
    pub fn new(n_lanes: usize, weight: f64) -> Self {
        InfluenceLedger {
            weight,
            max_balance: f64::INFINITY,
            reset_balance: 0.0,
            balances: vec![0.0; n_lanes],
        }
    }

    /// Cap balance magnitudes at `cap` (must be positive).
    pub fn with_max_balance(mut self, cap: f64) -> Self {
        assert!(cap > 0.0, "balance cap must be positive");
        self.max_balance = cap;
        self
    }

    /// Start every lane (and every reset) from balance `b0` instead of zero.
    pub fn with_reset_balance(mut self, b0: f64) -> Self {
        self.reset_balance = b0;
        self.balances.fill(b0);
        self
    }

    pub fn n_lanes(&self) -> usize {
        self.balances.len()
    }

    pub fn balance(&self, lane: usize) -> f64 {
        self.balances[lane]
    }

    /// Intrinsic reward for the current step: `w * B(t-1) * VI[rc->i]`.
    /// Must be read *before* [`InfluenceLedger::update_balance`] applies this
    /// step's influence.
    pub fn reciprocal_reward(&self, lane: usize, vi_rc_i: f64) -> f64 {
        self.weight * self.balances[lane] * vi_rc_i
    }

    /// Apply one step's balance recurrence; returns the new balance.
    pub fn update_balance(&mut self, lane: usize, vi_i_rc: f64, vi_rc_i: f64) -> f64 {
        let b = self.balances[lane] + vi_i_rc - vi_rc_i;
        self.balances[lane] = b.clamp(-self.max_balance, self.max_balance);
        self.balances[lane]
    }

    /// Optional per-episode reset (ablation; balances persist by default).
    pub fn reset(&mut self) {
        self.balances.fill(self.reset_balance);
    }

    pub fn mean_abs_balance(&self) -> f64 {
        self.balances.iter().map(|b| b.abs()).sum::<f64>() / self.balances.len() as f64
    }
}

/// Walk one lane's episode, emitting the per-step intrinsic rewards and
/// advancing the balance. `vi_pairs[t]` holds `(VI[i->rc], VI[rc->i])` for
/// step `t`; each step's reward uses the balance *before* that step's update.
pub fn annotate_episode(
    ledger: &mut InfluenceLedger,
    lane: usize,
    vi_pairs: &[(f64, f64)],
) -> Vec<f64> {
    vi_pairs
        .iter()
        .map(|&(vi_i_rc, vi_rc_i)| {
            let r = ledger.reciprocal_reward(lane, vi_rc_i);
            ledger.update_balance(lane, vi_i_rc, vi_rc_i);
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn tr(state: u8, a: [usize; 2]) -> JointTransition<u8> {
        JointTransition {
            state,
            actions: a,
            rewards: [0.0, 0.0],
        }
    }

    #[test]
    fn buffer_evicts_oldest_episode_first() {
        let mut buf = InfluenceReplayBuffer::new(2);
        buf.push_episode(vec![tr(1, [0, 0])]);
        buf.push_episode(vec![tr(2, [0, 0]), tr(2, [1, 1])]);
        buf.push_episode(vec![tr(3, [1, 0])]);
        assert_eq!(buf.n_episodes(), 2);
        assert_eq!(buf.n_transitions(), 3);
        let states: Vec<u8> = buf.episodes().flatten().map(|t| t.state).collect();
        assert_eq!(states, vec![2, 2, 3]);
    }

    #[test]
    fn sampling_is_uniform_over_transitions() {
        let mut buf = InfluenceReplayBuffer::new(8);
        // One episode of 1 transition, one of 3: states 1 and 2.
        buf.push_episode(vec![tr(1, [0, 0])]);
        buf.push_episode(vec![tr(2, [0, 0]), tr(2, [0, 1]), tr(2, [1, 1])]);
        let mut rng = StdRng::seed_from_u64(1);
        let n = 40_000;
        let hits = (0..n).filter(|_| buf.sample(&mut rng).state == 2).count();
        let freq = hits as f64 / n as f64;
        let sigma = (0.75 * 0.25 / n as f64).sqrt();
        assert!((freq - 0.75).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn balance_arithmetic_follows_the_recurrence() {
        let mut ledger = InfluenceLedger::new(1, 1.0);
        // Symmetric influence leaves the balance untouched.
        ledger.update_balance(0, 0.4, 0.4);
        assert_eq!(ledger.balance(0), 0.0);
        // Net received influence accumulates.
        ledger.update_balance(0, 1.0, 0.25);
        assert!((ledger.balance(0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn reciprocal_reward_products() {
        let mut ledger = InfluenceLedger::new(1, 1.0);
        // Zero balance pays nothing regardless of influence exerted.
        assert_eq!(ledger.reciprocal_reward(0, 123.0), 0.0);
        ledger.update_balance(0, 0.75, 0.0);
        assert!((ledger.reciprocal_reward(0, 1.0) - 0.75).abs() < 1e-15);
        // Sign mismatch is penalized, scaled by the weight.
        let mut ledger = InfluenceLedger::new(1, 5.0);
        ledger.update_balance(0, -2.0, 0.0);
        assert!((ledger.reciprocal_reward(0, 0.5) - (-5.0)).abs() < 1e-15);
    }

    #[test]
    fn reward_sign_law_is_exhaustive() {
        for &b in &[-1.5, 1.5] {
            for &vi in &[-0.3, 0.3] {
                let mut ledger = InfluenceLedger::new(1, 2.0);
                ledger.update_balance(0, b, 0.0);
                let r = ledger.reciprocal_reward(0, vi);
                assert_eq!(r.signum(), b.signum() * vi.signum());
            }
        }
    }

    #[test]
    fn reset_restores_the_configured_opening_balance() {
        let mut ledger = InfluenceLedger::new(2, 1.0).with_reset_balance(2.5);
        assert_eq!(ledger.balance(0), 2.5);
        ledger.update_balance(0, 0.0, 4.0);
        assert!((ledger.balance(0) + 1.5).abs() < 1e-15);
        ledger.reset();
        assert_eq!(ledger.balance(0), 2.5);
        assert_eq!(ledger.balance(1), 2.5);
        // The default opening balance stays zero.
        let mut plain = InfluenceLedger::new(1, 1.0);
        plain.update_balance(0, 1.0, 0.0);
        plain.reset();
        assert_eq!(plain.balance(0), 0.0);
    }

    #[test]
    fn capped_balance_saturates_and_recovers_immediately() {
        let mut ledger = InfluenceLedger::new(1, 1.0).with_max_balance(2.0);
        // Pushing past the cap pins the balance at the bound...
        for _ in 0..10 {
            ledger.update_balance(0, 5.0, 0.0);
        }
        assert_eq!(ledger.balance(0), 2.0);
        // ...and recovery starts from the bound, not from the raw integral.
        ledger.update_balance(0, 0.0, 3.0);
        assert!((ledger.balance(0) + 1.0).abs() < 1e-15);
        // The uncapped default telescopes freely.
        let mut free = InfluenceLedger::new(1, 1.0);
        for _ in 0..10 {
            free.update_balance(0, 5.0, 0.0);
        }
        assert_eq!(free.balance(0), 50.0);
    }

    #[test]
    fn balance_telescopes_over_random_sequences() {
        let mut rng = StdRng::seed_from_u64(2);
        let mut ledger = InfluenceLedger::new(1, 1.0);
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        annotate_episode(&mut ledger, 0, &pairs);
        let expect: f64 = pairs.iter().map(|(a, b)| a - b).sum();
        assert!((ledger.balance(0) - expect).abs() < 1e-12);
    }

    #[test]
    fn annotation_matches_a_manual_trace() {
        // Hand-evaluated three-step recurrence with w = 2:
        //   t0: B=0        -> r = 0;           B -> 0 + (1.0 - 0.5)  = 0.5
        //   t1: B=0.5      -> r = 2*0.5*(-1)   = -1; B -> 0.5 + (0.2 + 1.0) = 1.7
        //   t2: B=1.7      -> r = 2*1.7*0.3    = 1.02; B -> 1.7 + (-0.4 - 0.3) = 1.0
        let mut ledger = InfluenceLedger::new(1, 2.0);
        let rewards = annotate_episode(
            &mut ledger,
            0,
            &[(1.0, 0.5), (0.2, -1.0), (-0.4, 0.3)],
        );
        let expect = [0.0, -1.0, 1.02];
        for (r, e) in rewards.iter().zip(expect) {
            assert!((r - e).abs() < 1e-12, "got {r}, want {e}");
        }
        assert!((ledger.balance(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_influence_leaves_everything_untouched() {
        let mut ledger = InfluenceLedger::new(2, 5.0);
        let rewards = annotate_episode(&mut ledger, 1, &[(0.0, 0.0); 10]);
        assert!(rewards.iter().all(|&r| r == 0.0));
        assert_eq!(ledger.balance(1), 0.0);
    }

    #[test]
    fn swapping_roles_negates_the_balance_trajectory() {
        let pairs = [(0.8, -0.2), (-0.5, 0.1), (0.3, 0.6)];
        let swapped: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        let mut fwd = InfluenceLedger::new(1, 1.0);
        let mut rev = InfluenceLedger::new(1, 1.0);
        for t in 0..pairs.len() {
            fwd.update_balance(0, pairs[t].0, pairs[t].1);
            rev.update_balance(0, swapped[t].0, swapped[t].1);
            assert!((fwd.balance(0) + rev.balance(0)).abs() < 1e-12);
        }
    }
}
