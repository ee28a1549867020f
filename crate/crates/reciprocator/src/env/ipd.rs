//! Iterated prisoner's dilemma as a stepped environment.
//!
//! Each lane tracks only the previous joint action; observations are the
//! five-way one-hot of that memory-1 state, each agent seeing the outcome
//! from its own perspective.

use crate::error::{Error, Result};
use crate::matrix_game::{outcome_index, swap_outcome, Action, PayoffMatrix, N_STATES};

/// Batched iterated prisoner's dilemma with a fixed horizon.
#[derive(Clone, Debug)]
pub struct IpdEnv {
    pub horizon: usize,
    pub payoff: PayoffMatrix,
    /// Previous outcome per lane, in agent-1 perspective; `None` at the start.
    last: Vec<Option<usize>>,
    t: usize,
}

impl IpdEnv {
    pub fn new(n_lanes: usize, horizon: usize, payoff: PayoffMatrix) -> Self {
        IpdEnv {
            horizon,
            payoff,
            last: vec![None; n_lanes],
            t: 0,
        }
    }

    pub fn n_lanes(&self) -> usize {
        self.last.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.horizon
    }

    pub fn reset(&mut self) {
        self.last.fill(None);
        self.t = 0;
    }

    /// Memory-1 state index (0 = start, then CC, CD, DC, DD) as seen by
    /// `agent`; agent 1's perspective swaps the mixed outcomes.
    pub fn state_index(&self, lane: usize, agent: usize) -> usize {
        match self.last[lane] {
            None => 0,
            Some(o) => 1 + if agent == 0 { o } else { swap_outcome(o) },
        }
    }

    /// One-hot observation of the memory-1 state for `agent`.
    pub fn observe(&self, lane: usize, agent: usize) -> Vec<f64> {
        let mut obs = vec![0.0; N_STATES];
        obs[self.state_index(lane, agent)] = 1.0;
        obs
    }

    /// Advance every lane by one round; returns per-lane rewards.
    pub fn step(&mut self, actions: &[[Action; 2]]) -> Result<Vec<[f64; 2]>> {
        if self.done() {
            return Err(Error::usage("stepping a finished episode"));
        }
        debug_assert_eq!(actions.len(), self.last.len());
        let rewards = actions
            .iter()
            .zip(self.last.iter_mut())
            .map(|(&[a1, a2], last)| {
                let o = outcome_index(a1, a2);
                *last = Some(o);
                [self.payoff.own[o], self.payoff.other[o]]
            })
            .collect();
        self.t += 1;
        Ok(rewards)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewards_match_the_payoff_table() {
        use Action::{Cooperate as C, Defect as D};
        let mut env = IpdEnv::new(4, 8, PayoffMatrix::default());
        let r = env.step(&[[C, C], [C, D], [D, C], [D, D]]).unwrap();
        assert_eq!(r[0], [-1.0, -1.0]);
        assert_eq!(r[1], [-3.0, 0.0]);
        assert_eq!(r[2], [0.0, -3.0]);
        assert_eq!(r[3], [-2.0, -2.0]);
    }

    #[test]
    fn observations_are_perspective_correct() {
        use Action::{Cooperate as C, Defect as D};
        let mut env = IpdEnv::new(1, 8, PayoffMatrix::default());
        // Start state occupies slot 0 for both agents.
        assert_eq!(env.observe(0, 0)[0], 1.0);
        assert_eq!(env.observe(0, 1)[0], 1.0);
        env.step(&[[C, D]]).unwrap();
        // Agent 1 cooperated, agent 2 defected: agent 1 sees CD (slot 2),
        // agent 2 sees DC (slot 3).
        assert_eq!(env.state_index(0, 0), 2);
        assert_eq!(env.state_index(0, 1), 3);
        let obs = env.observe(0, 1);
        assert_eq!(obs.iter().sum::<f64>(), 1.0);
        assert_eq!(obs[3], 1.0);
    }

    #[test]
    fn episodes_run_exactly_horizon_steps() {
        use Action::Cooperate as C;
        let mut env = IpdEnv::new(2, 3, PayoffMatrix::default());
        for _ in 0..3 {
            assert!(!env.done());
            env.step(&[[C, C], [C, C]]).unwrap();
        }
        assert!(env.done());
        assert!(env.step(&[[C, C], [C, C]]).is_err());
        env.reset();
        assert!(!env.done());
        assert_eq!(env.state_index(0, 0), 0);
    }
}
