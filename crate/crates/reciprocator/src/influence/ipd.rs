//! Influence estimation for memory-1 matrix games.
//!
//! In the iterated prisoner's dilemma a policy is five cooperation
//! probabilities, so instead of fitting value networks we estimate both
//! agents' policies directly — per-state empirical cooperation frequencies
//! over the replay buffer — and get every Q value in closed form from the
//! induced Markov chain.

use crate::error::{Error, Result};
use crate::influence::InfluenceReplayBuffer;
use crate::matrix_game::{
    outcome_index, perspective_state_index, solve_game, Action, Memory1Policy, PayoffMatrix,
    N_STATES,
};

/// Target snapshot taken at a fit: estimated per-state cooperation
/// probabilities for both agents and the resulting closed-form Q tables.
#[derive(Clone, Debug)]
struct Targets {
    /// `probs[agent][state]` in each agent's own perspective.
    probs: [[f64; N_STATES]; 2],
    /// `q[j][outcome]`: discounted-sum action value for player `j` when the
    /// current round produces `outcome` (canonical perspective). Kept on the
    /// raw discounted scale so influence magnitudes are comparable across
    /// environments.
    q: [[f64; 4]; 2],
}

/// Closed-form value-influence estimator for the iterated prisoner's dilemma.
///
/// States are canonical (agent-0-perspective) memory-1 indices, as stored in
/// [`super::JointTransition`]; actions use 0 = cooperate, 1 = defect.
#[derive(Clone, Debug)]
pub struct IpdInfluenceEstimator {
    pub payoff: PayoffMatrix,
    pub gamma: f64,
    targets: Option<Targets>,
}

impl IpdInfluenceEstimator {
    pub fn new(payoff: PayoffMatrix, gamma: f64) -> Self {
        IpdInfluenceEstimator {
            payoff,
            gamma,
            targets: None,
        }
    }

    /// Re-estimate both policies from the buffer and refresh the Q tables.
    /// States never observed for an agent fall back to a uniform 0.5 prior.
    pub fn fit_targets(&mut self, buffer: &InfluenceReplayBuffer<u8>) -> Result<()> {
        if buffer.is_empty() {
            return Err(Error::usage("fitting influence targets from an empty buffer"));
        }
        let mut coop = [[0.0f64; N_STATES]; 2];
        let mut total = [[0.0f64; N_STATES]; 2];
        for t in buffer.episodes().flatten() {
            for agent in 0..2 {
                let s = perspective_state_index(t.state as usize, agent);
                total[agent][s] += 1.0;
                if t.actions[agent] == Action::Cooperate.index() {
                    coop[agent][s] += 1.0;
                }
            }
        }
        let probs: [[f64; N_STATES]; 2] = std::array::from_fn(|agent| {
            std::array::from_fn(|s| {
                if total[agent][s] > 0.0 {
                    coop[agent][s] / total[agent][s]
                } else {
                    0.5
                }
            })
        });
        self.set_target_policies(probs);
        Ok(())
    }

    /// Install explicit policy estimates (used by tests and diagnostics; the
    /// normal path is [`IpdInfluenceEstimator::fit_targets`]).
    pub fn set_target_policies(&mut self, probs: [[f64; N_STATES]; 2]) {
        let p0 = Memory1Policy::from_probs(probs[0]);
        let p1 = Memory1Policy::from_probs(probs[1]);
        let sol = solve_game(&p0.logits, &p1.logits, &self.payoff, self.gamma);
        // Undo the solver's per-round normalization: influence values live on
        // the discounted-sum scale, like the sampled estimator's targets.
        let scale = 1.0 / (1.0 - self.gamma);
        self.targets = Some(Targets {
            probs,
            q: sol.state_values.map(|row| row.map(|v| v * scale)),
        });
    }

    pub fn target_policies(&self) -> Option<[[f64; N_STATES]; 2]> {
        self.targets.as_ref().map(|t| t.probs)
    }

    /// The target Q table for player `j`, indexed by canonical outcome —
    /// exposed so tests can compare it against the exact solution.
    pub fn target_q(&self, j: usize) -> Option<[f64; 4]> {
        self.targets.as_ref().map(|t| t.q[j])
    }

    /// One-step value influence of agent `i` on agent `j` at a canonical
    /// state and joint action, using the stale target estimates. `i == j`
    /// gives the counterfactual advantage of `j`'s own action.
    pub fn value_influence(&self, state: u8, actions: [usize; 2], i: usize, j: usize) -> Result<f64> {
        let t = self
            .targets
            .as_ref()
            .ok_or_else(|| Error::usage("value influence queried before any target fit"))?;
        let q = &t.q[j];
        let joint = q[outcome_index(
            Action::from_index(actions[0]),
            Action::from_index(actions[1]),
        )];
        // Marginalize agent i's action under its estimated policy in the
        // state as i perceives it.
        let p_coop = t.probs[i][perspective_state_index(state as usize, i)];
        let mut with = actions;
        with[i] = Action::Cooperate.index();
        let o_coop = outcome_index(Action::from_index(with[0]), Action::from_index(with[1]));
        with[i] = Action::Defect.index();
        let o_defect = outcome_index(Action::from_index(with[0]), Action::from_index(with[1]));
        let baseline = p_coop * q[o_coop] + (1.0 - p_coop) * q[o_defect];
        Ok(joint - baseline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::JointTransition;
    use crate::matrix_game::{exact_return, GameSolution};

    const GAMMA: f64 = 0.96;

    fn estimator() -> IpdInfluenceEstimator {
        IpdInfluenceEstimator::new(PayoffMatrix::default(), GAMMA)
    }

    /// Exact tabular VI computed independently from a full game solution.
    fn exact_vi(
        sol: &GameSolution<f64>,
        probs: &[[f64; N_STATES]; 2],
        state: usize,
        actions: [usize; 2],
        i: usize,
        j: usize,
    ) -> f64 {
        let q = |a: [usize; 2]| {
            sol.q(
                j,
                Action::from_index(a[0]),
                Action::from_index(a[1]),
            )
        };
        let p = probs[i][perspective_state_index(state, i)];
        let mut c = actions;
        c[i] = 0;
        let mut d = actions;
        d[i] = 1;
        q(actions) - (p * q(c) + (1.0 - p) * q(d))
    }

    #[test]
    fn matches_exact_vi_when_estimates_equal_truth() {
        let probs = [
            [0.7, 0.9, 0.2, 0.6, 0.1],
            [0.4, 0.8, 0.5, 0.3, 0.2],
        ];
        let mut est = estimator();
        est.set_target_policies(probs);
        let t0 = Memory1Policy::from_probs(probs[0]);
        let t1 = Memory1Policy::from_probs(probs[1]);
        let sol = solve_game(&t0.logits, &t1.logits, &PayoffMatrix::default(), GAMMA);
        for state in 0..N_STATES as u8 {
            for a0 in 0..2 {
                for a1 in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            let got = est.value_influence(state, [a0, a1], i, j).unwrap();
                            // The oracle solution is per-round normalized;
                            // estimates are on the discounted-sum scale.
                            let want = exact_vi(&sol, &probs, state as usize, [a0, a1], i, j)
                                / (1.0 - GAMMA);
                            assert!((got - want).abs() < 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn one_shot_game_recovers_payoff_differences() {
        // With gamma = 0 the Q table is just the payoff table. For an
        // opponent cooperating half the time, the joint outcome (C, C) means
        // the opponent spared us the sucker payoff: its influence on us is
        // (-1) - (0.5*(-1) + 0.5*(-3)) = +1.
        let mut est = IpdInfluenceEstimator::new(PayoffMatrix::default(), 0.0);
        est.set_target_policies([[0.5; N_STATES]; 2]);
        let vi = est.value_influence(0, [0, 0], 1, 0).unwrap();
        assert!((vi - 1.0).abs() < 1e-9);
        // A degenerate always-cooperate estimate makes cooperation the
        // certain default: observing it carries no influence.
        est.set_target_policies([[1.0 - 1e-15; N_STATES]; 2]);
        let vi = est.value_influence(0, [0, 0], 1, 0).unwrap();
        assert!(vi.abs() < 1e-9);
    }

    #[test]
    fn influence_is_zero_mean_under_the_influencers_policy() {
        let probs = [
            [0.3, 0.75, 0.1, 0.9, 0.55],
            [0.65, 0.25, 0.85, 0.4, 0.15],
        ];
        let mut est = estimator();
        est.set_target_policies(probs);
        for state in 0..N_STATES as u8 {
            for i in 0..2 {
                for j in 0..2 {
                    for other_action in 0..2 {
                        let p = probs[i][perspective_state_index(state as usize, i)];
                        let mut mean = 0.0;
                        for (ai, w) in [(0, p), (1, 1.0 - p)] {
                            let mut a = [other_action; 2];
                            a[i] = ai;
                            mean += w * est.value_influence(state, a, i, j).unwrap();
                        }
                        assert!(
                            mean.abs() < 1e-10,
                            "state {state} i {i} j {j}: mean {mean}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn self_influence_equals_counterfactual_advantage() {
        // With i = j the influence definition reduces to the counterfactual
        // advantage A_j(s, a) = Q_j(s, a) - sum_a' pi_j(a'|s) Q_j(s, a').
        let probs = [
            [0.6, 0.2, 0.8, 0.35, 0.45],
            [0.5, 0.7, 0.3, 0.9, 0.25],
        ];
        let mut est = estimator();
        est.set_target_policies(probs);
        let t0 = Memory1Policy::from_probs(probs[0]);
        let t1 = Memory1Policy::from_probs(probs[1]);
        let sol = solve_game(&t0.logits, &t1.logits, &PayoffMatrix::default(), GAMMA);
        for state in 0..N_STATES as u8 {
            for a0 in 0..2 {
                for a1 in 0..2 {
                    for j in 0..2 {
                        let got = est.value_influence(state, [a0, a1], j, j).unwrap();
                        let p = probs[j][perspective_state_index(state as usize, j)];
                        let q = |aj: usize| {
                            let mut a = [a0, a1];
                            a[j] = aj;
                            sol.q(j, Action::from_index(a[0]), Action::from_index(a[1]))
                        };
                        let taken = [a0, a1][j];
                        let adv = (q(taken) - (p * q(0) + (1.0 - p) * q(1))) / (1.0 - GAMMA);
                        assert!((got - adv).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn frequency_fit_recovers_observed_policies() {
        // Build a buffer by hand: agent 0 cooperates 3/4 of the time in the
        // start state; agent 1 always defects in DD (canonical state 4).
        let mut buf = InfluenceReplayBuffer::new(8);
        let mut ep = Vec::new();
        for k in 0..4 {
            ep.push(JointTransition {
                state: 0u8,
                actions: [usize::from(k == 0), 1],
                rewards: [0.0, 0.0],
            });
        }
        for _ in 0..3 {
            ep.push(JointTransition {
                state: 4u8, // DD is its own mirror image
                actions: [0, 1],
                rewards: [0.0, 0.0],
            });
        }
        buf.push_episode(ep);
        let mut est = estimator();
        est.fit_targets(&buf).unwrap();
        let probs = est.target_policies().unwrap();
        assert!((probs[0][0] - 0.75).abs() < 1e-12);
        assert_eq!(probs[1][4], 0.0, "agent 1 always defected in DD");
        // States with no observations fall back to the uniform prior.
        assert_eq!(probs[0][2], 0.5);
        assert_eq!(probs[1][1], 0.5);
    }

    #[test]
    fn unobserved_state_prior_gives_uniform_opponent_values() {
        // A buffer with only start-state visits: VI in unseen states must
        // match an estimator built directly on the 0.5 prior.
        let mut buf = InfluenceReplayBuffer::new(2);
        buf.push_episode(vec![JointTransition {
            state: 0u8,
            actions: [0, 0],
            rewards: [0.0, 0.0],
        }]);
        let mut fitted = estimator();
        fitted.fit_targets(&buf).unwrap();
        let mut uniform = estimator();
        let mut probs = [[0.5; N_STATES]; 2];
        probs[0][0] = 1.0;
        probs[1][0] = 1.0;
        uniform.set_target_policies(probs);
        for state in 1..N_STATES as u8 {
            for i in 0..2 {
                let a = est_actions();
                let got = fitted.value_influence(state, a, i, 1 - i).unwrap();
                let want = uniform.value_influence(state, a, i, 1 - i).unwrap();
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    fn est_actions() -> [usize; 2] {
        [0, 1]
    }

    #[test]
    fn queries_before_fitting_are_rejected() {
        let est = estimator();
        assert!(est.value_influence(0, [0, 0], 0, 1).is_err());
        let empty: InfluenceReplayBuffer<u8> = InfluenceReplayBuffer::new(1);
        let mut est = estimator();
        assert!(est.fit_targets(&empty).is_err());
    }

    #[test]
    fn targets_are_stale_until_refit() {
        let mut buf = InfluenceReplayBuffer::new(1);
        buf.push_episode(vec![JointTransition {
            state: 0u8,
            actions: [0, 0],
            rewards: [0.0, 0.0],
        }]);
        let mut est = estimator();
        est.fit_targets(&buf).unwrap();
        let before = est.value_influence(0, [0, 1], 1, 0).unwrap();
        // New, radically different experience does not move the estimate
        // until the next fit event.
        buf.push_episode(vec![JointTransition {
            state: 0u8,
            actions: [1, 1],
            rewards: [0.0, 0.0],
        }]);
        let after = est.value_influence(0, [0, 1], 1, 0).unwrap();
        assert_eq!(before, after);
        est.fit_targets(&buf).unwrap();
        let refit = est.value_influence(0, [0, 1], 1, 0).unwrap();
        assert_ne!(before, refit);
    }

    #[test]
    fn target_q_matches_exact_solution_of_estimated_policies() {
        let probs = [
            [0.8, 0.6, 0.4, 0.2, 0.5],
            [0.3, 0.9, 0.1, 0.7, 0.45],
        ];
        let mut est = estimator();
        est.set_target_policies(probs);
        let t0 = Memory1Policy::from_probs(probs[0]);
        let t1 = Memory1Policy::from_probs(probs[1]);
        let r = exact_return(&t0.logits, &t1.logits, &PayoffMatrix::default(), GAMMA);
        // Start-state expectation of target Q reproduces the exact return
        // once brought back to the per-round scale.
        for j in 0..2 {
            let q = est.target_q(j).unwrap();
            let p0 = probs[0][0];
            let p1 = probs[1][0];
            let mut v = 0.0;
            for (a0, w0) in [(0, p0), (1, 1.0 - p0)] {
                for (a1, w1) in [(0, p1), (1, 1.0 - p1)] {
                    v += w0
                        * w1
                        * q[outcome_index(Action::from_index(a0), Action::from_index(a1))];
                }
            }
            assert!((v * (1.0 - GAMMA) - r[j]).abs() < 1e-9);
        }
        // And probabilities survive the logit round-trip.
        let back = t0.coop_probs();
        for (a, b) in back.iter().zip(probs[0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
