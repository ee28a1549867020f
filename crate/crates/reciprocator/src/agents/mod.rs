//! Agent kinds and their update rules.
//!
//! Analytic agents play the iterated prisoner's dilemma with explicit
//! memory-1 logits updated by closed-form gradients; rollout agents carry an
//! actor-critic network trained by PPO (see the training module). A
//! reciprocator is just a base learner whose episode rewards are augmented
//! with the intrinsic reciprocal reward before its ordinary update — the
//! learning rule itself never changes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::Error;
use crate::matrix_game::{
    exact_gradient, lola_gradient, Memory1Policy, PayoffMatrix, Scalar, N_STATES,
};
use crate::nn::{log_softmax, sample_from_logits, ActorCritic};

/// Every agent style the lab can field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentKind {
    NlAnalytic,
    LolaAnalytic,
    RcAnalytic,
    NlPpo,
    RcPpo,
}

impl AgentKind {
    /// Analytic kinds update closed-form logits; the rest train networks
    /// from rollouts.
    pub fn is_analytic(self) -> bool {
        matches!(
            self,
            AgentKind::NlAnalytic | AgentKind::LolaAnalytic | AgentKind::RcAnalytic
        )
    }

    /// Reciprocators add the influence-balance intrinsic reward.
    pub fn is_reciprocator(self) -> bool {
        matches!(self, AgentKind::RcAnalytic | AgentKind::RcPpo)
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::NlAnalytic => "NL-Analytic",
            AgentKind::LolaAnalytic => "LOLA-Analytic",
            AgentKind::RcAnalytic => "RC-Analytic",
            AgentKind::NlPpo => "NL-PPO",
            AgentKind::RcPpo => "RC-PPO",
        }
    }

    /// Short label used in tournament tables.
    pub fn short_name(self) -> &'static str {
        match self {
            AgentKind::NlAnalytic | AgentKind::NlPpo => "NL",
            AgentKind::LolaAnalytic => "LOLA",
            AgentKind::RcAnalytic | AgentKind::RcPpo => "RC",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "nl-analytic" => Ok(AgentKind::NlAnalytic),
            "lola-analytic" => Ok(AgentKind::LolaAnalytic),
            "rc-analytic" => Ok(AgentKind::RcAnalytic),
            "nl-ppo" => Ok(AgentKind::NlPpo),
            "rc-ppo" => Ok(AgentKind::RcPpo),
            other => Err(Error::config(format!(
                "unknown agent kind '{other}' (expected NL-Analytic, LOLA-Analytic, \
                 RC-Analytic, NL-PPO, or RC-PPO)"
            ))),
        }
    }
}

/// Draw from a standard normal via Box-Muller.
pub fn sample_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Memory-1 agent with closed-form updates.
#[derive(Clone, Debug)]
pub struct AnalyticAgent {
    pub kind: AgentKind,
    pub policy: Memory1Policy,
    pub lr: f64,
    /// Opponent step size assumed by the lookahead (LOLA) update.
    pub alpha_opp: f64,
}

impl AnalyticAgent {
    pub fn new(kind: AgentKind, policy: Memory1Policy, lr: f64, alpha_opp: f64) -> Self {
        debug_assert!(kind.is_analytic());
        AnalyticAgent {
            kind,
            policy,
            lr,
            alpha_opp,
        }
    }

    /// Random initial logits, standard normal scaled by `std`.
    pub fn init_policy<R: Rng>(std: f64, rng: &mut R) -> Memory1Policy {
        Memory1Policy::new(std::array::from_fn(|_| std * sample_normal(rng)))
    }

    /// Gradient of this agent's exact return with the opponent frozen.
    /// `role` is 0 when this agent is the row player.
    pub fn naive_gradient(
        &self,
        role: usize,
        opponent: &Memory1Policy,
        payoff: &PayoffMatrix,
        gamma: f64,
    ) -> [f64; N_STATES] {
        if role == 0 {
            exact_gradient(&self.policy.logits, &opponent.logits, payoff, gamma, 0)
        } else {
            exact_gradient(&opponent.logits, &self.policy.logits, payoff, gamma, 1)
        }
    }

    /// Gradient through one assumed opponent learning step.
    pub fn lookahead_gradient(
        &self,
        role: usize,
        opponent: &Memory1Policy,
        payoff: &PayoffMatrix,
        gamma: f64,
    ) -> [f64; N_STATES] {
        if role == 0 {
            lola_gradient(
                &self.policy.logits,
                &opponent.logits,
                payoff,
                gamma,
                self.alpha_opp,
            )
        } else {
            lola_gradient(
                &self.policy.logits,
                &opponent.logits,
                &payoff.swapped(),
                gamma,
                self.alpha_opp,
            )
        }
    }

    /// Ascend along `grad` with this agent's learning rate.
    pub fn apply_gradient(&mut self, grad: [f64; N_STATES]) {
        for (l, g) in self.policy.logits.iter_mut().zip(grad) {
            *l += self.lr * g;
        }
    }
}

/// One observed decision point for the analytic reciprocal bonus: the state
/// as the reciprocator indexes it, the balance before the step, and the
/// (stale) influence the reciprocator would exert on the opponent with each
/// of its two actions.
#[derive(Clone, Copy, Debug)]
pub struct BonusSample {
    pub own_state: usize,
    pub balance_before: f64,
    pub vi_if_cooperate: f64,
    pub vi_if_defect: f64,
}

/// Gradient of the expected-action intrinsic bonus
///
/// ```text
/// mean over samples of  w * B(t-1) * [ pi(C|s) VI_C + pi(D|s) VI_D ]
/// ```
///
/// with the VI values and balances held constant. Only the policy
/// probabilities are differentiated, so each sample contributes to exactly
/// one logit.
pub fn reciprocal_bonus_gradient(
    policy: &Memory1Policy,
    weight: f64,
    samples: &[BonusSample],
) -> [f64; N_STATES] {
    let mut grad = [0.0; N_STATES];
    if samples.is_empty() {
        return grad;
    }
    let scale = weight / samples.len() as f64;
    for s in samples {
        let p = policy.logits[s.own_state].sigmoid();
        let dsig = p * (1.0 - p);
        grad[s.own_state] += scale * s.balance_before * dsig * (s.vi_if_cooperate - s.vi_if_defect);
    }
    grad
}

/// Rollout agent: actor-critic network plus sampling.
#[derive(Clone, Debug)]
pub struct PpoAgent {
    pub kind: AgentKind,
    pub net: ActorCritic,
}

/// One sampled decision.
pub struct ActOut {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub h_next: Vec<f64>,
}

impl PpoAgent {
    pub fn new(kind: AgentKind, net: ActorCritic) -> Self {
        debug_assert!(!kind.is_analytic());
        PpoAgent { kind, net }
    }

    pub fn act<R: Rng>(&self, obs: &[f64], h: &[f64], rng: &mut R) -> ActOut {
        let (out, _) = self.net.step(obs, h);
        let action = sample_from_logits(&out.logits, rng);
        let log_prob = log_softmax(&out.logits)[action];
        ActOut {
            action,
            log_prob,
            value: out.value,
            h_next: out.h_next,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_game::{exact_return, Action};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    const GAMMA: f64 = 0.96;

    #[test]
    fn kind_names_round_trip() {
        for kind in [
            AgentKind::NlAnalytic,
            AgentKind::LolaAnalytic,
            AgentKind::RcAnalytic,
            AgentKind::NlPpo,
            AgentKind::RcPpo,
        ] {
            assert_eq!(kind.name().parse::<AgentKind>().unwrap(), kind);
        }
        assert!("nl-ppo".parse::<AgentKind>().is_ok(), "case-insensitive");
        assert!("Q-LEARNER".parse::<AgentKind>().is_err());
    }

    #[test]
    fn saturated_policy_is_a_fixed_point_of_the_naive_update() {
        let payoff = PayoffMatrix::default();
        let mut agent = AnalyticAgent::new(
            AgentKind::NlAnalytic,
            Memory1Policy::always(Action::Defect),
            1.0,
            0.0,
        );
        let before = agent.policy.logits;
        let g = agent.naive_gradient(0, &Memory1Policy::always(Action::Defect), &payoff, GAMMA);
        agent.apply_gradient(g);
        for (a, b) in agent.policy.logits.iter().zip(before) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn naive_update_increases_own_return() {
        let mut rng = StdRng::seed_from_u64(1);
        let payoff = PayoffMatrix::default();
        for role in 0..2 {
            let mut agent = AnalyticAgent::new(
                AgentKind::NlAnalytic,
                AnalyticAgent::init_policy(0.5, &mut rng),
                0.1,
                0.0,
            );
            let opponent = AnalyticAgent::init_policy(0.5, &mut rng);
            let own_return = |pol: &Memory1Policy| {
                let r = if role == 0 {
                    exact_return(&pol.logits, &opponent.logits, &payoff, GAMMA)
                } else {
                    exact_return(&opponent.logits, &pol.logits, &payoff, GAMMA)
                };
                r[role]
            };
            let before = own_return(&agent.policy);
            let g = agent.naive_gradient(role, &opponent, &payoff, GAMMA);
            agent.apply_gradient(g);
            assert!(own_return(&agent.policy) > before, "role {role}");
        }
    }

    #[test]
    fn lookahead_with_zero_opponent_step_equals_naive() {
        let mut rng = StdRng::seed_from_u64(2);
        let payoff = PayoffMatrix::default();
        let agent = AnalyticAgent::new(
            AgentKind::LolaAnalytic,
            AnalyticAgent::init_policy(0.8, &mut rng),
            0.1,
            0.0,
        );
        let opponent = AnalyticAgent::init_policy(0.8, &mut rng);
        for role in 0..2 {
            let naive = agent.naive_gradient(role, &opponent, &payoff, GAMMA);
            let lola = agent.lookahead_gradient(role, &opponent, &payoff, GAMMA);
            for (a, b) in naive.iter().zip(lola) {
                assert!((a - b).abs() < 1e-12, "role {role}");
            }
        }
    }

    #[test]
    fn column_role_gradients_mirror_the_row_role() {
        // Evaluating from either seat of a symmetric game must give the same
        // gradient for the same pair of policies.
        let mut rng = StdRng::seed_from_u64(3);
        let payoff = PayoffMatrix::default();
        let agent = AnalyticAgent::new(
            AgentKind::LolaAnalytic,
            AnalyticAgent::init_policy(0.6, &mut rng),
            0.1,
            0.7,
        );
        let opponent = AnalyticAgent::init_policy(0.6, &mut rng);
        for use_lookahead in [false, true] {
            let (row, col) = if use_lookahead {
                (
                    agent.lookahead_gradient(0, &opponent, &payoff, GAMMA),
                    agent.lookahead_gradient(1, &opponent, &payoff, GAMMA),
                )
            } else {
                (
                    agent.naive_gradient(0, &opponent, &payoff, GAMMA),
                    agent.naive_gradient(1, &opponent, &payoff, GAMMA),
                )
            };
            for (a, b) in row.iter().zip(col) {
                assert!((a - b).abs() < 1e-12, "lookahead {use_lookahead}");
            }
        }
    }

    #[test]
    fn bonus_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(4);
        let policy = AnalyticAgent::init_policy(0.7, &mut rng);
        let weight = 5.0;
        let samples: Vec<BonusSample> = (0..40)
            .map(|_| BonusSample {
                own_state: rng.random_range(0..N_STATES),
                balance_before: rng.random_range(-2.0..2.0),
                vi_if_cooperate: rng.random_range(-1.0..1.0),
                vi_if_defect: rng.random_range(-1.0..1.0),
            })
            .collect();
        let bonus = |logits: &[f64; N_STATES]| -> f64 {
            samples
                .iter()
                .map(|s| {
                    let p = logits[s.own_state].sigmoid();
                    weight
                        * s.balance_before
                        * (p * s.vi_if_cooperate + (1.0 - p) * s.vi_if_defect)
                })
                .sum::<f64>()
                / samples.len() as f64
        };
        let grad = reciprocal_bonus_gradient(&policy, weight, &samples);
        let h = 1e-6;
        for k in 0..N_STATES {
            let mut hi = policy.logits;
            let mut lo = policy.logits;
            hi[k] += h;
            lo[k] -= h;
            let fd = (bonus(&hi) - bonus(&lo)) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-6, "logit {k}: {} vs {fd}", grad[k]);
        }
        assert_eq!(
            reciprocal_bonus_gradient(&policy, weight, &[]),
            [0.0; N_STATES],
            "no samples, no gradient"
        );
    }

    #[test]
    fn act_respects_the_policy_distribution() {
        let mut rng = StdRng::seed_from_u64(5);
        let net = ActorCritic::feedforward(3, &[4], 4, &mut rng);
        let agent = PpoAgent::new(AgentKind::NlPpo, net);
        let obs = [0.2, -0.4, 0.9];
        // Log-prob reported for each sampled action matches the softmax of
        // the network's own logits.
        let (out, _) = agent.net.step(&obs, &[]);
        let lps = log_softmax(&out.logits);
        let mut counts = [0usize; 4];
        let n = 40_000;
        for _ in 0..n {
            let a = agent.act(&obs, &[], &mut rng);
            assert!((a.log_prob - lps[a.action]).abs() < 1e-12);
            counts[a.action] += 1;
        }
        for (k, lp) in lps.iter().enumerate() {
            let p = lp.exp();
            let freq = counts[k] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() < 4.0 * sigma + 1e-4,
                "action {k}: freq {freq} vs p {p}"
            );
        }
    }
}
