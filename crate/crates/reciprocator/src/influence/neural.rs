//! Neural value-influence estimation for gridworld play.
//!
//! Four small networks per agent pair: for each influenced agent `j`, a
//! joint estimator `Q_j(s, a_0, a_1)` and a counterfactual estimator that
//! sees only `j`'s own action — the influencer's action is simply absent
//! from its input, so least-squares regression on the same experience
//! marginalizes it out under the data-generating policy. All estimators
//! regress toward truncated discounted Monte-Carlo returns-to-go, and the
//! influence queries always use the target copies frozen at the previous fit
//! event.

use rand::Rng;

use crate::error::{Error, Result};
use crate::influence::InfluenceReplayBuffer;
use crate::nn::{Adam, Mlp};

#[derive(Clone, Copy, Debug)]
pub struct NeuralInfluenceConfig {
    pub gamma: f64,
    /// Adam steps per fit event.
    pub epochs: usize,
    pub lr: f64,
    /// Width of the two hidden layers.
    pub hidden: usize,
    /// Transitions sampled (with replacement) per epoch; bounds fit cost
    /// independently of buffer size.
    pub samples_per_epoch: usize,
}

impl Default for NeuralInfluenceConfig {
    fn default() -> Self {
        NeuralInfluenceConfig {
            gamma: 0.99,
            epochs: 20,
            lr: 0.01,
            hidden: 32,
            samples_per_epoch: 2048,
        }
    }
}

/// Influence estimator over feature-vector states (see
/// [`NeuralInfluenceConfig`] for the fitting knobs).
#[derive(Clone, Debug)]
pub struct NeuralInfluence {
    pub cfg: NeuralInfluenceConfig,
    state_dim: usize,
    n_actions: usize,
    joint: [Mlp; 2],
    cf: [Mlp; 2],
    joint_opt: [Adam; 2],
    cf_opt: [Adam; 2],
    joint_tgt: Option<[Mlp; 2]>,
    cf_tgt: Option<[Mlp; 2]>,
}

impl NeuralInfluence {
    pub fn new<R: Rng>(state_dim: usize, n_actions: usize, cfg: NeuralInfluenceConfig, rng: &mut R) -> Self {
        let jdims = [state_dim + 2 * n_actions, cfg.hidden, cfg.hidden, 1];
        let cdims = [state_dim + n_actions, cfg.hidden, cfg.hidden, 1];
        let joint = [Mlp::new(&jdims, rng), Mlp::new(&jdims, rng)];
        let cf = [Mlp::new(&cdims, rng), Mlp::new(&cdims, rng)];
        let joint_opt = std::array::from_fn(|j| Adam::new(joint[j].params.len(), cfg.lr));
        let cf_opt = std::array::from_fn(|j| Adam::new(cf[j].params.len(), cfg.lr));
        NeuralInfluence {
            cfg,
            state_dim,
            n_actions,
            joint,
            cf,
            joint_opt,
            cf_opt,
            joint_tgt: None,
            cf_tgt: None,
        }
    }

    fn joint_input(&self, state: &[f64], actions: [usize; 2]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.state_dim + 2 * self.n_actions);
        x.extend_from_slice(state);
        for a in actions {
            let base = x.len();
            x.resize(base + self.n_actions, 0.0);
            x[base + a] = 1.0;
        }
        x
    }

    fn cf_input(&self, state: &[f64], own_action: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.state_dim + self.n_actions);
        x.extend_from_slice(state);
        let base = x.len();
        x.resize(base + self.n_actions, 0.0);
        x[base + own_action] = 1.0;
        x
    }

    /// Continue the live regression on fresh buffer samples, then freeze the
    /// result as the new target parameters.
    pub fn fit_targets<R: Rng>(
        &mut self,
        buffer: &InfluenceReplayBuffer<Vec<f64>>,
        rng: &mut R,
    ) -> Result<()> {
        if buffer.is_empty() {
            return Err(Error::usage("fitting influence targets from an empty buffer"));
        }
        // Flatten episodes into (transition index, return-to-go) pairs.
        let mut flat: Vec<(&super::JointTransition<Vec<f64>>, [f64; 2])> = Vec::new();
        for episode in buffer.episodes() {
            let start = flat.len();
            flat.extend(episode.iter().map(|t| (t, [0.0, 0.0])));
            let mut g = [0.0; 2];
            for (t, slot) in flat[start..].iter_mut().rev() {
                for j in 0..2 {
                    g[j] = t.rewards[j] + self.cfg.gamma * g[j];
                }
                *slot = g;
            }
        }
        let n = self.cfg.samples_per_epoch.min(flat.len()).max(1);
        for _ in 0..self.cfg.epochs {
            for _ in 0..n {
                let (t, g) = flat[rng.random_range(0..flat.len())];
                let scale = 1.0 / n as f64;
                let jin = self.joint_input(&t.state, t.actions);
                for j in 0..2 {
                    let cache = self.joint[j].forward_train(&jin);
                    let err = cache.output()[0] - g[j];
                    self.joint[j].backward(&cache, &[scale * err]);
                    let cin = self.cf_input(&t.state, t.actions[j]);
                    let cache = self.cf[j].forward_train(&cin);
                    let err = cache.output()[0] - g[j];
                    self.cf[j].backward(&cache, &[scale * err]);
                }
            }
            for j in 0..2 {
                self.joint_opt[j].step(&mut self.joint[j].params);
                self.cf_opt[j].step(&mut self.cf[j].params);
            }
        }
        self.joint_tgt = Some(self.joint.clone());
        self.cf_tgt = Some(self.cf.clone());
        Ok(())
    }

    /// One-step value influence of agent `i` on agent `j` (`i != j`), from
    /// the frozen target estimators.
    pub fn value_influence(&self, state: &[f64], actions: [usize; 2], i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Err(Error::usage(
                "neural estimators only cover cross-agent influence",
            ));
        }
        let (joint, cf) = match (&self.joint_tgt, &self.cf_tgt) {
            (Some(j), Some(c)) => (j, c),
            _ => return Err(Error::usage("value influence queried before any target fit")),
        };
        let q = joint[j].forward(&self.joint_input(state, actions))[0];
        let b = cf[j].forward(&self.cf_input(state, actions[j]))[0];
        Ok(q - b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::JointTransition;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn small_cfg(epochs: usize) -> NeuralInfluenceConfig {
        NeuralInfluenceConfig {
            gamma: 0.0,
            epochs,
            lr: 0.01,
            hidden: 8,
            samples_per_epoch: 16,
        }
    }

    #[test]
    fn constant_reward_regression_converges_to_the_return() {
        // One repeated transition with reward (1, 0) at gamma = 0: every
        // estimator for agent 0 must approach 1, and for agent 1 approach 0.
        let mut rng = StdRng::seed_from_u64(1);
        let mut est = NeuralInfluence::new(2, 2, small_cfg(1500), &mut rng);
        let mut buf = InfluenceReplayBuffer::new(1);
        buf.push_episode(vec![JointTransition {
            state: vec![1.0, -0.5],
            actions: [0, 1],
            rewards: [1.0, 0.0],
        }]);
        est.fit_targets(&buf, &mut rng).unwrap();
        let jin = est.joint_input(&[1.0, -0.5], [0, 1]);
        let q0 = est.joint_tgt.as_ref().unwrap()[0].forward(&jin)[0];
        let q1 = est.joint_tgt.as_ref().unwrap()[1].forward(&jin)[0];
        assert!((q0 - 1.0).abs() < 0.05, "q0 = {q0}");
        assert!(q1.abs() < 0.05, "q1 = {q1}");
        // The counterfactual estimator saw identical targets.
        let vi = est.value_influence(&[1.0, -0.5], [0, 1], 1, 0).unwrap();
        assert!(vi.abs() < 0.1, "vi = {vi}");
    }

    #[test]
    fn irrelevant_influencer_action_yields_zero_influence() {
        // Agent 0's reward depends only on its own action; agent 1's action
        // moves neither rewards nor (gamma = 0) anything else. The
        // counterfactual baseline then coincides with the joint estimate and
        // the measured influence of agent 1 on agent 0 vanishes.
        let mut rng = StdRng::seed_from_u64(2);
        let mut est = NeuralInfluence::new(1, 2, small_cfg(4000), &mut rng);
        let mut buf = InfluenceReplayBuffer::new(4);
        for _ in 0..4 {
            let episode = (0..32)
                .map(|_| {
                    let a0 = rng.random_range(0..2);
                    let a1 = rng.random_range(0..2);
                    JointTransition {
                        state: vec![1.0],
                        actions: [a0, a1],
                        rewards: [if a0 == 0 { 1.0 } else { 0.0 }, 0.0],
                    }
                })
                .collect();
            buf.push_episode(episode);
        }
        est.fit_targets(&buf, &mut rng).unwrap();
        for a0 in 0..2 {
            for a1 in 0..2 {
                let vi = est.value_influence(&[1.0], [a0, a1], 1, 0).unwrap();
                assert!(vi.abs() < 0.1, "vi({a0},{a1}) = {vi}");
            }
        }
        // Agent 0's own action, by contrast, is worth about one unit of
        // return to itself: the joint estimates must separate the actions.
        let jin_c = est.joint_input(&[1.0], [0, 0]);
        let jin_d = est.joint_input(&[1.0], [1, 0]);
        let tgt = &est.joint_tgt.as_ref().unwrap()[0];
        assert!((tgt.forward(&jin_c)[0] - tgt.forward(&jin_d)[0] - 1.0).abs() < 0.1);
    }

    #[test]
    fn queries_are_guarded() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut est = NeuralInfluence::new(1, 2, small_cfg(10), &mut rng);
        assert!(est.value_influence(&[0.0], [0, 0], 1, 0).is_err(), "unfitted");
        let empty: InfluenceReplayBuffer<Vec<f64>> = InfluenceReplayBuffer::new(1);
        assert!(est.fit_targets(&empty, &mut rng).is_err(), "empty buffer");
        let mut buf = InfluenceReplayBuffer::new(1);
        buf.push_episode(vec![JointTransition {
            state: vec![0.0],
            actions: [0, 0],
            rewards: [0.0, 0.0],
        }]);
        est.fit_targets(&buf, &mut rng).unwrap();
        assert!(est.value_influence(&[0.0], [0, 0], 0, 0).is_err(), "i == j");
        assert!(est.value_influence(&[0.0], [0, 0], 1, 0).is_ok());
    }

    #[test]
    fn values_are_stale_between_fit_events() {
        let mut rng = StdRng::seed_from_u64(4);
        let mut est = NeuralInfluence::new(1, 2, small_cfg(50), &mut rng);
        let mut buf = InfluenceReplayBuffer::new(2);
        buf.push_episode(vec![JointTransition {
            state: vec![1.0],
            actions: [0, 1],
            rewards: [1.0, -1.0],
        }]);
        est.fit_targets(&buf, &mut rng).unwrap();
        let before = est.value_influence(&[1.0], [0, 1], 1, 0).unwrap();
        buf.push_episode(vec![JointTransition {
            state: vec![1.0],
            actions: [1, 0],
            rewards: [-5.0, 5.0],
        }]);
        let after = est.value_influence(&[1.0], [0, 1], 1, 0).unwrap();
        assert_eq!(before, after, "targets frozen until the next fit");
        est.fit_targets(&buf, &mut rng).unwrap();
        let refit = est.value_influence(&[1.0], [0, 1], 1, 0).unwrap();
        assert_ne!(before, refit);
    }
}
