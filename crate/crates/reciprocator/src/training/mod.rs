//! PPO-Clip training and the per-episode match loop.
//!
//! One episode follows a fixed order: collect a batch of rollouts, append
//! the joint experience to the influence replay buffer, refresh influence
//! targets at period boundaries, annotate reciprocators' episodes with
//! intrinsic rewards, compute advantages over the combined rewards, then
//! update every learner simultaneously from the same batch. Policy
//! trajectories are discarded each episode; influence experience persists.

mod driver;

pub use driver::{
    train_analytic_match, train_coins_match, train_ipd_rollout_match, AnalyticMatchConfig,
    CoinsMatchConfig, EarlyStop, IpdRolloutMatchConfig, MatchRngs, MetricsRow,
};

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, entropy, log_softmax, Adam, StepCache};
use crate::agents::PpoAgent;

/// PPO hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct PpoConfig {
    pub lr: f64,
    /// Probability-ratio clip radius.
    pub clip: f64,
    /// Optimization epochs per batch.
    pub epochs: usize,
    pub gamma: f64,
    pub entropy_coef: f64,
    /// Critic loss weight and global gradient-norm ceiling: conventional
    /// stabilizers, not tied to any reported setting.
    pub value_coef: f64,
    pub max_grad_norm: f64,
}

impl PpoConfig {
    /// Settings for the iterated prisoner's dilemma rollouts.
    pub fn ipd() -> Self {
        PpoConfig {
            lr: 0.005,
            clip: 0.1,
            epochs: 10,
            gamma: 0.96,
            entropy_coef: 0.02,
            value_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }

    /// Settings for the coin-collection gridworld.
    pub fn coins() -> Self {
        PpoConfig {
            lr: 0.005,
            clip: 0.15,
            epochs: 40,
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }
}

/// One agent's view of a collected batch: `lanes` episodes of exactly
/// `horizon` steps each. Intrinsic rewards start at zero and are filled in
/// by annotation for reciprocators.
#[derive(Clone, Debug)]
pub struct TrajectoryBatch {
    pub horizon: usize,
    /// `obs[lane][t]`, and likewise for the rest.
    pub obs: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<usize>>,
    pub log_probs: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub intrinsic: Vec<Vec<f64>>,
}

impl TrajectoryBatch {
    pub fn new(lanes: usize, horizon: usize) -> Self {
        TrajectoryBatch {
            horizon,
            obs: vec![Vec::with_capacity(horizon); lanes],
            actions: vec![Vec::with_capacity(horizon); lanes],
            log_probs: vec![Vec::with_capacity(horizon); lanes],
            values: vec![Vec::with_capacity(horizon); lanes],
            rewards: vec![Vec::with_capacity(horizon); lanes],
            intrinsic: vec![vec![0.0; horizon]; lanes],
        }
    }

    pub fn lanes(&self) -> usize {
        self.obs.len()
    }

    pub fn push_step(&mut self, lane: usize, obs: Vec<f64>, action: usize, log_prob: f64, value: f64) {
        self.obs[lane].push(obs);
        self.actions[lane].push(action);
        self.log_probs[lane].push(log_prob);
        self.values[lane].push(value);
    }

    /// Mean per-lane sum of extrinsic rewards.
    pub fn mean_extrinsic_total(&self) -> f64 {
        let lanes = self.lanes() as f64;
        self.rewards.iter().map(|l| l.iter().sum::<f64>()).sum::<f64>() / lanes
    }

    /// Mean per-lane sum of intrinsic rewards.
    pub fn mean_intrinsic_total(&self) -> f64 {
        let lanes = self.lanes() as f64;
        self.intrinsic.iter().map(|l| l.iter().sum::<f64>()).sum::<f64>() / lanes
    }
}

/// Per-step advantages and critic regression targets.
pub struct Advantages {
    /// Normalized advantages, `[lane][t]`.
    pub adv: Vec<Vec<f64>>,
    /// Discounted returns-to-go over combined rewards, `[lane][t]`.
    pub returns: Vec<Vec<f64>>,
}

/// Discounted return-to-go minus the stored value estimate, normalized to
/// zero mean and unit variance across the whole batch. Rewards are the sum
/// of extrinsic and intrinsic components.
pub fn compute_advantages(batch: &TrajectoryBatch, gamma: f64) -> Advantages {
    let mut adv = Vec::with_capacity(batch.lanes());
    let mut returns = Vec::with_capacity(batch.lanes());
    for lane in 0..batch.lanes() {
        let t_len = batch.rewards[lane].len();
        let mut lane_ret = vec![0.0; t_len];
        let mut acc = 0.0;
        for t in (0..t_len).rev() {
            acc = batch.rewards[lane][t] + batch.intrinsic[lane][t] + gamma * acc;
            lane_ret[t] = acc;
        }
        let lane_adv: Vec<f64> = lane_ret
            .iter()
            .zip(&batch.values[lane])
            .map(|(r, v)| r - v)
            .collect();
        returns.push(lane_ret);
        adv.push(lane_adv);
    }
    // Batch normalization of advantages.
    let n: usize = adv.iter().map(|l| l.len()).sum();
    let mean = adv.iter().flatten().sum::<f64>() / n as f64;
    let var = adv.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    for lane in adv.iter_mut() {
        for a in lane.iter_mut() {
            *a = (*a - mean) / std;
        }
    }
    Advantages { adv, returns }
}

/// K epochs of clipped-surrogate optimization on one agent's batch.
///
/// Each epoch re-runs the network over every stored sequence (recurrent
/// policies are unrolled from a zero hidden state, exactly as collected) and
/// descends the combined policy, value, and entropy loss.
pub fn ppo_update(
    agent: &mut PpoAgent,
    opt: &mut Adam,
    batch: &TrajectoryBatch,
    advantages: &Advantages,
    cfg: &PpoConfig,
) -> Result<()> {
    let n_samples: usize = batch.obs.iter().map(|l| l.len()).sum();
    if n_samples == 0 {
        return Err(Error::training("PPO update on an empty batch"));
    }
    let scale = 1.0 / n_samples as f64;
    for _ in 0..cfg.epochs {
        let mut loss_check = 0.0;
        for lane in 0..batch.lanes() {
            let steps = batch.obs[lane].len();
            // Forward pass through the whole sequence, keeping caches.
            let mut caches: Vec<StepCache> = Vec::with_capacity(steps);
            let mut douts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(steps);
            let mut h = agent.net.initial_hidden();
            for t in 0..steps {
                let (out, cache) = agent.net.step(&batch.obs[lane][t], &h);
                h = out.h_next;
                let lps = log_softmax(&out.logits);
                let probs: Vec<f64> = lps.iter().map(|lp| lp.exp()).collect();
                let a = batch.actions[lane][t];
                let ratio = (lps[a] - batch.log_probs[lane][t]).exp();
                let adv = advantages.adv[lane][t];
                // Clipped surrogate: the gradient flows only while the ratio
                // is inside the trust region or moving back toward it.
                let unclipped = ratio * adv;
                let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
                let active = unclipped <= clipped;
                let dlp = if active { -ratio * adv * scale } else { 0.0 };
                let ent = entropy(&out.logits);
                let verr = out.value - advantages.returns[lane][t];
                loss_check += scale
                    * (-unclipped.min(clipped) + cfg.value_coef * verr * verr
                        - cfg.entropy_coef * ent);
                // d(-lp[a])/dlogits plus the entropy bonus gradient.
                let mut dlogits = vec![0.0; probs.len()];
                for k in 0..probs.len() {
                    let indicator = if k == a { 1.0 } else { 0.0 };
                    dlogits[k] = dlp * (indicator - probs[k])
                        + cfg.entropy_coef * scale * probs[k] * (lps[k] + ent);
                }
                let dvalue = 2.0 * cfg.value_coef * verr * scale;
                caches.push(cache);
                douts.push((dlogits, dvalue));
            }
            if !loss_check.is_finite() {
                return Err(Error::training(format!(
                    "non-finite PPO loss ({loss_check}) in lane {lane}"
                )));
            }
            let mut dh = vec![0.0; agent.net.hidden_dim()];
            for t in (0..steps).rev() {
                let (dlogits, dvalue) = &douts[t];
                dh = agent.net.backward_step(&caches[t], dlogits, *dvalue, &dh);
            }
        }
        clip_grad_norm(&mut agent.net.params.g, cfg.max_grad_norm);
        opt.step(&mut agent.net.params);
    }
    Ok(())
}
