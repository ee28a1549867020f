//! Episode loops for the three match modes: exact-gradient matrix play,
//! sampled matrix play with PPO, and the coin-collection gridworld.
//!
//! All three follow the same per-episode order — collect, store, refit at
//! period boundaries, annotate intrinsic rewards, update everyone from the
//! same batch — and differ only in how policies are represented and how
//! influence is estimated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{
    reciprocal_bonus_gradient, AgentKind, AnalyticAgent, BonusSample, PpoAgent,
};
use crate::env::{CoinsEnv, IpdEnv, COINS_ACTIONS};
use crate::error::{Error, Result};
use crate::influence::{
    InfluenceLedger, InfluenceReplayBuffer, IpdInfluenceEstimator, JointTransition,
    NeuralInfluence, NeuralInfluenceConfig,
};
use crate::matrix_game::{
    exact_return, perspective_state_index, Action, PayoffMatrix, N_STATES,
};
use crate::nn::{clip_grad_norm, ActorCritic, Adam};
use crate::training::{compute_advantages, ppo_update, PpoConfig, TrajectoryBatch};

/// One emitted metrics record per training episode. Environment-specific
/// fields are `None` where they do not apply.
///
/// Scales differ by mode and are chosen to match how each result is usually
/// quoted: exact matrix play reports the discount-normalized per-step return,
/// sampled matrix play reports mean reward per step, and the gridworld
/// reports totals per 32-step episode. A simultaneous grab in the gridworld
/// counts as two pickups, one per collector.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    /// Per-agent extrinsic return on the mode's reporting scale.
    pub extrinsic: [f64; 2],
    /// Per-agent intrinsic (reciprocal) reward on the same scale.
    pub intrinsic: [f64; 2],
    /// Mean estimated influence exerted by each agent on the other this
    /// episode (index = exerting agent); 0 when influence is not estimated.
    pub mean_vi: [f64; 2],
    /// Fraction of cooperate actions across both agents (matrix modes).
    pub coop_rate: Option<f64>,
    /// Fraction of pickups matching the collector's color (gridworld).
    pub own_coin_frac: Option<f64>,
    /// Mean pickups per lane per episode (gridworld).
    pub total_coins: Option<f64>,
    /// Mean |B| across lanes and reciprocator ledgers; 0 when no ledger.
    pub mean_abs_balance: f64,
}

impl MetricsRow {
    /// True when every numeric field is finite.
    pub fn is_finite(&self) -> bool {
        let opts = [self.coop_rate, self.own_coin_frac, self.total_coins];
        self.extrinsic.iter().all(|x| x.is_finite())
            && self.intrinsic.iter().all(|x| x.is_finite())
            && self.mean_vi.iter().all(|x| x.is_finite())
            && self.mean_abs_balance.is_finite()
            && opts.iter().flatten().all(|x| x.is_finite())
    }
}

/// FNV-1a hash of a stream name; stable across runs and platforms.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Named counter-based RNG streams derived from one master seed, so each
/// component draws an independent, reproducible sequence.
pub struct MatchRngs {
    pub env: ChaCha8Rng,
    pub agents: [ChaCha8Rng; 2],
    pub estimator: ChaCha8Rng,
}

impl MatchRngs {
    pub fn from_seed(seed: u64) -> Self {
        let stream = |name: &str| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_id(name));
            rng
        };
        MatchRngs {
            env: stream("env"),
            agents: [stream("agent0"), stream("agent1")],
            estimator: stream("estimator"),
        }
    }
}

fn validate_kinds(kinds: [AgentKind; 2], analytic: bool, mode: &str) -> Result<()> {
    for k in kinds {
        if k.is_analytic() != analytic {
            return Err(Error::config(format!(
                "agent kind {k} cannot play in {mode} mode"
            )));
        }
    }
    Ok(())
}

/// Applies one episode's reciprocal-reward annotation to the PPO batches and
/// returns the episode's mean influence in each direction (index = exerting
/// agent).
///
/// For every step the pairwise influences are computed once from the frozen
/// targets; each reciprocator's intrinsic reward reads its balance before
/// that same step's balance update.
fn annotate_ppo_batches<S>(
    vi: &impl Fn(&S, [usize; 2], usize, usize) -> Result<f64>,
    episodes: &[Vec<JointTransition<S>>],
    ledgers: &mut [Option<InfluenceLedger>; 2],
    batches: &mut [TrajectoryBatch; 2],
) -> Result<[f64; 2]> {
    if ledgers.iter().all(Option::is_none) {
        return Ok([0.0; 2]);
    }
    let mut vi_sums = [0.0; 2];
    let mut steps = 0usize;
    for (lane, episode) in episodes.iter().enumerate() {
        for (t, tr) in episode.iter().enumerate() {
            let vi01 = vi(&tr.state, tr.actions, 0, 1)?;
            let vi10 = vi(&tr.state, tr.actions, 1, 0)?;
            vi_sums[0] += vi01;
            vi_sums[1] += vi10;
            steps += 1;
            for i in 0..2 {
                if let Some(ledger) = ledgers[i].as_mut() {
                    let (exerted, received) = if i == 0 { (vi01, vi10) } else { (vi10, vi01) };
                    batches[i].intrinsic[lane][t] = ledger.reciprocal_reward(lane, exerted);
                    ledger.update_balance(lane, received, exerted);
                }
            }
        }
    }
    Ok(vi_sums.map(|s| if steps == 0 { 0.0 } else { s / steps as f64 }))
}

/// Clears both reciprocator ledgers when the per-episode reset ablation is
/// enabled; the default keeps balances running across episodes.
fn maybe_reset_balances(reset: bool, ledgers: &mut [Option<InfluenceLedger>; 2]) {
    if reset {
        for ledger in ledgers.iter_mut().flatten() {
            ledger.reset();
        }
    }
}

fn mean_abs_balance(ledgers: &[Option<InfluenceLedger>; 2]) -> f64 {
    let present: Vec<f64> = ledgers
        .iter()
        .flatten()
        .map(InfluenceLedger::mean_abs_balance)
        .collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Exact-gradient matrix play
// ---------------------------------------------------------------------------

/// Settings for a memory-1 match driven by closed-form gradients. Influence
/// (for reciprocators) is still estimated from sampled play.
#[derive(Clone, Debug)]
pub struct AnalyticMatchConfig {
    pub kinds: [AgentKind; 2],
    pub episodes: usize,
    pub lanes: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Policy step size applied to the exact gradient.
    pub lr: f64,
    /// Opponent step size assumed by lookahead learners.
    pub alpha_opp: f64,
    /// Scale of the random initial logits.
    pub init_std: f64,
    /// Per-update cap on each agent's gradient norm. Plays the role the
    /// ratio clip plays for the PPO modes: large intrinsic bonuses steer the
    /// direction of an update without blowing up its size.
    pub max_grad_norm: f64,
    /// Reciprocal-reward weight w.
    pub rr_weight: f64,
    /// Influence replay capacity in collection rounds (each holds `lanes`
    /// episodes).
    pub replay_rounds: usize,
    /// Episodes between influence-target refits.
    pub refit_period: usize,
    /// Clear reciprocal balances at the start of every episode (ablation of
    /// the default carry-across-episodes behavior).
    pub reset_balances: bool,
    /// Saturation bound on balance magnitudes (infinite to disable). Bounds
    /// how much influence debt can pile up, so the reciprocal drive reacts to
    /// the recent flow instead of an old integral.
    pub max_balance: f64,
    /// Opening balance installed at construction and by every per-episode
    /// reset. A positive value extends goodwill that only pays off against
    /// another reciprocator; zero by default.
    pub reset_balance: f64,
    pub payoff: PayoffMatrix,
}

impl Default for AnalyticMatchConfig {
    fn default() -> Self {
        AnalyticMatchConfig {
            kinds: [AgentKind::NlAnalytic; 2],
            episodes: 500,
            lanes: 64,
            horizon: 32,
            gamma: 0.96,
            lr: 1.0,
            alpha_opp: 1.0,
            init_std: 1.0,
            max_grad_norm: 1.0,
            rr_weight: 5.0,
            replay_rounds: 5,
            refit_period: 10,
            reset_balances: false,
            max_balance: f64::INFINITY,
            reset_balance: 0.0,
            payoff: PayoffMatrix::default(),
        }
    }
}

/// Runs one memory-1 match and returns the per-episode metrics stream.
///
/// Each episode: sample a batch of games for the influence buffer and the
/// behavioral metrics, refit influence targets at period boundaries, walk
/// the reciprocators' ledgers through the fresh episodes, then compute both
/// agents' gradients from the same pre-update policies and apply them
/// together.
pub fn train_analytic_match(
    cfg: &AnalyticMatchConfig,
    rngs: &mut MatchRngs,
) -> Result<Vec<MetricsRow>> {
    validate_kinds(cfg.kinds, true, "exact-gradient")?;
    if cfg.episodes == 0 || cfg.lanes == 0 || cfg.horizon == 0 {
        return Err(Error::config("episodes, lanes, and horizon must be positive"));
    }
    let mut agents: [AnalyticAgent; 2] = std::array::from_fn(|i| {
        let policy = AnalyticAgent::init_policy(cfg.init_std, &mut rngs.agents[i]);
        AnalyticAgent::new(cfg.kinds[i], policy, cfg.lr, cfg.alpha_opp)
    });
    let mut env = IpdEnv::new(cfg.lanes, cfg.horizon, cfg.payoff);
    let mut buffer = InfluenceReplayBuffer::new(cfg.replay_rounds * cfg.lanes);
    let mut estimator = IpdInfluenceEstimator::new(cfg.payoff, cfg.gamma);
    // Influence values live on the discounted-sum scale while this mode's
    // objective is the per-round normalized return, so the weight picks up
    // the same normalization to keep the two commensurate.
    let bonus_weight = cfg.rr_weight * (1.0 - cfg.gamma);
    let mut ledgers: [Option<InfluenceLedger>; 2] = std::array::from_fn(|i| {
        cfg.kinds[i]
            .is_reciprocator()
            .then(|| {
                InfluenceLedger::new(cfg.lanes, bonus_weight)
                    .with_max_balance(cfg.max_balance)
                    .with_reset_balance(cfg.reset_balance)
            })
    });
    let any_rc = ledgers.iter().any(Option::is_some);

    let mut rows = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        maybe_reset_balances(cfg.reset_balances, &mut ledgers);
        // Collection: sample one fixed-length game per lane.
        env.reset();
        let mut lanes: Vec<Vec<JointTransition<u8>>> =
            vec![Vec::with_capacity(cfg.horizon); cfg.lanes];
        let mut coop_actions = 0usize;
        let probs = [agents[0].policy.coop_probs(), agents[1].policy.coop_probs()];
        for _ in 0..cfg.horizon {
            let mut joint = Vec::with_capacity(cfg.lanes);
            let mut states = Vec::with_capacity(cfg.lanes);
            for lane in 0..cfg.lanes {
                states.push(env.state_index(lane, 0) as u8);
                let acts: [Action; 2] = std::array::from_fn(|i| {
                    let p = probs[i][env.state_index(lane, i)];
                    if rngs.agents[i].random::<f64>() < p {
                        Action::Cooperate
                    } else {
                        Action::Defect
                    }
                });
                coop_actions += acts.iter().filter(|a| **a == Action::Cooperate).count();
                joint.push(acts);
            }
            let rewards = env.step(&joint)?;
            for lane in 0..cfg.lanes {
                lanes[lane].push(JointTransition {
                    state: states[lane],
                    actions: [joint[lane][0].index(), joint[lane][1].index()],
                    rewards: rewards[lane],
                });
            }
        }
        for episode_transitions in &lanes {
            buffer.push_episode(episode_transitions.clone());
        }

        // Influence targets, intrinsic rewards, and bonus decision points.
        if any_rc && episode % cfg.refit_period == 0 {
            estimator.fit_targets(&buffer)?;
        }
        let mut intrinsic = [0.0; 2];
        let mut vi_sums = [0.0; 2];
        let mut bonus: [Vec<BonusSample>; 2] = [Vec::new(), Vec::new()];
        if any_rc {
            for (lane, episode_transitions) in lanes.iter().enumerate() {
                for tr in episode_transitions {
                    let vi01 = estimator.value_influence(tr.state, tr.actions, 0, 1)?;
                    let vi10 = estimator.value_influence(tr.state, tr.actions, 1, 0)?;
                    vi_sums[0] += vi01;
                    vi_sums[1] += vi10;
                    for i in 0..2 {
                        let Some(ledger) = ledgers[i].as_mut() else {
                            continue;
                        };
                        let opp = 1 - i;
                        let (exerted, received) = if i == 0 { (vi01, vi10) } else { (vi10, vi01) };
                        let balance_before = ledger.balance(lane);
                        intrinsic[i] += ledger.reciprocal_reward(lane, exerted);
                        ledger.update_balance(lane, received, exerted);
                        let mut if_coop = tr.actions;
                        if_coop[i] = Action::Cooperate.index();
                        let mut if_defect = tr.actions;
                        if_defect[i] = Action::Defect.index();
                        bonus[i].push(BonusSample {
                            own_state: perspective_state_index(tr.state as usize, i),
                            balance_before,
                            vi_if_cooperate: estimator
                                .value_influence(tr.state, if_coop, i, opp)?,
                            vi_if_defect: estimator
                                .value_influence(tr.state, if_defect, i, opp)?,
                        });
                    }
                }
            }
        }

        // Simultaneous updates from the shared pre-update policies.
        let grads: [[f64; N_STATES]; 2] = std::array::from_fn(|i| {
            let opponent = agents[1 - i].policy.clone();
            let mut g = match agents[i].kind {
                AgentKind::LolaAnalytic => {
                    agents[i].lookahead_gradient(i, &opponent, &cfg.payoff, cfg.gamma)
                }
                _ => agents[i].naive_gradient(i, &opponent, &cfg.payoff, cfg.gamma),
            };
            if agents[i].kind.is_reciprocator() {
                let b = reciprocal_bonus_gradient(&agents[i].policy, bonus_weight, &bonus[i]);
                for (gs, bs) in g.iter_mut().zip(b) {
                    *gs += bs;
                }
            }
            g
        });
        for (agent, mut grad) in agents.iter_mut().zip(grads) {
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            agent.apply_gradient(grad);
        }

        let returns = exact_return(
            &agents[0].policy.logits,
            &agents[1].policy.logits,
            &cfg.payoff,
            cfg.gamma,
        );
        let steps = (cfg.lanes * cfg.horizon) as f64;
        rows.push(MetricsRow {
            episode,
            extrinsic: returns,
            intrinsic: [intrinsic[0] / steps, intrinsic[1] / steps],
            mean_vi: vi_sums.map(|s| s / steps),
            coop_rate: Some(coop_actions as f64 / (2.0 * steps)),
            own_coin_frac: None,
            total_coins: None,
            mean_abs_balance: mean_abs_balance(&ledgers),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Sampled matrix play with PPO
// ---------------------------------------------------------------------------

/// Settings for a PPO match on the iterated matrix game.
#[derive(Clone, Debug)]
pub struct IpdRolloutMatchConfig {
    pub kinds: [AgentKind; 2],
    pub episodes: usize,
    pub lanes: usize,
    pub horizon: usize,
    pub ppo: PpoConfig,
    /// Hidden layer widths of the shared trunk.
    pub trunk: Vec<usize>,
    pub rr_weight: f64,
    pub replay_rounds: usize,
    pub refit_period: usize,
    /// Clear reciprocal balances at the start of every episode (ablation of
    /// the default carry-across-episodes behavior).
    pub reset_balances: bool,
    /// Saturation bound on balance magnitudes (infinite to disable). Bounds
    /// how much influence debt can pile up, so the reciprocal drive reacts to
    /// the recent flow instead of an old integral.
    pub max_balance: f64,
    /// Opening balance installed at construction and by every per-episode
    /// reset. A positive value extends goodwill that only pays off against
    /// another reciprocator; zero by default.
    pub reset_balance: f64,
    pub payoff: PayoffMatrix,
}

impl Default for IpdRolloutMatchConfig {
    fn default() -> Self {
        IpdRolloutMatchConfig {
            kinds: [AgentKind::NlPpo; 2],
            episodes: 2000,
            lanes: 256,
            horizon: 32,
            ppo: PpoConfig::ipd(),
            trunk: vec![2, 2],
            rr_weight: 5.0,
            replay_rounds: 1,
            refit_period: 3,
            reset_balances: false,
            max_balance: f64::INFINITY,
            reset_balance: 0.0,
            payoff: PayoffMatrix::default(),
        }
    }
}

/// Runs one sampled matrix-game match with PPO learners.
pub fn train_ipd_rollout_match(
    cfg: &IpdRolloutMatchConfig,
    rngs: &mut MatchRngs,
) -> Result<Vec<MetricsRow>> {
    validate_kinds(cfg.kinds, false, "sampled matrix")?;
    if cfg.episodes == 0 || cfg.lanes == 0 || cfg.horizon == 0 {
        return Err(Error::config("episodes, lanes, and horizon must be positive"));
    }
    let mut env = IpdEnv::new(cfg.lanes, cfg.horizon, cfg.payoff);
    let obs_dim = env.observe(0, 0).len();
    let mut agents: [PpoAgent; 2] = std::array::from_fn(|i| {
        let net = ActorCritic::feedforward(obs_dim, &cfg.trunk, 2, &mut rngs.agents[i]);
        PpoAgent::new(cfg.kinds[i], net)
    });
    let mut opts: [Adam; 2] =
        std::array::from_fn(|i| Adam::new(agents[i].net.params.len(), cfg.ppo.lr));
    let mut buffer = InfluenceReplayBuffer::new(cfg.replay_rounds * cfg.lanes);
    let mut estimator = IpdInfluenceEstimator::new(cfg.payoff, cfg.ppo.gamma);
    let mut ledgers: [Option<InfluenceLedger>; 2] = std::array::from_fn(|i| {
        cfg.kinds[i]
            .is_reciprocator()
            .then(|| {
                InfluenceLedger::new(cfg.lanes, cfg.rr_weight)
                    .with_max_balance(cfg.max_balance)
                    .with_reset_balance(cfg.reset_balance)
            })
    });
    let any_rc = ledgers.iter().any(Option::is_some);

    let mut rows = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        maybe_reset_balances(cfg.reset_balances, &mut ledgers);
        env.reset();
        let mut batches: [TrajectoryBatch; 2] =
            std::array::from_fn(|_| TrajectoryBatch::new(cfg.lanes, cfg.horizon));
        let mut lanes: Vec<Vec<JointTransition<u8>>> =
            vec![Vec::with_capacity(cfg.horizon); cfg.lanes];
        let mut coop_actions = 0usize;
        for _ in 0..cfg.horizon {
            let mut joint = Vec::with_capacity(cfg.lanes);
            for lane in 0..cfg.lanes {
                let state = env.state_index(lane, 0) as u8;
                let mut acts = [Action::Cooperate; 2];
                for i in 0..2 {
                    let obs = env.observe(lane, i);
                    let out = agents[i].act(&obs, &[], &mut rngs.agents[i]);
                    acts[i] = Action::from_index(out.action);
                    batches[i].push_step(lane, obs, out.action, out.log_prob, out.value);
                }
                coop_actions += acts.iter().filter(|a| **a == Action::Cooperate).count();
                lanes[lane].push(JointTransition {
                    state,
                    actions: [acts[0].index(), acts[1].index()],
                    rewards: [0.0; 2],
                });
                joint.push(acts);
            }
            let rewards = env.step(&joint)?;
            for lane in 0..cfg.lanes {
                let tr = lanes[lane].last_mut().expect("just pushed");
                tr.rewards = rewards[lane];
                for i in 0..2 {
                    batches[i].rewards[lane].push(rewards[lane][i]);
                }
            }
        }
        for episode_transitions in &lanes {
            buffer.push_episode(episode_transitions.clone());
        }

        if any_rc && episode % cfg.refit_period == 0 {
            estimator.fit_targets(&buffer)?;
        }
        let mean_vi = annotate_ppo_batches(
            &|s: &u8, a, i, j| estimator.value_influence(*s, a, i, j),
            &lanes,
            &mut ledgers,
            &mut batches,
        )?;

        for i in 0..2 {
            let adv = compute_advantages(&batches[i], cfg.ppo.gamma);
            ppo_update(&mut agents[i], &mut opts[i], &batches[i], &adv, &cfg.ppo)?;
        }

        let steps = (cfg.lanes * cfg.horizon) as f64;
        rows.push(MetricsRow {
            episode,
            extrinsic: std::array::from_fn(|i| batches[i].mean_extrinsic_total() / cfg.horizon as f64),
            intrinsic: std::array::from_fn(|i| batches[i].mean_intrinsic_total() / cfg.horizon as f64),
            mean_vi,
            coop_rate: Some(coop_actions as f64 / (2.0 * steps)),
            own_coin_frac: None,
            total_coins: None,
            mean_abs_balance: mean_abs_balance(&ledgers),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Coin-collection gridworld
// ---------------------------------------------------------------------------

/// Trailing-window early-stop rule for long gridworld runs: once every
/// episode in a window of `patience` episodes clears both thresholds, the
/// run ends.
#[derive(Clone, Copy, Debug)]
pub struct EarlyStop {
    pub own_coin_frac: f64,
    /// Threshold on the two agents' summed extrinsic episode totals.
    pub total_reward: f64,
    pub patience: usize,
}

/// Settings for a recurrent PPO match on the gridworld.
#[derive(Clone, Debug)]
pub struct CoinsMatchConfig {
    pub kinds: [AgentKind; 2],
    pub episodes: usize,
    pub lanes: usize,
    pub horizon: usize,
    pub grid: usize,
    pub ppo: PpoConfig,
    pub trunk: Vec<usize>,
    /// Recurrent cell width after the trunk.
    pub gru: usize,
    pub rr_weight: f64,
    pub replay_rounds: usize,
    pub refit_period: usize,
    /// Clear reciprocal balances at the start of every episode (ablation of
    /// the default carry-across-episodes behavior).
    pub reset_balances: bool,
    /// Saturation bound on balance magnitudes (infinite to disable). Bounds
    /// how much influence debt can pile up, so the reciprocal drive reacts to
    /// the recent flow instead of an old integral.
    pub max_balance: f64,
    /// Opening balance installed at construction and by every per-episode
    /// reset. A positive value extends goodwill that only pays off against
    /// another reciprocator; zero by default.
    pub reset_balance: f64,
    pub influence: NeuralInfluenceConfig,
    pub early_stop: Option<EarlyStop>,
}

impl Default for CoinsMatchConfig {
    fn default() -> Self {
        CoinsMatchConfig {
            kinds: [AgentKind::NlPpo; 2],
            episodes: 1000,
            lanes: 256,
            horizon: 32,
            grid: 3,
            ppo: PpoConfig::coins(),
            trunk: vec![16, 16],
            gru: 16,
            rr_weight: 1.0,
            replay_rounds: 4,
            refit_period: 1,
            reset_balances: false,
            max_balance: f64::INFINITY,
            reset_balance: 0.0,
            influence: NeuralInfluenceConfig::default(),
            early_stop: None,
        }
    }
}

/// Runs one gridworld match with recurrent PPO learners and (for
/// reciprocators) learned joint and counterfactual value estimators.
pub fn train_coins_match(
    cfg: &CoinsMatchConfig,
    rngs: &mut MatchRngs,
) -> Result<Vec<MetricsRow>> {
    validate_kinds(cfg.kinds, false, "gridworld")?;
    if cfg.episodes == 0 || cfg.lanes == 0 || cfg.horizon == 0 {
        return Err(Error::config("episodes, lanes, and horizon must be positive"));
    }
    let mut env = CoinsEnv::new(cfg.lanes, cfg.grid, cfg.horizon);
    let obs_dim = env.obs_dim();
    let n_actions = COINS_ACTIONS.len();
    let mut agents: [PpoAgent; 2] = std::array::from_fn(|i| {
        let net =
            ActorCritic::recurrent(obs_dim, &cfg.trunk, cfg.gru, n_actions, &mut rngs.agents[i]);
        PpoAgent::new(cfg.kinds[i], net)
    });
    let mut opts: [Adam; 2] =
        std::array::from_fn(|i| Adam::new(agents[i].net.params.len(), cfg.ppo.lr));
    let mut buffer = InfluenceReplayBuffer::new(cfg.replay_rounds * cfg.lanes);
    let any_rc = cfg.kinds.iter().any(|k| k.is_reciprocator());
    let mut estimator = any_rc.then(|| {
        let mut inf_cfg = cfg.influence;
        inf_cfg.gamma = cfg.ppo.gamma;
        NeuralInfluence::new(obs_dim, n_actions, inf_cfg, &mut rngs.estimator)
    });
    let mut ledgers: [Option<InfluenceLedger>; 2] = std::array::from_fn(|i| {
        cfg.kinds[i]
            .is_reciprocator()
            .then(|| {
                InfluenceLedger::new(cfg.lanes, cfg.rr_weight)
                    .with_max_balance(cfg.max_balance)
                    .with_reset_balance(cfg.reset_balance)
            })
    });

    let mut rows: Vec<MetricsRow> = Vec::with_capacity(cfg.episodes);
    let mut calm_streak = 0usize;
    for episode in 0..cfg.episodes {
        maybe_reset_balances(cfg.reset_balances, &mut ledgers);
        env.reset(&mut rngs.env);
        let mut batches: [TrajectoryBatch; 2] =
            std::array::from_fn(|_| TrajectoryBatch::new(cfg.lanes, cfg.horizon));
        let mut lanes: Vec<Vec<JointTransition<Vec<f64>>>> =
            vec![Vec::with_capacity(cfg.horizon); cfg.lanes];
        let mut hidden: [Vec<Vec<f64>>; 2] =
            std::array::from_fn(|i| vec![agents[i].net.initial_hidden(); cfg.lanes]);
        let mut pickups = 0usize;
        let mut own_pickups = 0usize;
        for _ in 0..cfg.horizon {
            let mut joint = Vec::with_capacity(cfg.lanes);
            for lane in 0..cfg.lanes {
                let canonical = env.observe(lane, 0);
                let mut acts = [COINS_ACTIONS[0]; 2];
                let mut indices = [0usize; 2];
                for i in 0..2 {
                    let obs = if i == 0 { canonical.clone() } else { env.observe(lane, i) };
                    let out = agents[i].act(&obs, &hidden[i][lane], &mut rngs.agents[i]);
                    hidden[i][lane] = out.h_next;
                    acts[i] = COINS_ACTIONS[out.action];
                    indices[i] = out.action;
                    batches[i].push_step(lane, obs, out.action, out.log_prob, out.value);
                }
                lanes[lane].push(JointTransition {
                    state: canonical,
                    actions: indices,
                    rewards: [0.0; 2],
                });
                joint.push(acts);
            }
            let infos = env.step(&joint, &mut rngs.env)?;
            for (lane, info) in infos.iter().enumerate() {
                let tr = lanes[lane].last_mut().expect("just pushed");
                tr.rewards = info.rewards;
                for i in 0..2 {
                    batches[i].rewards[lane].push(info.rewards[i]);
                    if info.collected[i] {
                        pickups += 1;
                        if info.coin_color == i {
                            own_pickups += 1;
                        }
                    }
                }
            }
        }
        for episode_transitions in lanes.iter() {
            buffer.push_episode(episode_transitions.clone());
        }

        let mut mean_vi = [0.0; 2];
        if let Some(est) = estimator.as_mut() {
            if episode % cfg.refit_period == 0 {
                est.fit_targets(&buffer, &mut rngs.estimator)?;
            }
            mean_vi = annotate_ppo_batches(
                &|s: &Vec<f64>, a, i, j| est.value_influence(s, a, i, j),
                &lanes,
                &mut ledgers,
                &mut batches,
            )?;
        }

        for i in 0..2 {
            let adv = compute_advantages(&batches[i], cfg.ppo.gamma);
            ppo_update(&mut agents[i], &mut opts[i], &batches[i], &adv, &cfg.ppo)?;
        }

        let extrinsic: [f64; 2] = std::array::from_fn(|i| batches[i].mean_extrinsic_total());
        let own_frac = if pickups == 0 {
            0.5
        } else {
            own_pickups as f64 / pickups as f64
        };
        rows.push(MetricsRow {
            episode,
            extrinsic,
            intrinsic: std::array::from_fn(|i| batches[i].mean_intrinsic_total()),
            mean_vi,
            coop_rate: None,
            own_coin_frac: Some(own_frac),
            total_coins: Some(pickups as f64 / cfg.lanes as f64),
            mean_abs_balance: mean_abs_balance(&ledgers),
        });

        if let Some(stop) = cfg.early_stop {
            let ok = own_frac > stop.own_coin_frac
                && extrinsic[0] + extrinsic[1] >= stop.total_reward;
            calm_streak = if ok { calm_streak + 1 } else { 0 };
            if calm_streak >= stop.patience {
                break;
            }
        }
    }
    Ok(rows)
}
