//! Experiment harness: TOML configuration, seeded runs, the round-robin
//! tournament, and CSV reporting.
//!
//! Every run is fully determined by the config file plus a seed; each
//! component (environment, each agent, the influence estimator) draws from
//! its own named RNG stream so results are reproducible byte for byte.

mod report;

pub use report::{
    cooperative_cell, emit_plot_data, read_metrics_csv, summarize_runs, tail_mean,
    write_metrics_csv, MetricSummary, COOP_DIFF_TOLERANCE, COOP_RETURN_FLOOR, CSV_HEADER,
};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::agents::AgentKind;
use crate::error::{Error, Result};
use crate::influence::NeuralInfluenceConfig;
use crate::training::{
    train_analytic_match, train_coins_match, train_ipd_rollout_match, AnalyticMatchConfig,
    CoinsMatchConfig, EarlyStop, IpdRolloutMatchConfig, MatchRngs, MetricsRow, PpoConfig,
};

/// Which experiment family a config drives.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
pub enum Mode {
    #[serde(rename = "ipd-analytic")]
    IpdAnalytic,
    #[serde(rename = "ipd-rollout")]
    IpdRollout,
    #[serde(rename = "coins")]
    Coins,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::IpdAnalytic => "ipd-analytic",
            Mode::IpdRollout => "ipd-rollout",
            Mode::Coins => "coins",
        })
    }
}

/// Top-level experiment file: one `[experiment]` section plus optional
/// per-module sections. Unknown keys anywhere are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub matrix: MatrixSection,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default)]
    pub coins: CoinsSection,
    #[serde(default)]
    pub influence: InfluenceSection,
    #[serde(default)]
    pub ppo: PpoSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Run identifier used in output file names.
    pub name: String,
    pub mode: Mode,
    /// Two entries for `run`; the tournament roster for `round-robin`.
    /// Short names (NL, LOLA, RC) resolve through the mode.
    pub agents: Vec<String>,
    pub episodes: Option<usize>,
    pub lanes: Option<usize>,
    /// Defaults to eight seeds, matching the usual repeat count.
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
}

/// Exact-gradient matrix-game settings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    pub gamma: Option<f64>,
    pub horizon: Option<usize>,
    pub lr: Option<f64>,
    pub alpha_opp: Option<f64>,
    pub init_std: Option<f64>,
    pub max_grad_norm: Option<f64>,
}

/// Sampled matrix-game settings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    pub horizon: Option<usize>,
    pub trunk: Option<Vec<usize>>,
}

/// Gridworld settings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoinsSection {
    pub horizon: Option<usize>,
    pub grid: Option<usize>,
    pub trunk: Option<Vec<usize>>,
    pub gru: Option<usize>,
    /// All three early-stop keys must be present to enable early stopping.
    pub early_stop_own_frac: Option<f64>,
    pub early_stop_total_reward: Option<f64>,
    pub early_stop_patience: Option<usize>,
}

/// Influence estimation settings shared by every mode, plus the neural
/// estimator's fit parameters (gridworld only).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceSection {
    pub weight: Option<f64>,
    pub replay_rounds: Option<usize>,
    pub refit_period: Option<usize>,
    /// Clear balances every episode instead of carrying them across.
    pub reset_balances: Option<bool>,
    /// Saturation bound on balance magnitudes.
    pub max_balance: Option<f64>,
    /// Opening balance installed at construction and on every reset.
    pub reset_balance: Option<f64>,
    pub epochs: Option<usize>,
    pub fit_lr: Option<f64>,
    pub hidden: Option<usize>,
    pub samples_per_epoch: Option<usize>,
}

/// PPO settings for the rollout modes.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoSection {
    pub lr: Option<f64>,
    pub clip: Option<f64>,
    pub epochs: Option<usize>,
    pub gamma: Option<f64>,
    pub entropy_coef: Option<f64>,
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub lanes: Option<usize>,
    pub out: Option<PathBuf>,
}

fn overlay<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("reading {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("parsing {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.experiment.name.is_empty()
            || !self
                .experiment
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::config(
                "experiment name must be nonempty and use only [A-Za-z0-9-_]",
            ));
        }
        if self.experiment.agents.is_empty() {
            return Err(Error::config("at least one agent must be listed"));
        }
        for a in &self.experiment.agents {
            resolve_kind(a, self.experiment.mode)?;
        }
        if let Some(seeds) = &self.experiment.seeds {
            if seeds.is_empty() {
                return Err(Error::config("seeds list must not be empty"));
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(seed) = ov.seed {
            self.experiment.seeds = Some(vec![seed]);
        }
        if ov.episodes.is_some() {
            self.experiment.episodes = ov.episodes;
        }
        if ov.lanes.is_some() {
            self.experiment.lanes = ov.lanes;
        }
        if let Some(out) = &ov.out {
            self.experiment.out_dir = Some(out.clone());
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.experiment
            .seeds
            .clone()
            .unwrap_or_else(|| (1..=8).collect())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.experiment
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// The two match participants, resolved through the mode.
    pub fn pair(&self) -> Result<[AgentKind; 2]> {
        if self.experiment.agents.len() != 2 {
            return Err(Error::config(format!(
                "a match needs exactly 2 agents, got {}",
                self.experiment.agents.len()
            )));
        }
        Ok([
            resolve_kind(&self.experiment.agents[0], self.experiment.mode)?,
            resolve_kind(&self.experiment.agents[1], self.experiment.mode)?,
        ])
    }

    /// Tournament roster in listed order, duplicates rejected.
    pub fn roster(&self) -> Result<Vec<AgentKind>> {
        let mut kinds = Vec::new();
        for a in &self.experiment.agents {
            let k = resolve_kind(a, self.experiment.mode)?;
            if kinds.contains(&k) {
                return Err(Error::config(format!("duplicate roster entry {k}")));
            }
            kinds.push(k);
        }
        Ok(kinds)
    }

    pub fn analytic(&self, kinds: [AgentKind; 2]) -> AnalyticMatchConfig {
        let mut c = AnalyticMatchConfig {
            kinds,
            ..AnalyticMatchConfig::default()
        };
        overlay(&mut c.episodes, self.experiment.episodes);
        overlay(&mut c.lanes, self.experiment.lanes);
        overlay(&mut c.gamma, self.matrix.gamma);
        overlay(&mut c.horizon, self.matrix.horizon);
        overlay(&mut c.lr, self.matrix.lr);
        overlay(&mut c.alpha_opp, self.matrix.alpha_opp);
        overlay(&mut c.init_std, self.matrix.init_std);
        overlay(&mut c.max_grad_norm, self.matrix.max_grad_norm);
        overlay(&mut c.rr_weight, self.influence.weight);
        overlay(&mut c.replay_rounds, self.influence.replay_rounds);
        overlay(&mut c.refit_period, self.influence.refit_period);
        overlay(&mut c.reset_balances, self.influence.reset_balances);
        overlay(&mut c.max_balance, self.influence.max_balance);
        overlay(&mut c.reset_balance, self.influence.reset_balance);
        c
    }

    pub fn ipd_rollout(&self, kinds: [AgentKind; 2]) -> IpdRolloutMatchConfig {
        let mut c = IpdRolloutMatchConfig {
            kinds,
            ..IpdRolloutMatchConfig::default()
        };
        overlay(&mut c.episodes, self.experiment.episodes);
        overlay(&mut c.lanes, self.experiment.lanes);
        overlay(&mut c.horizon, self.rollout.horizon);
        if let Some(trunk) = &self.rollout.trunk {
            c.trunk = trunk.clone();
        }
        overlay(&mut c.rr_weight, self.influence.weight);
        overlay(&mut c.replay_rounds, self.influence.replay_rounds);
        overlay(&mut c.refit_period, self.influence.refit_period);
        overlay(&mut c.reset_balances, self.influence.reset_balances);
        overlay(&mut c.max_balance, self.influence.max_balance);
        overlay(&mut c.reset_balance, self.influence.reset_balance);
        c.ppo = self.ppo_config(PpoConfig::ipd());
        c
    }

    pub fn coins_match(&self, kinds: [AgentKind; 2]) -> CoinsMatchConfig {
        let mut c = CoinsMatchConfig {
            kinds,
            ..CoinsMatchConfig::default()
        };
        overlay(&mut c.episodes, self.experiment.episodes);
        overlay(&mut c.lanes, self.experiment.lanes);
        overlay(&mut c.horizon, self.coins.horizon);
        overlay(&mut c.grid, self.coins.grid);
        if let Some(trunk) = &self.coins.trunk {
            c.trunk = trunk.clone();
        }
        overlay(&mut c.gru, self.coins.gru);
        overlay(&mut c.rr_weight, self.influence.weight);
        overlay(&mut c.replay_rounds, self.influence.replay_rounds);
        overlay(&mut c.refit_period, self.influence.refit_period);
        overlay(&mut c.reset_balances, self.influence.reset_balances);
        overlay(&mut c.max_balance, self.influence.max_balance);
        overlay(&mut c.reset_balance, self.influence.reset_balance);
        c.ppo = self.ppo_config(PpoConfig::coins());
        let mut inf = NeuralInfluenceConfig::default();
        overlay(&mut inf.epochs, self.influence.epochs);
        overlay(&mut inf.lr, self.influence.fit_lr);
        overlay(&mut inf.hidden, self.influence.hidden);
        overlay(&mut inf.samples_per_epoch, self.influence.samples_per_epoch);
        c.influence = inf;
        if let (Some(own), Some(total), Some(patience)) = (
            self.coins.early_stop_own_frac,
            self.coins.early_stop_total_reward,
            self.coins.early_stop_patience,
        ) {
            c.early_stop = Some(EarlyStop {
                own_coin_frac: own,
                total_reward: total,
                patience,
            });
        }
        c
    }

    fn ppo_config(&self, base: PpoConfig) -> PpoConfig {
        let mut p = base;
        overlay(&mut p.lr, self.ppo.lr);
        overlay(&mut p.clip, self.ppo.clip);
        overlay(&mut p.epochs, self.ppo.epochs);
        overlay(&mut p.gamma, self.ppo.gamma);
        overlay(&mut p.entropy_coef, self.ppo.entropy_coef);
        p
    }
}

/// Resolves an agent label: full kind names are checked against the mode,
/// short names (NL, LOLA, RC) pick the mode's representation.
pub fn resolve_kind(label: &str, mode: Mode) -> Result<AgentKind> {
    let analytic = mode == Mode::IpdAnalytic;
    if let Ok(kind) = label.parse::<AgentKind>() {
        if kind.is_analytic() != analytic {
            return Err(Error::config(format!(
                "agent kind {kind} cannot play in {mode} mode"
            )));
        }
        return Ok(kind);
    }
    match (label.to_ascii_uppercase().as_str(), analytic) {
        ("NL", true) => Ok(AgentKind::NlAnalytic),
        ("LOLA", true) => Ok(AgentKind::LolaAnalytic),
        ("RC", true) => Ok(AgentKind::RcAnalytic),
        ("NL", false) => Ok(AgentKind::NlPpo),
        ("RC", false) => Ok(AgentKind::RcPpo),
        ("LOLA", false) => Err(Error::config(
            "LOLA plays only in ipd-analytic mode".to_string(),
        )),
        _ => Err(Error::config(format!(
            "unknown agent label '{label}' (use NL, LOLA, RC, or a full kind name)"
        ))),
    }
}

/// Trains one seeded match per the config's mode and returns its metrics.
pub fn run_match(cfg: &ExperimentConfig, kinds: [AgentKind; 2], seed: u64) -> Result<Vec<MetricsRow>> {
    let mut rngs = MatchRngs::from_seed(seed);
    let rows = match cfg.experiment.mode {
        Mode::IpdAnalytic => train_analytic_match(&cfg.analytic(kinds), &mut rngs)?,
        Mode::IpdRollout => train_ipd_rollout_match(&cfg.ipd_rollout(kinds), &mut rngs)?,
        Mode::Coins => train_coins_match(&cfg.coins_match(kinds), &mut rngs)?,
    };
    if let Some(bad) = rows.iter().find(|r| !r.is_finite()) {
        return Err(Error::training(format!(
            "non-finite metrics at episode {} (seed {seed}); run aborted",
            bad.episode
        )));
    }
    Ok(rows)
}

/// Executes the configured match across all seeds, writing one metrics CSV
/// per seed plus a cross-seed summary.
pub fn run(config_path: &Path, ov: &Overrides) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    cfg.apply(ov);
    let kinds = cfg.pair()?;
    let name = cfg.experiment.name.clone();
    let out_dir = cfg.out_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| Error::config(format!("creating {}: {e}", out_dir.display())))?;

    let seeds = cfg.seeds();
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        eprintln!("[{name}] seed {seed}: {} vs {} ...", kinds[0], kinds[1]);
        let rows = run_match(&cfg, kinds, seed)?;
        let path = out_dir.join(format!("{name}-seed{seed}.csv"));
        write_metrics_csv(&path, &name, seed, &rows)?;
        eprintln!("[{name}] seed {seed}: {} episodes -> {}", rows.len(), path.display());
        runs.push(rows);
    }

    let summary = summarize_runs(&runs);
    let summary_path = out_dir.join(format!("{name}-summary.csv"));
    report::write_summary_csv(&summary_path, &name, seeds.len(), &summary)?;
    println!("run {name}: {} seed(s), {} vs {}", seeds.len(), kinds[0], kinds[1]);
    for m in &summary {
        println!("  {:<18} {:>9.4} ± {:.4}", m.metric, m.mean, m.stderr);
    }
    println!("summary -> {}", summary_path.display());
    Ok(())
}

/// One tournament cell: the row agent's converged return against the column
/// agent, averaged across seeds.
#[derive(Clone, Debug)]
pub struct TournamentCell {
    pub row: AgentKind,
    pub col: AgentKind,
    /// Row agent's tail-mean return, mean and stderr across seeds.
    pub row_return: f64,
    pub row_stderr: f64,
    /// Column agent's return in the same matches.
    pub col_return: f64,
    pub col_stderr: f64,
}

/// Trains every ordered pair from the roster and emits the pairwise table
/// with cooperative-cell flags.
pub fn round_robin(config_path: &Path, ov: &Overrides) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    cfg.apply(ov);
    if cfg.experiment.mode != Mode::IpdAnalytic {
        return Err(Error::config(
            "round-robin runs in ipd-analytic mode only".to_string(),
        ));
    }
    let roster = cfg.roster()?;
    let name = cfg.experiment.name.clone();
    let out_dir = cfg.out_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| Error::config(format!("creating {}: {e}", out_dir.display())))?;
    let seeds = cfg.seeds();

    let mut cells: Vec<TournamentCell> = Vec::with_capacity(roster.len() * roster.len());
    for &row in &roster {
        for &col in &roster {
            eprintln!("[{name}] {} vs {} ({} seeds) ...", row, col, seeds.len());
            let mut row_tails = Vec::with_capacity(seeds.len());
            let mut col_tails = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let rows = run_match(&cfg, [row, col], seed)?;
                row_tails.push(tail_mean(&rows, |r| Some(r.extrinsic[0])).unwrap_or(f64::NAN));
                col_tails.push(tail_mean(&rows, |r| Some(r.extrinsic[1])).unwrap_or(f64::NAN));
            }
            let (row_return, row_stderr) = report::mean_stderr(&row_tails);
            let (col_return, col_stderr) = report::mean_stderr(&col_tails);
            cells.push(TournamentCell {
                row,
                col,
                row_return,
                row_stderr,
                col_return,
                col_stderr,
            });
        }
    }

    let table_path = out_dir.join(format!("{name}-table.csv"));
    report::write_table_csv(&table_path, &roster, &cells)?;
    print!("{}", report::render_table(&roster, &cells));
    println!("table -> {}", table_path.display());
    Ok(())
}

/// Looks up the row-agent return for an ordered pair.
pub fn cell_return(cells: &[TournamentCell], row: AgentKind, col: AgentKind) -> Option<f64> {
    cells
        .iter()
        .find(|c| c.row == row && c.col == col)
        .map(|c| c.row_return)
}
