//! Two-player coin-collection gridworld.
//!
//! Agents move simultaneously on a small torus holding exactly one colored
//! coin. Stepping onto the coin collects it for +1; if anyone collects a coin
//! of the other agent's color, that owner is punished −2 (once per
//! collection). Grabbing every coin regardless of color maximizes short-term
//! reward while imposing a net group loss — the dilemma lives in whether each
//! agent learns to leave the other's coins alone.

use rand::Rng;

use crate::error::{Error, Result};

/// Movement actions on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoinsAction {
    Up,
    Down,
    Left,
    Right,
}

pub const COINS_ACTIONS: [CoinsAction; 4] = [
    CoinsAction::Up,
    CoinsAction::Down,
    CoinsAction::Left,
    CoinsAction::Right,
];

impl CoinsAction {
    pub fn index(self) -> usize {
        match self {
            CoinsAction::Up => 0,
            CoinsAction::Down => 1,
            CoinsAction::Left => 2,
            CoinsAction::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> CoinsAction {
        COINS_ACTIONS[i]
    }

    fn delta(self) -> (isize, isize) {
        match self {
            CoinsAction::Up => (-1, 0),
            CoinsAction::Down => (1, 0),
            CoinsAction::Left => (0, -1),
            CoinsAction::Right => (0, 1),
        }
    }
}

/// One lane's world state: agent cells, coin cell, coin color.
#[derive(Clone, Copy, Debug)]
struct Lane {
    pos: [usize; 2],
    coin: usize,
    /// Color is the index of the owning agent.
    color: usize,
}

/// What happened in one lane during one step.
#[derive(Clone, Copy, Debug)]
pub struct CoinsStepInfo {
    pub rewards: [f64; 2],
    /// Which agents landed on the coin this step.
    pub collected: [bool; 2],
    /// Color of the coin that was available this step.
    pub coin_color: usize,
}

/// Batched coin game on a `grid` x `grid` torus with simultaneous moves and
/// no collision blocking (agents may share a cell).
#[derive(Clone, Debug)]
pub struct CoinsEnv {
    pub grid: usize,
    pub horizon: usize,
    lanes: Vec<Lane>,
    t: usize,
}

impl CoinsEnv {
    pub fn new(n_lanes: usize, grid: usize, horizon: usize) -> Self {
        assert!(grid * grid >= 3, "grid too small to place two agents and a coin");
        CoinsEnv {
            grid,
            horizon,
            lanes: vec![
                Lane {
                    pos: [0, 0],
                    coin: 0,
                    color: 0,
                };
                n_lanes
            ],
            t: 0,
        }
    }

    pub fn n_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.horizon
    }

    /// Observation length: four one-hot planes plus the time-remaining scalar.
    pub fn obs_dim(&self) -> usize {
        4 * self.grid * self.grid + 1
    }

    /// Place agents and coin uniformly at random in three distinct cells,
    /// with a uniform coin color, independently per lane.
    pub fn reset<R: Rng>(&mut self, rng: &mut R) {
        let cells = self.grid * self.grid;
        self.t = 0;
        for lane in self.lanes.iter_mut() {
            let a = rng.random_range(0..cells);
            let mut b = rng.random_range(0..cells - 1);
            if b >= a {
                b += 1;
            }
            // Third distinct draw: skip both occupied cells in order.
            let mut c = rng.random_range(0..cells - 2);
            for taken in [a.min(b), a.max(b)] {
                if c >= taken {
                    c += 1;
                }
            }
            *lane = Lane {
                pos: [a, b],
                coin: c,
                color: rng.random_range(0..2),
            };
        }
    }

    /// Egocentric observation for `agent`: one-hot planes for self, the other
    /// agent, the coin if it matches the agent's own color, the coin if it is
    /// the other color, then time remaining. Agent 0's view doubles as the
    /// canonical joint-state featurization.
    pub fn observe(&self, lane: usize, agent: usize) -> Vec<f64> {
        let cells = self.grid * self.grid;
        let lane = &self.lanes[lane];
        let mut obs = vec![0.0; 4 * cells + 1];
        obs[lane.pos[agent]] = 1.0;
        obs[cells + lane.pos[1 - agent]] = 1.0;
        let coin_plane = if lane.color == agent { 2 } else { 3 };
        obs[coin_plane * cells + lane.coin] = 1.0;
        obs[4 * cells] = (self.horizon - self.t) as f64 / self.horizon as f64;
        obs
    }

    #[cfg(test)]
    fn shift(&self, cell: usize, action: CoinsAction) -> usize {
        Self::shift_cell(self.grid, cell, action)
    }

    /// Advance every lane by one simultaneous move.
    pub fn step<R: Rng>(&mut self, actions: &[[CoinsAction; 2]], rng: &mut R) -> Result<Vec<CoinsStepInfo>> {
        if self.done() {
            return Err(Error::usage("stepping a finished episode"));
        }
        debug_assert_eq!(actions.len(), self.lanes.len());
        let cells = self.grid * self.grid;
        let mut infos = Vec::with_capacity(self.lanes.len());
        for (lane, &[a1, a2]) in self.lanes.iter_mut().zip(actions) {
            lane.pos = [
                Self::shift_cell(self.grid, lane.pos[0], a1),
                Self::shift_cell(self.grid, lane.pos[1], a2),
            ];
            let collected = [lane.pos[0] == lane.coin, lane.pos[1] == lane.coin];
            let mut rewards = [0.0; 2];
            let coin_color = lane.color;
            if collected[0] || collected[1] {
                for (agent, hit) in collected.iter().enumerate() {
                    if *hit {
                        rewards[agent] += 1.0;
                    }
                }
                // One punishment to the owner if anyone of the other color
                // took the coin, regardless of how many collectors there are.
                let wrong_color = collected[1 - coin_color];
                if wrong_color {
                    rewards[coin_color] -= 2.0;
                }
                // Respawn away from both agents, with a fresh uniform color.
                let occupied: Vec<usize> = {
                    let mut v = vec![lane.pos[0]];
                    if lane.pos[1] != lane.pos[0] {
                        v.push(lane.pos[1]);
                    }
                    v.sort_unstable();
                    v
                };
                let mut c = rng.random_range(0..cells - occupied.len());
                for &taken in &occupied {
                    if c >= taken {
                        c += 1;
                    }
                }
                lane.coin = c;
                lane.color = rng.random_range(0..2);
            }
            infos.push(CoinsStepInfo {
                rewards,
                collected,
                coin_color,
            });
        }
        self.t += 1;
        Ok(infos)
    }

    fn shift_cell(grid: usize, cell: usize, action: CoinsAction) -> usize {
        let g = grid as isize;
        let (dr, dc) = action.delta();
        let r = (cell / grid) as isize;
        let c = (cell % grid) as isize;
        let nr = (r + dr).rem_euclid(g) as usize;
        let nc = (c + dc).rem_euclid(g) as usize;
        nr * grid + nc
    }

    /// Current (agent cells, coin cell, coin color) of one lane, for tests
    /// and diagnostics.
    pub fn lane_state(&self, lane: usize) -> ([usize; 2], usize, usize) {
        let l = &self.lanes[lane];
        (l.pos, l.coin, l.color)
    }
}
