//! A desk-scale laboratory for studying emergent cooperation between
//! independently learning agents in sequential social dilemmas.
//!
//! The crate provides:
//!
//! - an exact analytic engine for the memory-1 iterated prisoner's dilemma
//!   (induced Markov chain, closed-form discounted returns, exact Q-values,
//!   exact and lookahead policy gradients) in [`matrix_game`];
//! - batched rollout environments (iterated prisoner's dilemma and the Coins
//!   gridworld) in [`env`];
//! - value-influence estimation, influence balances, and the reciprocal
//!   intrinsic reward in [`influence`];
//! - tiny feedforward/recurrent function approximators with hand-rolled
//!   reverse-mode gradients and Adam in [`nn`];
//! - agent kinds (naive, lookahead, reciprocal) in [`agents`] and the PPO-clip
//!   trainer plus match orchestration in [`training`];
//! - configuration, seeding, CSV metrics, and the round-robin tournament
//!   runner in [`harness`].
//!
//! Everything is deterministic given a config and a master seed: RNG use is
//! split into named counter-based streams and all reductions run in a fixed
//! order.

pub mod agents;
pub mod env;
pub mod error;
pub mod harness;
pub mod influence;
pub mod matrix_game;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
