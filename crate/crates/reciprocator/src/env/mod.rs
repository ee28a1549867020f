//! Batched rollout environments.
//!
//! Both environments step a fixed number of independent lanes in lockstep for
//! exactly `horizon` rounds per episode. Lanes share the step counter but
//! nothing else, so a batch is just `n_lanes` parallel episodes collected at
//! once.

mod coins;
mod ipd;

pub use coins::{CoinsAction, CoinsEnv, CoinsStepInfo, COINS_ACTIONS};
pub use ipd::IpdEnv;
