//! Mediated multi-agent reinforcement learning.
//!
//! Agents may delegate their actions to a learned mediator by choosing an
//! extra commit action. The mediator acts for the coalition of committed
//! agents and can be trained to be incentive compatible and encouraging.

pub mod agents;
pub mod approx;
pub mod error;
pub mod game;
pub mod harness;
pub mod mediation;
pub mod mediator;
pub mod oracle;
pub mod rollout;

pub use error::{Error, Result};
