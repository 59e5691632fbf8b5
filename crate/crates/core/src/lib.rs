//! Representation learning for goal-conditioned hierarchical RL.
//!
//! The crate has two halves. The exact half ([`divergence`], [`theory`],
//! [`envs::tabular`]) builds goal-to-policy maps on small tabular MDPs and
//! certifies sub-optimality bounds by value iteration. The learned half
//! ([`numkit`], [`repr`], [`hrl`], [`envs::maze`]) trains an energy-based
//! representation together with a two-level agent on a continuous point
//! maze.

pub mod divergence;
pub mod envs;
mod error;
pub mod hrl;
pub mod numkit;
pub mod par;
pub mod repr;
pub mod theory;

pub use error::{Error, Result};
