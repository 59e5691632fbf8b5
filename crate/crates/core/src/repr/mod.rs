//! Energy-based representation learning.
//!
//! The energy `E(s', s, π) = exp(-D(f(s'), φ(s, π)))` scores how well a
//! future state matches a state and action sequence. Training pulls
//! `f(s_{t+k})` toward `φ(s_t, a)` and pushes replay negatives away,
//! normalized by a batch log-mean-exp estimate of the log-partition that
//! enters the loss as a constant. [`probe_repr`] measures how much of the
//! ground-truth position an encoder preserves.

mod energy;
mod fixed;
mod probe;

pub use energy::{
    comp_repr_loss, est_log_part, huber_distance, log_mean_exp, repr_train_step, sample_weights, EnergyConfig,
    EnergyModel, LossGraph, ReprBatch, ReprStep,
};
pub use fixed::{Encoder, LinearRepr};
pub use probe::{probe_features, probe_repr, ProbeReport, MIN_PROBE_STATES};

#[cfg(test)]
mod tests;
