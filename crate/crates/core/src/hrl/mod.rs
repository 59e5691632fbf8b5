//! Two-level agent on the point maze.
//!
//! Every `c` steps the high level picks an offset `Δ` and fixes the goal
//! `g = f(s_t) + Δ` for the window. The low level is rewarded for steering
//! `f(s)` toward `g`; with a learned representation its reward also carries
//! the energy model's correction terms, recomputed from the current model
//! at every update.

mod agent;
mod policy;
mod replay;
mod train;

pub use agent::{ActorCritic, AgentConfig, TdBatch, UpdateLosses};
pub use policy::{
    aggregate_reward, comp_low_reward, high_update, low_update, HighPolicy, HighTuple, LowPolicy, LowTuple,
};
pub use replay::{ReplayBuffer, StepRef, Stored, Window};
pub use train::{
    train, Agent, Arm, Encoding, Episode, EnvConfig, EvalResult, MetricsRow, ReprConfig, TrainConfig, TrainOutcome, Trainer,
    METRICS_HEADER,
};
