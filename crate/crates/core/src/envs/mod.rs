//! Tabular MDPs for exact certification and a continuous point maze for
//! end-to-end training.

mod augment;
pub mod maze;
pub mod tabular;

pub use augment::{ObsAugmenter, DEFAULT_NOISE_DIMS, DEFAULT_NOISE_SCALE, DEFAULT_OBS_DIM};
pub use maze::{MazeConfig, MazeLayout, MazeStep, PointMazeEnv};
pub use tabular::{random_mdp, TabularMdp};

use serde::{Deserialize, Serialize};

/// One environment step as stored in replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    /// Target reached; the episode ends without bootstrapping.
    pub terminal: bool,
    /// Position within the current `c`-step decision window.
    pub window_pos: usize,
    /// Ground-truth position after the step.
    pub next_pos: (f64, f64),
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.reward.is_finite()
            && self.obs.iter().chain(&self.action).chain(&self.next_obs).all(|v| v.is_finite())
    }
}
