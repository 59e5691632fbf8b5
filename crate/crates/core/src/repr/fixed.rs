use serde::{Deserialize, Serialize};

use super::energy::EnergyModel;
use crate::envs::ObsAugmenter;
use crate::error::{shape_err, Result};

/// Anything mapping an observation to goal space.
pub trait Encoder {
    fn goal_dim(&self) -> usize;
    fn encode(&self, obs: &[f64]) -> Result<Vec<f64>>;
}

impl Encoder for EnergyModel {
    fn goal_dim(&self) -> usize {
        self.config().goal_dim
    }

    fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        EnergyModel::encode(self, obs)
    }
}

/// Fixed linear representation `f(obs) = M obs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRepr {
    /// Row-major `[goal_dim, obs_dim]`.
    matrix: Vec<f64>,
    goal_dim: usize,
    obs_dim: usize,
}

impl LinearRepr {
    pub fn new(matrix: Vec<f64>, goal_dim: usize, obs_dim: usize) -> Result<Self> {
        if matrix.len() != goal_dim * obs_dim || goal_dim == 0 {
            return Err(shape_err("LinearRepr", format!("{} entries for [{goal_dim}, {obs_dim}]", matrix.len())));
        }
        Ok(Self { matrix, goal_dim, obs_dim })
    }

    /// Ground-truth `(x, y)`: the augmenter's pseudo-inverse on the signal
    /// block, zeros on the noise dims.
    pub fn xy_oracle(aug: &ObsAugmenter) -> Self {
        let (m, n) = (aug.signal_dim(), aug.obs_dim());
        let mut matrix = vec![0.0; 2 * n];
        for r in 0..2 {
            matrix[r * n..r * n + m].copy_from_slice(&aug.pinv()[r * m..(r + 1) * m]);
        }
        Self { matrix, goal_dim: 2, obs_dim: n }
    }

    /// The whole observation as the goal space.
    pub fn identity(obs_dim: usize) -> Self {
        let mut matrix = vec![0.0; obs_dim * obs_dim];
        for i in 0..obs_dim {
            matrix[i * obs_dim + i] = 1.0;
        }
        Self { matrix, goal_dim: obs_dim, obs_dim }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
}

impl Encoder for LinearRepr {
    fn goal_dim(&self) -> usize {
        self.goal_dim
    }

    fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(shape_err("LinearRepr::encode", format!("{} inputs, expected {}", obs.len(), self.obs_dim)));
        }
        Ok(self
            .matrix
            .chunks_exact(self.obs_dim)
            .map(|row| row.iter().zip(obs).map(|(a, b)| a * b).sum())
            .collect())
    }
}
