use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps a planar position into a higher-dimensional observation: a fixed
/// linear embedding followed by i.i.d. Gaussian nuisance dims.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsAugmenter {
    /// Row-major `[m, 2]`.
    map: Vec<f64>,
    /// Row-major `[2, m]`, the left pseudo-inverse of `map`.
    pinv: Vec<f64>,
    n_noise: usize,
    noise_scale: f64,
    seed: u64,
}

/// Default observation width: 10 signal dims plus 2 noise dims.
pub const DEFAULT_OBS_DIM: usize = 12;
pub const DEFAULT_NOISE_DIMS: usize = 2;
pub const DEFAULT_NOISE_SCALE: f64 = 0.1;

impl ObsAugmenter {
    /// Random map into `obs_dim - n_noise` dims, entries `N(0, 1/2)` so a
    /// unit displacement keeps roughly unit length. Maps whose Gram matrix
    /// is badly conditioned are redrawn.
    pub fn new(obs_dim: usize, n_noise: usize, noise_scale: f64, seed: u64) -> Result<Self> {
        if obs_dim < n_noise + 2 {
            return Err(Error::Invalid(format!(
                "obs_dim {obs_dim} leaves fewer than 2 signal dims after {n_noise} noise dims"
            )));
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::Invalid(format!("noise scale {noise_scale}")));
        }
        let m = obs_dim - n_noise;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let map: Vec<f64> = (0..2 * m)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2)
                .collect();
            if let Some(aug) = Self::from_map(map, n_noise, noise_scale, seed) {
                let (a, b, c) = gram(&aug.map);
                let tr = a + c;
                let det = a * c - b * b;
                let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
                let (hi, lo) = (0.5 * tr + disc, 0.5 * tr - disc);
                if lo > 0.0 && hi / lo < 100.0 {
                    return Ok(aug);
                }
            }
        }
    }

    /// Plain `(x, y)` observation.
    pub fn identity() -> Self {
        Self::from_map(vec![1.0, 0.0, 0.0, 1.0], 0, 0.0, 0).expect("identity is injective")
    }

    /// `None` when the map is not injective.
    pub fn from_map(map: Vec<f64>, n_noise: usize, noise_scale: f64, seed: u64) -> Option<Self> {
        if map.len() < 4 || map.len() % 2 != 0 {
            return None;
        }
        let (a, b, c) = gram(&map);
        let det = a * c - b * b;
        if !(det.abs() > 1e-12 * (a * c).max(f64::MIN_POSITIVE)) {
            return None;
        }
        // (MᵀM)⁻¹Mᵀ with the 2×2 inverse written out
        let (ia, ib, ic) = (c / det, -b / det, a / det);
        let m = map.len() / 2;
        let mut pinv = vec![0.0; 2 * m];
        for i in 0..m {
            let (u, v) = (map[2 * i], map[2 * i + 1]);
            pinv[i] = ia * u + ib * v;
            pinv[m + i] = ib * u + ic * v;
        }
        Some(Self {
            map,
            pinv,
            n_noise,
            noise_scale,
            seed,
        })
    }

    pub fn signal_dim(&self) -> usize {
        self.map.len() / 2
    }

    pub fn obs_dim(&self) -> usize {
        self.signal_dim() + self.n_noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row-major `[2, signal_dim]` left pseudo-inverse of the signal map.
    pub fn pinv(&self) -> &[f64] {
        &self.pinv
    }

    pub fn signal(&self, x: f64, y: f64) -> Vec<f64> {
        self.map.chunks_exact(2).map(|r| r[0] * x + r[1] * y).collect()
    }

    pub fn augment<R: Rng + ?Sized>(&self, x: f64, y: f64, rng: &mut R) -> Vec<f64> {
        let mut obs = self.signal(x, y);
        obs.extend((0..self.n_noise).map(|_| self.noise_scale * rng.sample::<f64, _>(StandardNormal)));
        obs
    }

    /// Recovers `(x, y)` from the signal block of an observation.
    pub fn recover(&self, obs: &[f64]) -> (f64, f64) {
        let m = self.signal_dim();
        let dot = |row: &[f64]| row.iter().zip(&obs[..m]).map(|(p, o)| p * o).sum::<f64>();
        (dot(&self.pinv[..m]), dot(&self.pinv[m..]))
    }
}

fn gram(map: &[f64]) -> (f64, f64, f64) {
    map.chunks_exact(2).fold((0.0, 0.0, 0.0), |(a, b, c), r| {
        (a + r[0] * r[0], b + r[0] * r[1], c + r[1] * r[1])
    })
}
