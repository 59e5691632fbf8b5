//! Central finite differences against autodiff gradients.
//!
//! The losses under test are piecewise smooth (relu, Huber). A central
//! difference is only a valid oracle when `θ ± h` stay on the same smooth
//! piece as `θ`, so every probe compares a caller-supplied region signature
//! at both ends and discards probes that straddle a kink.

#![allow(dead_code)]

use goalrepr::numkit::{Parameters, Tensor};
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default)]
pub struct FdStats {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
    /// `(analytic, numeric)` at the worst probe.
    pub worst: (f64, f64),
}

impl FdStats {
    pub fn merge(&mut self, o: FdStats) {
        self.checked += o.checked;
        self.skipped += o.skipped;
        if o.max_rel > self.max_rel {
            self.max_rel = o.max_rel;
            self.worst = o.worst;
        }
    }
}

/// Denominator floor: gradients smaller than this are compared to an
/// absolute error of `REL_TOL * SCALE_FLOOR`, below which a central
/// difference cannot resolve them.
pub const SCALE_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, SCALE_FLOOR)`
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(SCALE_FLOOR)
}

/// Compares `analytic` (in [`Parameters::tensors`] order) with central
/// differences at `per_tensor` random coordinates of every tensor.
pub fn check<M, R, L, S>(model: &M, analytic: &[Tensor], per_tensor: usize, rng: &mut R, loss: L, region: S) -> FdStats
where
    M: Parameters + Clone,
    R: Rng,
    L: Fn(&M) -> f64,
    S: Fn(&M) -> Vec<bool>,
{
    let base_region = region(model);
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    assert_eq!(shapes.len(), analytic.len());
    let mut stats = FdStats::default();
    for (ti, &len) in shapes.iter().enumerate() {
        assert_eq!(analytic[ti].len(), len);
        for _ in 0..per_tensor.min(len) {
            let j = rng.gen_range(0..len);
            let shifted = |d: f64| {
                let mut m = model.clone();
                m.tensors_mut()[ti].data_mut()[j] += d;
                m
            };
            let (plus, minus) = (shifted(STEP), shifted(-STEP));
            if region(&plus) != base_region || region(&minus) != base_region {
                stats.skipped += 1;
                continue;
            }
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let a = analytic[ti].data()[j];
            let e = rel_err(a, numeric);
            stats.checked += 1;
            if e > stats.max_rel {
                stats.max_rel = e;
                stats.worst = (a, numeric);
            }
        }
    }
    stats
}
