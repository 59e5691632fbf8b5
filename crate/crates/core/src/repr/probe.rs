use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fixed::Encoder;
use crate::error::{shape_err, Error, Result};

pub const MIN_PROBE_STATES: usize = 100;

/// Least-squares affine map from features to `(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// One row per target coordinate: `[w_1, .., w_d, bias]`.
    pub coef: Vec<Vec<f64>>,
    /// `None` when the target coordinate has zero variance.
    pub r2: Vec<Option<f64>>,
    /// The design `[f | 1]` has rank below `d + 1`; the minimum-norm
    /// solution is reported.
    pub rank_deficient: bool,
    pub n: usize,
}

impl ProbeReport {
    /// Smallest per-coordinate R², `None` if any is undefined.
    pub fn min_r2(&self) -> Option<f64> {
        self.r2.iter().try_fold(f64::INFINITY, |m, r| r.map(|r| m.min(r)))
    }
}

/// Fits `(x, y) ≈ A f + b` on precomputed features.
pub fn probe_features(features: &[Vec<f64>], xy: &[(f64, f64)]) -> Result<ProbeReport> {
    let n = features.len();
    if n < MIN_PROBE_STATES {
        return Err(Error::Invalid(format!("probe needs at least {MIN_PROBE_STATES} labeled states, got {n}")));
    }
    if xy.len() != n {
        return Err(shape_err("probe", "features and labels differ in length"));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(shape_err("probe", "ragged feature rows"));
    }
    if features.iter().flatten().chain(xy.iter().flat_map(|p| [&p.0, &p.1])).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("probe inputs"));
    }
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j < d { features[i][j] } else { 1.0 });
    let svd = design.clone().svd(true, true);
    let tol = svd.singular_values.max() * (n.max(d + 1) as f64) * f64::EPSILON;
    let rank = svd.rank(tol);
    let mut coef = Vec::with_capacity(2);
    let mut r2 = Vec::with_capacity(2);
    for target in [DVector::from_iterator(n, xy.iter().map(|p| p.0)), DVector::from_iterator(n, xy.iter().map(|p| p.1))] {
        let w = svd.solve(&target, tol).map_err(|e| Error::Invalid(format!("probe solve: {e}")))?;
        let resid = &design * &w - &target;
        let mean = target.mean();
        let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
        let ss_res = resid.norm_squared();
        r2.push((ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot));
        coef.push(w.iter().copied().collect());
    }
    Ok(ProbeReport {
        coef,
        r2,
        rank_deficient: rank < d + 1,
        n,
    })
}

/// Encodes every observation and fits the affine probe.
pub fn probe_repr<E: Encoder + ?Sized>(enc: &E, labeled: &[(Vec<f64>, f64, f64)]) -> Result<ProbeReport> {
    let features = labeled.iter().map(|(o, _, _)| enc.encode(o)).collect::<Result<Vec<_>>>()?;
    let xy: Vec<(f64, f64)> = labeled.iter().map(|&(_, x, y)| (x, y)).collect();
    probe_features(&features, &xy)
}
