use serde::{Deserialize, Serialize};

use crate::divergence::{log_sum_exp, Categorical};
use crate::error::{Error, Result};
use crate::numkit::huber;

/// Smallest prior mass a state may carry.
pub const RHO_MIN: f64 = 1e-6;

/// Grid resolution per axis for the default goal candidates.
pub const GRID_POINTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distance {
    SquaredL2,
    /// Elementwise Huber, summed over coordinates.
    Huber { delta: f64 },
}

impl Distance {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Distance::SquaredL2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Distance::Huber { delta } => a.iter().zip(b).map(|(x, y)| huber(x - y, delta)).sum(),
        }
    }
}

/// State embedding, finite goal set, distance and prior for exact work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularRepr {
    f: Vec<Vec<f64>>,
    goals: Vec<Vec<f64>>,
    distance: Distance,
    rho: Categorical,
}

fn check_points(what: &str, pts: &[Vec<f64>], dim: usize) -> Result<()> {
    for (i, p) in pts.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Invalid(format!("{what}[{i}] has dimension {}, expected {dim}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("{what}[{i}] is not finite")));
        }
    }
    Ok(())
}

impl TabularRepr {
    pub fn new(f: Vec<Vec<f64>>, goals: Vec<Vec<f64>>, distance: Distance, rho: Categorical) -> Result<Self> {
        if f.is_empty() {
            return Err(Error::Invalid("representation over zero states".into()));
        }
        if goals.is_empty() {
            return Err(Error::Invalid("goal candidate set is empty".into()));
        }
        let dim = f[0].len();
        if dim == 0 {
            return Err(Error::Invalid("goal dimension must be positive".into()));
        }
        check_points("f", &f, dim)?;
        check_points("goal", &goals, dim)?;
        if rho.len() != f.len() {
            return Err(Error::Invalid(format!("prior over {} states, f over {}", rho.len(), f.len())));
        }
        if let Some(p) = rho.probs().iter().find(|&&p| p < RHO_MIN) {
            return Err(Error::Invalid(format!("prior mass {p} below {RHO_MIN}")));
        }
        if let Distance::Huber { delta } = distance {
            if !(delta > 0.0) {
                return Err(Error::Invalid(format!("Huber delta {delta}")));
            }
        }
        Ok(Self { f, goals, distance, rho })
    }

    /// Uniform prior and the default candidate set: every `f(s)` plus a
    /// regular grid over the bounding box of `f(S)` when `d ≤ 2`.
    pub fn with_default_goals(f: Vec<Vec<f64>>, distance: Distance) -> Result<Self> {
        let n = f.len();
        let goals = default_goals(&f);
        Self::new(f, goals, distance, Categorical::uniform(n.max(1)))
    }

    pub fn n_states(&self) -> usize {
        self.f.len()
    }

    pub fn dim(&self) -> usize {
        self.f[0].len()
    }

    pub fn f(&self) -> &[Vec<f64>] {
        &self.f
    }

    pub fn goals(&self) -> &[Vec<f64>] {
        &self.goals
    }

    pub fn distance(&self) -> Distance {
        self.distance
    }

    pub fn rho(&self) -> &Categorical {
        &self.rho
    }

    pub fn with_goals(&self, goals: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.f.clone(), goals, self.distance, self.rho.clone())
    }

    /// `D(f(s'), goal)` for every state `s'`.
    pub fn distances_to(&self, goal: &[f64]) -> Vec<f64> {
        self.f.iter().map(|fs| self.distance.eval(fs, goal)).collect()
    }

    /// `log K(s')` with `K ∝ ρ exp(-D(f(s'), goal))`, normalized by
    /// log-sum-exp.
    pub fn log_k(&self, goal: &[f64]) -> Vec<f64> {
        let logw: Vec<f64> = self
            .rho
            .probs()
            .iter()
            .zip(self.distances_to(goal))
            .map(|(r, d)| r.ln() - d)
            .collect();
        let z = log_sum_exp(&logw);
        logw.into_iter().map(|l| l - z).collect()
    }
}

pub fn default_goals(f: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut goals = f.to_vec();
    let dim = f.first().map_or(0, Vec::len);
    if dim == 0 || dim > 2 {
        return goals;
    }
    let lo: Vec<f64> = (0..dim).map(|j| f.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..dim).map(|j| f.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let axis = |j: usize, i: usize| lo[j] + (hi[j] - lo[j]) * i as f64 / (GRID_POINTS - 1) as f64;
    if dim == 1 {
        goals.extend((0..GRID_POINTS).map(|i| vec![axis(0, i)]));
    } else {
        for i in 0..GRID_POINTS {
            for j in 0..GRID_POINTS {
                goals.push(vec![axis(0, i), axis(1, j)]);
            }
        }
    }
    goals
}

/// The implied dynamics `K(·|s, π) ∝ ρ exp(-D(f(·), goal))`. The state and
/// policy enter only through the goal vector.
pub fn build_k(repr: &TabularRepr, goal: &[f64]) -> Result<Categorical> {
    if goal.len() != repr.dim() || goal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("goal {goal:?} is not a finite {}-vector", repr.dim())));
    }
    Categorical::from_log_weights(
        &repr
            .rho
            .probs()
            .iter()
            .zip(repr.distances_to(goal))
            .map(|(r, d)| r.ln() - d)
            .collect::<Vec<_>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_energy_gives_prior() {
        let rho = Categorical::new(vec![0.2, 0.3, 0.5]).unwrap();
        let r = TabularRepr::new(vec![vec![1.0, 1.0]; 3], vec![vec![0.0, 0.0]], Distance::SquaredL2, rho.clone()).unwrap();
        let k = build_k(&r, &[3.0, -1.0]).unwrap();
        for (a, b) in k.probs().iter().zip(rho.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn energy_peak_at_goal_state() {
        let f = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let r = TabularRepr::with_default_goals(f, Distance::SquaredL2).unwrap();
        let k = build_k(&r, &r.f()[2].clone()).unwrap();
        let argmax = (0..4).max_by(|&a, &b| k.probs()[a].total_cmp(&k.probs()[b])).unwrap();
        assert_eq!(argmax, 2);
    }

    #[test]
    fn three_state_normalization() {
        let rho = Categorical::new(vec![0.5, 0.25, 0.25]).unwrap();
        let f = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]];
        let r = TabularRepr::new(f, vec![vec![0.0, 0.0]], Distance::SquaredL2, rho).unwrap();
        let k = build_k(&r, &[0.0, 0.0]).unwrap();
        let w = [0.5, 0.25 * (-1.0f64).exp(), 0.25 * (-4.0f64).exp()];
        let z: f64 = w.iter().sum();
        for (a, b) in k.probs().iter().zip(w) {
            assert!((a - b / z).abs() < 1e-15);
        }
        let lk = r.log_k(&[0.0, 0.0]);
        for (a, b) in lk.iter().zip(k.probs()) {
            assert!((a.exp() - b).abs() < 1e-15);
        }
    }

    #[test]
    fn default_goals_cover_grid() {
        let f = vec![vec![0.0, 0.0], vec![4.0, 2.0], vec![1.0, 1.0]];
        let g = default_goals(&f);
        assert_eq!(g.len(), 3 + 25);
        assert!(g.contains(&vec![4.0, 2.0]));
        assert!(g.contains(&vec![2.0, 0.5]));
    }

    #[test]
    fn huber_distance_is_elementwise() {
        let d = Distance::Huber { delta: 1.0 };
        assert_eq!(d.eval(&[0.0, 0.0], &[1.0, 0.0]), 0.5);
        assert_eq!(d.eval(&[0.0, 0.0], &[3.0, -0.5]), 2.5 + 0.125);
    }

    #[test]
    fn rejects_bad_prior() {
        let rho = Categorical::new(vec![1.0 - 1e-7, 1e-7]).unwrap();
        assert!(TabularRepr::new(vec![vec![0.0]; 2], vec![vec![0.0]], Distance::SquaredL2, rho).is_err());
    }
}
