use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for transition distributions.
pub const ROW_TOL: f64 = 1e-12;

/// Finite MDP with state-only rewards. Transitions are stored densely as
/// `[s][a][s']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    reward: Vec<f64>,
    transition: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

impl TabularMdp {
    /// `transition[s][a]` is the next-state distribution.
    pub fn new(reward: Vec<f64>, transition: Vec<Vec<Vec<f64>>>, gamma: f64) -> Result<Self> {
        let n_states = reward.len();
        if n_states == 0 {
            return Err(Error::Invalid("MDP needs at least one state".into()));
        }
        if transition.len() != n_states {
            return Err(Error::Invalid(format!(
                "transition has {} source states, reward has {n_states}",
                transition.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Invalid(format!("discount {gamma} outside (0, 1)")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Invalid("non-finite reward".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::Invalid("MDP needs at least one action".into()));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(Error::Invalid(format!("state {s} has {} actions", rows.len())));
            }
            for (a, row) in rows.iter().enumerate() {
                check_row(row, n_states).map_err(|m| Error::Invalid(format!("row ({s}, {a}): {m}")))?;
                flat.extend_from_slice(row);
            }
        }
        let r_max = reward.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        Ok(Self {
            n_states,
            n_actions,
            reward,
            transition: flat,
            gamma,
            r_max,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `max_s |R(s)|`
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn reward(&self, s: usize) -> f64 {
        self.reward[s]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Invalid(format!("discount {gamma} outside (0, 1)")));
        }
        Ok(Self {
            gamma,
            ..self.clone()
        })
    }

    fn check_indices(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::OutOfRange {
                what: "state",
                index: s,
                limit: self.n_states,
            });
        }
        if a >= self.n_actions {
            return Err(Error::OutOfRange {
                what: "action",
                index: a,
                limit: self.n_actions,
            });
        }
        Ok(())
    }

    /// Samples `s' ~ T(s, a)` and returns it with the arrival reward `R(s')`.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<(usize, f64)> {
        self.check_indices(s, a)?;
        let u: f64 = rng.gen();
        let row = self.row(s, a);
        let mut acc = 0.0;
        let mut next = None;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = Some(i);
                break;
            }
        }
        // rounding can leave acc a hair below 1; fall back to the last
        // state with positive mass
        let next = next.unwrap_or_else(|| row.iter().rposition(|&p| p > 0.0).unwrap_or(0));
        Ok((next, self.reward[next]))
    }

    /// One-step pushforward of a state distribution under action `a`.
    pub fn push(&self, dist: &[f64], a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (s, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(self.row(s, a)) {
                *o += p * t;
            }
        }
        out
    }
}

fn check_row(row: &[f64], n: usize) -> std::result::Result<(), String> {
    if row.len() != n {
        return Err(format!("length {} != {n}", row.len()));
    }
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err("negative or non-finite probability".into());
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {s}"));
    }
    Ok(())
}

/// Random MDP: each row is Dirichlet(1) over a support of `sparsity`
/// uniformly chosen states (all states when `None`), rewards uniform in
/// `[-1, 1]`.
pub fn random_mdp<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    sparsity: Option<usize>,
    rng: &mut R,
) -> Result<TabularMdp> {
    if n_states < 2 {
        return Err(Error::Invalid("random_mdp needs at least 2 states".into()));
    }
    if n_actions == 0 {
        return Err(Error::Invalid("random_mdp needs at least 1 action".into()));
    }
    let support = sparsity.unwrap_or(n_states).clamp(1, n_states);
    let reward = (0..n_states).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let transition = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let idx = sample(rng, n_states, support);
                    let mut row = vec![0.0; n_states];
                    for i in idx.iter() {
                        let g: f64 = Exp1.sample(rng);
                        row[i] = g.max(1e-300);
                    }
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= total);
                    row
                })
                .collect()
        })
        .collect();
    TabularMdp::new(reward, transition, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain() -> TabularMdp {
        // 0 -a0-> 1, 0 -a1-> 2 (absorbing), 1 -*-> 1
        TabularMdp::new(
            vec![0.0, 1.0, -1.0],
            vec![
                vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
                vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]],
                vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
            ],
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_and_absorbing_rows() {
        let m = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(m.step(0, 0, &mut rng).unwrap(), (1, 1.0));
            assert_eq!(m.step(2, 1, &mut rng).unwrap(), (2, -1.0));
        }
        assert_eq!(m.r_max(), 1.0);
    }

    #[test]
    fn uniform_row_frequency_within_three_sigma() {
        let m = TabularMdp::new(
            vec![0.0, 0.0],
            vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
            0.5,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let hits = (0..n).filter(|_| m.step(0, 0, &mut rng).unwrap().0 == 0).count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((hits as f64 - n as f64 / 2.0).abs() < 3.0 * sigma, "{hits}");
    }

    #[test]
    fn out_of_range_rejected() {
        let m = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.step(3, 0, &mut rng), Err(Error::OutOfRange { what: "state", .. })));
        assert!(matches!(m.step(0, 2, &mut rng), Err(Error::OutOfRange { what: "action", .. })));
    }

    #[test]
    fn unnormalized_rows_rejected() {
        let err = TabularMdp::new(vec![0.0, 0.0], vec![vec![vec![0.5, 0.6]], vec![vec![1.0, 0.0]]], 0.5);
        assert!(err.is_err());
    }

    #[test]
    fn sparsity_one_gives_deterministic_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_mdp(6, 3, 0.9, Some(1), &mut rng).unwrap();
        for s in 0..6 {
            for a in 0..3 {
                let row = m.row(s, a);
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), 5);
            }
        }
    }

    #[test]
    fn generated_rows_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..1000 {
            let n = 2 + i % 5;
            let sparsity = if i % 3 == 0 { Some(1 + i % n) } else { None };
            let m = random_mdp(n, 1 + i % 3, 0.5, sparsity, &mut rng).unwrap();
            for s in 0..n {
                for a in 0..m.n_actions() {
                    let sum: f64 = m.row(s, a).iter().sum();
                    assert!((sum - 1.0).abs() <= ROW_TOL);
                }
            }
            assert!(m.rewards().iter().all(|r| (-1.0..=1.0).contains(r)));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = random_mdp(5, 2, 0.9, None, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = random_mdp(5, 2, 0.9, None, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rewards_depend_on_arrival_state_only() {
        // same state sequence under different actions -> same rewards
        let m = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, r_a) = m.step(1, 0, &mut rng).unwrap();
        let (_, r_b) = m.step(1, 1, &mut rng).unwrap();
        assert_eq!(r_a, r_b);
    }
}
