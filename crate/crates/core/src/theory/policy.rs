use serde::{Deserialize, Serialize};

use crate::divergence::Categorical;
use crate::envs::TabularMdp;
use crate::error::{Error, Result};

/// Largest `|A|^c` the exhaustive searches will enumerate.
pub const ENUMERATION_LIMIT: u128 = 100_000;

/// A fixed action sequence `a_0 .. a_{c-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpenLoopPolicy(Vec<usize>);

impl OpenLoopPolicy {
    pub fn new(actions: Vec<usize>, n_actions: usize) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Invalid("open-loop policy of length 0".into()));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::OutOfRange {
                what: "action",
                index: a,
                limit: n_actions,
            });
        }
        Ok(Self(actions))
    }

    /// The `index`-th sequence in lexicographic order (first action most
    /// significant).
    pub fn from_index(mut index: usize, n_actions: usize, c: usize) -> Self {
        let mut actions = vec![0; c];
        for slot in actions.iter_mut().rev() {
            *slot = index % n_actions;
            index /= n_actions;
        }
        Self(actions)
    }

    pub fn index(&self, n_actions: usize) -> usize {
        self.0.iter().fold(0, |acc, &a| acc * n_actions + a)
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `|A|^c`, refusing anything above [`ENUMERATION_LIMIT`].
pub fn policy_count(n_actions: usize, c: usize) -> Result<usize> {
    let count = (n_actions as u128).checked_pow(c as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(count as usize)
}

/// Distributions of `s_{t+1} .. s_{t+len}` from the Dirac at `s`.
pub fn rollout(mdp: &TabularMdp, s: usize, actions: &[usize]) -> Vec<Vec<f64>> {
    let mut dist = vec![0.0; mdp.n_states()];
    dist[s] = 1.0;
    actions
        .iter()
        .map(|&a| {
            dist = mdp.push(&dist, a);
            dist.clone()
        })
        .collect()
}

/// `P_π(s_{t+k} | s_t = s)` for `1 ≤ k ≤ c`.
pub fn kstep_distribution(mdp: &TabularMdp, s: usize, policy: &OpenLoopPolicy, k: usize) -> Result<Categorical> {
    if s >= mdp.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: s,
            limit: mdp.n_states(),
        });
    }
    if k == 0 || k > policy.len() {
        return Err(Error::OutOfRange {
            what: "k",
            index: k,
            limit: policy.len() + 1,
        });
    }
    if let Some(&a) = policy.actions().iter().find(|&&a| a >= mdp.n_actions()) {
        return Err(Error::OutOfRange {
            what: "action",
            index: a,
            limit: mdp.n_actions(),
        });
    }
    let mut dists = rollout(mdp, s, &policy.actions()[..k]);
    let last = dists.pop().expect("k >= 1");
    // renormalize away accumulated rounding before validation
    Categorical::from_weights(&last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random_mdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn index_roundtrip_is_lexicographic() {
        let all: Vec<_> = (0..8).map(|i| OpenLoopPolicy::from_index(i, 2, 3)).collect();
        assert_eq!(all[0].actions(), &[0, 0, 0]);
        assert_eq!(all[1].actions(), &[0, 0, 1]);
        assert_eq!(all[4].actions(), &[1, 0, 0]);
        for (i, p) in all.iter().enumerate() {
            assert_eq!(p.index(2), i);
        }
        assert!(all.windows(2).all(|w| w[0].actions() < w[1].actions()));
    }

    #[test]
    fn guard_refuses_large_spaces() {
        assert_eq!(policy_count(10, 5).unwrap(), 100_000);
        assert!(matches!(policy_count(10, 6), Err(Error::EnumerationGuard { .. })));
        assert!(matches!(policy_count(3, 200), Err(Error::EnumerationGuard { .. })));
    }

    #[test]
    fn deterministic_row_gives_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mdp(4, 2, 0.9, Some(1), &mut rng).unwrap();
        let p = OpenLoopPolicy::new(vec![1], 2).unwrap();
        let d = kstep_distribution(&m, 0, &p, 1).unwrap();
        assert_eq!(d.probs().iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn composition_matches_direct_call() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_mdp(5, 3, 0.9, None, &mut rng).unwrap();
        let p = OpenLoopPolicy::new(vec![2, 0], 3).unwrap();
        let one = kstep_distribution(&m, 1, &p, 1).unwrap();
        let composed = m.push(one.probs(), 0);
        let direct = kstep_distribution(&m, 1, &p, 2).unwrap();
        for (a, b) in composed.iter().zip(direct.probs()) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn three_step_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mdp(4, 2, 0.9, None, &mut rng).unwrap();
        let p = OpenLoopPolicy::new(vec![1, 0, 1], 2).unwrap();
        let exact = kstep_distribution(&m, 2, &p, 3).unwrap();
        let n = 1_000_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let mut s = 2;
            for &a in p.actions() {
                s = m.step(s, a, &mut rng).unwrap().0;
            }
            counts[s] += 1;
        }
        for (i, &q) in exact.probs().iter().enumerate() {
            let sigma = (q * (1.0 - q) / n as f64).sqrt();
            let freq = counts[i] as f64 / n as f64;
            assert!((freq - q).abs() <= 3.0 * sigma + 1e-12, "state {i}: {freq} vs {q}");
        }
    }

    #[test]
    fn k_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_mdp(3, 2, 0.9, None, &mut rng).unwrap();
        let p = OpenLoopPolicy::new(vec![0, 1], 2).unwrap();
        assert!(kstep_distribution(&m, 0, &p, 0).is_err());
        assert!(kstep_distribution(&m, 0, &p, 3).is_err());
    }
}
