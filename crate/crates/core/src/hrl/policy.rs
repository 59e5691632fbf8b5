use rand::Rng;
use rand_distr::StandardNormal;

use super::agent::{ActorCritic, TdBatch, UpdateLosses};
use crate::error::{Error, Result};
use crate::repr::{huber_distance, EnergyModel};

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn perturb<R: Rng + ?Sized>(mut a: Vec<f64>, sigma: f64, bound: f64, rng: &mut R) -> Vec<f64> {
    for v in &mut a {
        *v = (*v + sigma * rng.sample::<f64, _>(StandardNormal)).clamp(-bound, bound);
    }
    a
}

/// Goal-conditioned controller acting on `obs ⊕ goal`.
#[derive(Clone, Debug)]
pub struct LowPolicy {
    pub ac: ActorCritic,
    /// Exploration noise in action units.
    pub sigma: f64,
}

/// Relabeled single step for the low level.
#[derive(Clone, Debug, PartialEq)]
pub struct LowTuple {
    pub goal: Vec<f64>,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// `w_k γ^(k-1)`, possibly normalized.
    pub weight: f64,
    pub terminal: bool,
}

impl LowPolicy {
    pub fn act(&self, obs: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        self.ac.act(&cat(obs, goal))
    }

    pub fn explore<R: Rng + ?Sized>(&self, obs: &[f64], goal: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(perturb(self.act(obs, goal)?, self.sigma, self.ac.bound(), rng))
    }
}

/// Weighted rewards, one-step bootstrap with discount `γ`.
pub fn low_update<R: Rng + ?Sized>(
    policy: &mut LowPolicy,
    tuples: &[LowTuple],
    gamma: f64,
    rng: &mut R,
) -> Result<UpdateLosses> {
    let batch = TdBatch {
        input: tuples.iter().map(|t| cat(&t.obs, &t.goal)).collect(),
        action: tuples.iter().map(|t| t.action.clone()).collect(),
        reward: tuples.iter().map(|t| t.weight * t.reward).collect(),
        next_input: tuples.iter().map(|t| cat(&t.next_obs, &t.goal)).collect(),
        discount: tuples.iter().map(|t| if t.terminal { 0.0 } else { gamma }).collect(),
    };
    policy.ac.update(&batch, rng)
}

/// Goal setter acting on `obs ⊕ context`; its action is a goal offset.
#[derive(Clone, Debug)]
pub struct HighPolicy {
    pub ac: ActorCritic,
    pub sigma: f64,
}

/// One decision: the offset chosen at `s_t` and what followed.
#[derive(Clone, Debug, PartialEq)]
pub struct HighTuple {
    pub obs: Vec<f64>,
    pub context: Vec<f64>,
    pub delta: Vec<f64>,
    /// Environment rewards `r_1 .. r_n`, `n ≤ c`.
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

impl HighPolicy {
    pub fn act(&self, obs: &[f64], context: &[f64]) -> Result<Vec<f64>> {
        self.ac.act(&cat(obs, context))
    }

    pub fn explore<R: Rng + ?Sized>(&self, obs: &[f64], context: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(perturb(self.act(obs, context)?, self.sigma, self.ac.bound(), rng))
    }
}

/// `Σ_{k=1..n} γ^(k-1) r_k`
pub fn aggregate_reward(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Aggregated rewards times `scale`, bootstrapped with `γ^n`.
pub fn high_update<R: Rng + ?Sized>(
    policy: &mut HighPolicy,
    tuples: &[HighTuple],
    gamma: f64,
    scale: f64,
    rng: &mut R,
) -> Result<UpdateLosses> {
    let batch = TdBatch {
        input: tuples.iter().map(|t| cat(&t.obs, &t.context)).collect(),
        action: tuples.iter().map(|t| t.delta.clone()).collect(),
        reward: tuples.iter().map(|t| scale * aggregate_reward(&t.rewards, gamma)).collect(),
        next_input: tuples.iter().map(|t| cat(&t.next_obs, &t.context)).collect(),
        discount: tuples
            .iter()
            .map(|t| if t.terminal { 0.0 } else { gamma.powi(t.rewards.len() as i32) })
            .collect(),
    };
    policy.ac.update(&batch, rng)
}

/// `-D(f(s'), g) + D(f(s'), φ(s_t, a)) + L`
pub fn comp_low_reward(
    goal: &[f64],
    s_t: &[f64],
    s_next: &[f64],
    a_seq: &[f64],
    log_part: f64,
    model: &EnergyModel,
) -> Result<f64> {
    let f_next = model.encode(s_next)?;
    if f_next.len() != goal.len() {
        return Err(Error::Invalid(format!("goal has {} dims, representation {}", goal.len(), f_next.len())));
    }
    let phi = model.phi(s_t, a_seq)?;
    let delta = model.delta();
    Ok(-huber_distance(&f_next, goal, delta) + huber_distance(&f_next, &phi, delta) + log_part)
}
