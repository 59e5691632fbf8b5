use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numkit::{Adam, AdamConfig, Graph, Mlp, Parameters, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Polyak rate for the target networks.
    pub tau: f64,
    /// Actor and target updates happen every `policy_delay` critic updates.
    pub policy_delay: usize,
    /// Target-policy smoothing noise, as a fraction of the action bound.
    pub target_noise: f64,
    pub target_noise_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![300, 300],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.actor_lr >= 0.0
            && self.critic_lr >= 0.0
            && (0.0..=1.0).contains(&self.tau)
            && self.policy_delay >= 1
            && self.target_noise >= 0.0
            && self.target_noise_clip >= 0.0;
        if !ok {
            return Err(Error::Invalid(format!("agent config {self:?}")));
        }
        Ok(())
    }
}

/// One-step (or `n`-step) experience with a per-sample bootstrap factor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TdBatch {
    /// Policy inputs at the start, e.g. `obs ⊕ goal`.
    pub input: Vec<Vec<f64>>,
    pub action: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub next_input: Vec<Vec<f64>>,
    /// `γ^n`, or 0 after a terminal step.
    pub discount: Vec<f64>,
}

impl TdBatch {
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    fn validate(&self, input_dim: usize, action_dim: usize) -> Result<()> {
        let b = self.len();
        if b == 0
            || self.action.len() != b
            || self.reward.len() != b
            || self.next_input.len() != b
            || self.discount.len() != b
        {
            return Err(shape_err("TdBatch", "field lengths differ or batch is empty"));
        }
        if self.input.iter().chain(&self.next_input).any(|r| r.len() != input_dim)
            || self.action.iter().any(|a| a.len() != action_dim)
        {
            return Err(shape_err("TdBatch", "row width mismatch"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateLosses {
    pub critic: f64,
    /// `None` on steps without an actor update.
    pub actor: Option<f64>,
    /// A loss or gradient was non-finite and the update was refused.
    pub skipped: bool,
}

/// Deterministic actor `bound · tanh(net(x))` with a single critic `Q(x, a)`
/// and Polyak-averaged targets.
#[derive(Clone, Debug)]
pub struct ActorCritic {
    cfg: AgentConfig,
    input_dim: usize,
    action_dim: usize,
    bound: f64,
    actor: Mlp,
    critic: Mlp,
    actor_target: Mlp,
    critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    updates: u64,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

fn concat_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().chain(y).copied().collect()).collect()
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(
        cfg: AgentConfig,
        input_dim: usize,
        action_dim: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 || action_dim == 0 || !(bound > 0.0) {
            return Err(Error::Invalid(format!("actor-critic dims {input_dim}→{action_dim}, bound {bound}")));
        }
        let actor = Mlp::new(&layer_sizes(input_dim, &cfg.hidden, action_dim), rng);
        let critic = Mlp::new(&layer_sizes(input_dim + action_dim, &cfg.hidden, 1), rng);
        Ok(Self::from_nets(cfg, actor, critic, bound))
    }

    pub fn from_nets(cfg: AgentConfig, actor: Mlp, critic: Mlp, bound: f64) -> Self {
        let actor_opt = Adam::new(&actor.tensors(), AdamConfig::with_lr(cfg.actor_lr));
        let critic_opt = Adam::new(&critic.tensors(), AdamConfig::with_lr(cfg.critic_lr));
        Self {
            input_dim: actor.input_dim(),
            action_dim: actor.output_dim(),
            bound,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            updates: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn actor_target(&self) -> &Mlp {
        &self.actor_target
    }

    pub fn critic_target(&self) -> &Mlp {
        &self.critic_target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Every trainable and target tensor, for checkpoints and hashing.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = self.actor.named_tensors(&format!("{prefix}.actor"));
        out.extend(self.critic.named_tensors(&format!("{prefix}.critic")));
        out.extend(self.actor_target.named_tensors(&format!("{prefix}.actor_target")));
        out.extend(self.critic_target.named_tensors(&format!("{prefix}.critic_target")));
        out
    }

    pub fn tensors_mut_all(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.actor.tensors_mut();
        out.extend(self.critic.tensors_mut());
        out.extend(self.actor_target.tensors_mut());
        out.extend(self.critic_target.tensors_mut());
        out
    }

    /// `bound · tanh(actor(x))` for a batch.
    pub fn act_batch(&self, input: &Tensor) -> Result<Tensor> {
        Ok(squash(self.actor.predict(input)?, self.bound))
    }

    pub fn act(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(squash(Tensor::vector(self.actor.predict_one(input)?), self.bound).into_data())
    }

    pub fn q(&self, input: &[f64], action: &[f64]) -> Result<f64> {
        let x: Vec<f64> = input.iter().chain(action).copied().collect();
        Ok(self.critic.predict_one(&x)?[0])
    }

    /// `r + discount · Q'(x', clip(μ'(x') + noise))`
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &TdBatch, rng: &mut R) -> Result<Vec<f64>> {
        let next = Tensor::from_rows(&batch.next_input)?;
        let mut a = squash(self.actor_target.predict(&next)?, self.bound);
        if self.cfg.target_noise > 0.0 {
            let (sd, clip) = (self.cfg.target_noise * self.bound, self.cfg.target_noise_clip * self.bound);
            for v in a.data_mut() {
                let n = (sd * rng.sample::<f64, _>(StandardNormal)).clamp(-clip, clip);
                *v = (*v + n).clamp(-self.bound, self.bound);
            }
        }
        let rows: Vec<Vec<f64>> = (0..batch.len()).map(|i| a.row(i).to_vec()).collect();
        let q = self.critic_target.predict(&Tensor::from_rows(&concat_rows(&batch.next_input, &rows))?)?;
        Ok((0..batch.len()).map(|i| batch.reward[i] + batch.discount[i] * q.data()[i]).collect())
    }

    /// `mean (Q(x, a) - y)²` on a fresh graph.
    pub fn critic_loss(&self, g: &mut Graph, input: &[Vec<f64>], action: &[Vec<f64>], y: &[f64]) -> Result<(Var, Vec<Var>)> {
        let x = g.constant(Tensor::from_rows(&concat_rows(input, action))?);
        let q = self.critic.forward(g, x)?;
        let y = g.constant(Tensor::new(vec![y.len(), 1], y.to_vec())?);
        let d = g.sub(q.out, y)?;
        let sq = g.square(d);
        Ok((g.mean(sq), q.params))
    }

    /// `-mean Q(x, μ(x))` with the critic held fixed.
    pub fn actor_loss(&self, g: &mut Graph, input: &[Vec<f64>]) -> Result<(Var, Vec<Var>)> {
        let x = g.constant(Tensor::from_rows(input)?);
        let mu = self.actor.forward(g, x)?;
        let t = g.tanh(mu.out);
        let a = g.scale(t, self.bound);
        let xa = g.concat_cols(x, a)?;
        let q = self.critic.forward_frozen(g, xa)?;
        let m = g.mean(q);
        Ok((g.neg(m), mu.params))
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &TdBatch, rng: &mut R) -> Result<UpdateLosses> {
        batch.validate(self.input_dim, self.action_dim)?;
        let y = self.critic_targets(batch, rng)?;
        let mut g = Graph::new();
        let (loss, params) = self.critic_loss(&mut g, &batch.input, &batch.action, &y)?;
        let critic = g.value(loss).item();
        let mut out = UpdateLosses {
            critic,
            actor: None,
            skipped: false,
        };
        if !critic.is_finite() {
            out.skipped = true;
            return Ok(out);
        }
        let grads = g.backward(loss)?;
        let grads: Vec<Tensor> = params
            .iter()
            .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect();
        if skip_on_nonfinite(self.critic_opt.step(&mut self.critic.tensors_mut(), &grads))? {
            out.skipped = true;
            return Ok(out);
        }
        self.updates += 1;
        if self.updates % self.cfg.policy_delay as u64 == 0 {
            let mut g = Graph::new();
            let (loss, params) = self.actor_loss(&mut g, &batch.input)?;
            let actor = g.value(loss).item();
            out.actor = Some(actor);
            if !actor.is_finite() {
                out.skipped = true;
                return Ok(out);
            }
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = params
                .iter()
                .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
                .collect();
            if skip_on_nonfinite(self.actor_opt.step(&mut self.actor.tensors_mut(), &grads))? {
                out.skipped = true;
                return Ok(out);
            }
            self.actor_target.soft_update_from(&self.actor, self.cfg.tau);
            self.critic_target.soft_update_from(&self.critic, self.cfg.tau);
        }
        Ok(out)
    }
}

fn skip_on_nonfinite(r: Result<()>) -> Result<bool> {
    match r {
        Ok(()) => Ok(false),
        Err(Error::NonFinite(_)) => Ok(true),
        Err(e) => Err(e),
    }
}

fn squash(mut t: Tensor, bound: f64) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| *v = bound * v.tanh());
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(cfg: AgentConfig, input: usize, action: usize, seed: u64) -> ActorCritic {
        ActorCritic::new(cfg, input, action, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn cfg(hidden: usize) -> AgentConfig {
        AgentConfig {
            hidden: vec![hidden, hidden],
            ..AgentConfig::default()
        }
    }

    #[test]
    fn actions_respect_the_bound() {
        let ac = ActorCritic::new(cfg(16), 3, 2, 10.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-100.0..100.0)).collect();
            assert!(ac.act(&x).unwrap().iter().all(|a| a.abs() <= 10.0));
        }
    }

    #[test]
    fn zero_learning_rates_leave_parameters_unchanged() {
        let c = AgentConfig {
            actor_lr: 0.0,
            critic_lr: 0.0,
            tau: 0.0,
            policy_delay: 1,
            ..cfg(8)
        };
        let mut ac = small(c, 2, 1, 2);
        let before = (ac.actor.clone(), ac.critic.clone(), ac.actor_target.clone(), ac.critic_target.clone());
        let batch = TdBatch {
            input: vec![vec![0.1, 0.2]; 4],
            action: vec![vec![0.3]; 4],
            reward: vec![1.0; 4],
            next_input: vec![vec![0.0, 0.5]; 4],
            discount: vec![0.9; 4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = ac.update(&batch, &mut rng).unwrap();
        assert!(l.critic.is_finite() && l.actor.is_some() && !l.skipped);
        assert_eq!((ac.actor, ac.critic, ac.actor_target, ac.critic_target), before);
    }

    #[test]
    fn zero_discount_critic_fits_rewards() {
        let mut ac = small(cfg(32), 2, 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 8.0, 1.0 - i as f64 / 8.0]).collect();
        let action: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64 - 4.0) / 4.0]).collect();
        let reward: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let batch = TdBatch {
            input: input.clone(),
            action: action.clone(),
            reward: reward.clone(),
            next_input: input.clone(),
            discount: vec![0.0; 8],
        };
        for _ in 0..3000 {
            ac.update(&batch, &mut rng).unwrap();
        }
        for i in 0..8 {
            let q = ac.q(&input[i], &action[i]).unwrap();
            assert!((q - reward[i]).abs() < 0.02, "{i}: {q} vs {}", reward[i]);
        }
    }

    #[test]
    fn constant_reward_critic_reaches_the_geometric_sum() {
        // a single action: the actor is frozen at 0 and targets are not
        // smoothed. Targets track faster than the maze default, whose Polyak
        // lag alone is ~8k updates at γ = 0.9.
        let c = AgentConfig {
            actor_lr: 0.0,
            tau: 0.05,
            policy_delay: 1,
            target_noise: 0.0,
            ..cfg(32)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut actor = Mlp::new(&[1, 32, 32, 1], &mut rng);
        actor.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
        let critic = Mlp::new(&[2, 32, 32, 1], &mut rng);
        let mut ac = ActorCritic::from_nets(c, actor, critic, 1.0);
        let batch = TdBatch {
            input: vec![vec![1.0]; 16],
            action: vec![vec![0.0]; 16],
            reward: vec![1.0; 16],
            next_input: vec![vec![1.0]; 16],
            discount: vec![0.9; 16],
        };
        for _ in 0..5000 {
            ac.update(&batch, &mut rng).unwrap();
        }
        assert_eq!(ac.act(&[1.0]).unwrap(), vec![0.0]);
        let q = ac.q(&[1.0], &[0.0]).unwrap();
        assert!((q - 10.0).abs() < 0.1, "Q = {q}");
    }

    #[test]
    fn malformed_batch_is_rejected() {
        let mut ac = small(cfg(4), 2, 1, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bad = TdBatch {
            input: vec![vec![0.0; 3]],
            action: vec![vec![0.0]],
            reward: vec![0.0],
            next_input: vec![vec![0.0; 3]],
            discount: vec![0.0],
        };
        assert!(ac.update(&bad, &mut rng).is_err());
        assert!(ac.update(&TdBatch::default(), &mut rng).is_err());
    }
}
