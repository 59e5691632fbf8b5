//! Gradient check of the actor and critic losses over random policies.

#![allow(dead_code)]

use goalrepr::hrl::{ActorCritic, AgentConfig};
use goalrepr::numkit::{Graph, Mlp, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use super::gradcheck::{self, FdStats};

pub const B: usize = 8;

pub fn rows<R: Rng>(n: usize, dim: usize, scale: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

pub fn join(a: &[Vec<f64>], b: &[Vec<f64>]) -> Tensor {
    let r: Vec<Vec<f64>> = a.iter().zip(b).map(|(x, y)| x.iter().chain(y).copied().collect()).collect();
    Tensor::from_rows(&r).unwrap()
}

pub fn greedy(actor: &Mlp, x: &[Vec<f64>], bound: f64) -> Vec<Vec<f64>> {
    let out = actor.predict(&Tensor::from_rows(x).unwrap()).unwrap();
    (0..x.len()).map(|i| out.row(i).iter().map(|v| bound * v.tanh()).collect()).collect()
}

/// Critic and actor losses of one randomly initialized policy, checked
/// against losses recomputed from plain forward passes.
pub fn sweep(input_dim: usize, action_dim: usize, bound: f64, instances: u64) -> (FdStats, FdStats) {
    let (mut critic_stats, mut actor_stats) = (FdStats::default(), FdStats::default());
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let cfg = AgentConfig::default();
        let ac = ActorCritic::new(cfg.clone(), input_dim, action_dim, bound, &mut rng).unwrap();
        let x = rows(B, input_dim, 3.0, &mut rng);
        let a = rows(B, action_dim, bound, &mut rng);
        let y: Vec<f64> = (0..B).map(|_| rng.gen_range(-5.0..5.0)).collect();

        let mut g = Graph::new();
        let (loss, params) = ac.critic_loss(&mut g, &x, &a, &y).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic: Vec<Tensor> = params.iter().map(|&v| grads.get(v).unwrap().clone()).collect();
        let xa = join(&x, &a);
        let critic_loss = |c: &Mlp| {
            let q = c.predict(&xa).unwrap();
            (0..B).map(|i| (q.data()[i] - y[i]).powi(2)).sum::<f64>() / B as f64
        };
        let region = |c: &Mlp| c.activation_pattern(&xa).unwrap();
        critic_stats.merge(gradcheck::check(ac.critic(), &analytic, 6, &mut rng, critic_loss, region));

        let mut g = Graph::new();
        let (loss, params) = ac.actor_loss(&mut g, &x).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic: Vec<Tensor> = params.iter().map(|&v| grads.get(v).unwrap().clone()).collect();
        let critic = ac.critic().clone();
        let xt = Tensor::from_rows(&x).unwrap();
        let actor_loss = |m: &Mlp| {
            let q = critic.predict(&join(&x, &greedy(m, &x, bound))).unwrap();
            -q.data().iter().sum::<f64>() / B as f64
        };
        let region = |m: &Mlp| {
            let mut r = m.activation_pattern(&xt).unwrap();
            r.extend(critic.activation_pattern(&join(&x, &greedy(m, &x, bound))).unwrap());
            r
        };
        actor_stats.merge(gradcheck::check(ac.actor(), &analytic, 6, &mut rng, actor_loss, region));
    }
    (critic_stats, actor_stats)
}
