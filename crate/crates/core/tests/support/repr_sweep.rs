//! Gradient check of the representation loss over random models.

#![allow(dead_code)]

use goalrepr::divergence::weights;
use goalrepr::numkit::{Graph, Tensor};
use goalrepr::repr::{comp_repr_loss, sample_weights, EnergyConfig, EnergyModel, ReprBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use super::gradcheck::{self, FdStats};

pub fn random_batch<R: Rng>(cfg: &EnergyConfig, b: usize, rng: &mut R) -> ReprBatch {
    let obs = |rng: &mut R| (0..cfg.obs_dim).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>();
    let mut batch = ReprBatch::default();
    for _ in 0..b {
        batch.s_t.push(obs(rng));
        batch.a_seq.push((0..cfg.seq_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        batch.k.push(rng.gen_range(1..=cfg.c));
        batch.s_tk.push(obs(rng));
        batch.negatives.push(obs(rng));
    }
    batch
}

/// Relu patterns of both nets on every input, plus the Huber branch of
/// every coordinate difference.
pub fn region(m: &EnergyModel, batch: &ReprBatch) -> Vec<bool> {
    let mut out = Vec::new();
    for rows in [&batch.s_t, &batch.s_tk, &batch.negatives] {
        out.extend(m.f_net().activation_pattern(&Tensor::from_rows(rows).unwrap()).unwrap());
    }
    let phi_in: Vec<Vec<f64>> = batch.s_t.iter().zip(&batch.a_seq).map(|(s, a)| s.iter().chain(a).copied().collect()).collect();
    out.extend(m.phi_net().activation_pattern(&Tensor::from_rows(&phi_in).unwrap()).unwrap());
    let delta = m.delta();
    for i in 0..batch.len() {
        let phi = m.phi(&batch.s_t[i], &batch.a_seq[i]).unwrap();
        for other in [&batch.s_tk[i], &batch.negatives[i]] {
            let f = m.encode(other).unwrap();
            out.extend(f.iter().zip(&phi).flat_map(|(a, b)| [a - b > delta, a - b < -delta]));
        }
    }
    out
}

/// Reruns the gradient check over `instances` random models of `cfg`.
pub fn sweep(cfg: &EnergyConfig, gamma: f64, b: usize, instances: u64, per_tensor: usize) -> FdStats {
    let w = weights(cfg.c, gamma).unwrap();
    let mut total = FdStats::default();
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = EnergyModel::new(cfg.clone(), &mut rng).unwrap();
        let batch = random_batch(cfg, b, &mut rng);
        let lw = sample_weights(&batch.k, &w);
        // L is held at its value for the unperturbed model
        let lp = m.log_partitions(&batch).unwrap();
        let mut g = Graph::new();
        let lg = m.build_loss(&mut g, &batch, &lw, &lp).unwrap();
        let analytic = lg.gradients(&g, &g.backward(lg.loss).unwrap());
        let loss = |m: &EnergyModel| {
            (0..b)
                .map(|i| {
                    lw[i] * comp_repr_loss(m, &batch.s_t[i], &batch.s_tk[i], &batch.a_seq[i], &batch.negatives[i], lp[i])
                        .unwrap()
                })
                .sum::<f64>()
                / b as f64
        };
        let stats = gradcheck::check(&m, &analytic, per_tensor, &mut rng, loss, |m| region(m, &batch));
        total.merge(stats);
    }
    total
}
