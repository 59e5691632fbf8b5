use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{log_sum_exp, Weights};
use crate::error::{shape_err, Error, Result};
use crate::numkit::{huber, Adam, Graph, Mlp, Parameters, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub c: usize,
    pub goal_dim: usize,
    pub f_hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
    pub huber_delta: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            obs_dim: crate::envs::DEFAULT_OBS_DIM,
            action_dim: 2,
            c: 10,
            goal_dim: 2,
            f_hidden: vec![100, 100],
            phi_hidden: vec![400, 300],
            huber_delta: 1.0,
        }
    }
}

impl EnergyConfig {
    /// Width of the flattened action sequence fed to the φ-net.
    pub fn seq_dim(&self) -> usize {
        self.c * self.action_dim
    }

    fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.action_dim == 0 || self.c == 0 || self.goal_dim == 0 {
            return Err(Error::Invalid(format!("degenerate energy model dimensions {self:?}")));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Invalid(format!("Huber delta {}", self.huber_delta)));
        }
        Ok(())
    }
}

/// Representation `f`, inverse goal model `φ(s, π) = f(s) + φ_net(s ⊕ a)`
/// and the Huber distance between them.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    cfg: EnergyConfig,
    f_net: Mlp,
    phi_net: Mlp,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

/// `Σ_j huber(a_j - b_j)`
pub fn huber_distance(a: &[f64], b: &[f64], delta: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| huber(x - y, delta)).sum()
}

/// `log (1/n) Σ exp(x)` with max-shift.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

impl EnergyModel {
    pub fn new<R: Rng + ?Sized>(cfg: EnergyConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let f_net = Mlp::new(&sizes(cfg.obs_dim, &cfg.f_hidden, cfg.goal_dim), rng);
        let phi_net = Mlp::new(&sizes(cfg.obs_dim + cfg.seq_dim(), &cfg.phi_hidden, cfg.goal_dim), rng);
        Ok(Self { cfg, f_net, phi_net })
    }

    pub fn from_nets(cfg: EnergyConfig, f_net: Mlp, phi_net: Mlp) -> Result<Self> {
        cfg.validate()?;
        let ok = f_net.input_dim() == cfg.obs_dim
            && f_net.output_dim() == cfg.goal_dim
            && phi_net.input_dim() == cfg.obs_dim + cfg.seq_dim()
            && phi_net.output_dim() == cfg.goal_dim;
        if !ok {
            return Err(shape_err("EnergyModel::from_nets", "network widths do not match the config"));
        }
        Ok(Self { cfg, f_net, phi_net })
    }

    pub fn config(&self) -> &EnergyConfig {
        &self.cfg
    }

    pub fn f_net(&self) -> &Mlp {
        &self.f_net
    }

    pub fn f_net_mut(&mut self) -> &mut Mlp {
        &mut self.f_net
    }

    pub fn phi_net(&self) -> &Mlp {
        &self.phi_net
    }

    pub fn delta(&self) -> f64 {
        self.cfg.huber_delta
    }

    pub fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.f_net.predict_one(obs)
    }

    pub fn encode_batch(&self, obs: &Tensor) -> Result<Tensor> {
        self.f_net.predict(obs)
    }

    fn check_seq(&self, a_seq: &[f64]) -> Result<()> {
        if a_seq.len() != self.cfg.seq_dim() {
            return Err(shape_err(
                "phi",
                format!("action sequence has {} entries, expected {}", a_seq.len(), self.cfg.seq_dim()),
            ));
        }
        Ok(())
    }

    pub fn phi(&self, obs: &[f64], a_seq: &[f64]) -> Result<Vec<f64>> {
        self.check_seq(a_seq)?;
        let mut input = obs.to_vec();
        input.extend_from_slice(a_seq);
        let base = self.encode(obs)?;
        let res = self.phi_net.predict_one(&input)?;
        Ok(base.iter().zip(res).map(|(a, b)| a + b).collect())
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        huber_distance(a, b, self.cfg.huber_delta)
    }

    /// `exp(-D(f(s'), φ(s, a)))`
    pub fn energy(&self, s_next: &[f64], s: &[f64], a_seq: &[f64]) -> Result<f64> {
        Ok((-self.distance(&self.encode(s_next)?, &self.phi(s, a_seq)?)).exp())
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.f_net.named_tensors("f");
        out.extend(self.phi_net.named_tensors("phi"));
        out
    }
}

impl Parameters for EnergyModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.f_net.tensors();
        t.extend(self.phi_net.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.f_net.tensors_mut();
        t.extend(self.phi_net.tensors_mut());
        t
    }
}

/// `log (1/|S̃|) Σ_s̃ exp(-D(f(s̃), φ(s_t, a)))`. Every energy is at most 1,
/// so the result is at most 0.
pub fn est_log_part(model: &EnergyModel, negatives: &[Vec<f64>], s_t: &[f64], a_seq: &[f64]) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Invalid("log-partition estimate needs at least one negative".into()));
    }
    let phi = model.phi(s_t, a_seq)?;
    let f_neg = model.encode_batch(&Tensor::from_rows(negatives)?)?;
    let logs: Vec<f64> = (0..negatives.len()).map(|j| -model.distance(f_neg.row(j), &phi)).collect();
    Ok(log_mean_exp(&logs))
}

/// `D(f(s'), φ) + exp(-D(f(s̃), φ) - L)` for one window, evaluated without
/// a graph.
pub fn comp_repr_loss(
    model: &EnergyModel,
    s_t: &[f64],
    s_next: &[f64],
    a_seq: &[f64],
    s_neg: &[f64],
    log_part: f64,
) -> Result<f64> {
    let phi = model.phi(s_t, a_seq)?;
    let att = model.distance(&model.encode(s_next)?, &phi);
    let rep = (-model.distance(&model.encode(s_neg)?, &phi) - log_part).exp();
    Ok(att + rep)
}

/// `B` windows `(s_t, a_{t:t+c-1}, k, s_{t+k})` plus one negative state per
/// window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReprBatch {
    pub s_t: Vec<Vec<f64>>,
    pub a_seq: Vec<Vec<f64>>,
    pub k: Vec<usize>,
    pub s_tk: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

impl ReprBatch {
    pub fn len(&self) -> usize {
        self.s_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_t.is_empty()
    }

    fn validate(&self, cfg: &EnergyConfig) -> Result<()> {
        let b = self.len();
        if b == 0 {
            return Err(Error::Invalid("empty representation batch".into()));
        }
        if self.a_seq.len() != b || self.k.len() != b || self.s_tk.len() != b || self.negatives.len() != b {
            return Err(shape_err("ReprBatch", "field lengths differ"));
        }
        if let Some(&k) = self.k.iter().find(|&&k| k == 0 || k > cfg.c) {
            return Err(Error::OutOfRange {
                what: "k",
                index: k,
                limit: cfg.c + 1,
            });
        }
        Ok(())
    }
}

/// `w_k γ^(k-1)` for each sampled offset.
pub fn sample_weights(k: &[usize], w: &Weights) -> Vec<f64> {
    k.iter().map(|&k| w.discounted(k)).collect()
}

/// The batch loss as a graph, with handles to every parameter binding.
pub struct LossGraph {
    pub loss: Var,
    /// One binding of the f-net per forward pass (`s_t`, `s_{t+k}`, `s̃`).
    pub f_bindings: Vec<Vec<Var>>,
    pub phi_binding: Vec<Var>,
}

impl LossGraph {
    /// Gradients in [`Parameters::tensors`] order, summing the f-net's
    /// bindings.
    pub fn gradients(&self, g: &Graph, root_grads: &crate::numkit::Gradients) -> Vec<Tensor> {
        let pick = |vars: &[Var]| -> Vec<Tensor> {
            vars.iter()
                .map(|&v| root_grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
                .collect()
        };
        let mut f_grads = pick(&self.f_bindings[0]);
        for binding in &self.f_bindings[1..] {
            for (acc, t) in f_grads.iter_mut().zip(pick(binding)) {
                for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                    *a += b;
                }
            }
        }
        f_grads.extend(pick(&self.phi_binding));
        f_grads
    }
}

impl EnergyModel {
    /// `L_i` for every window against the whole negative batch.
    pub fn log_partitions(&self, batch: &ReprBatch) -> Result<Vec<f64>> {
        batch.validate(&self.cfg)?;
        let phi = self.phi_batch(&batch.s_t, &batch.a_seq)?;
        let f_neg = self.encode_batch(&Tensor::from_rows(&batch.negatives)?)?;
        Ok((0..batch.len())
            .map(|i| {
                let logs: Vec<f64> = (0..batch.len()).map(|j| -self.distance(f_neg.row(j), phi.row(i))).collect();
                log_mean_exp(&logs)
            })
            .collect())
    }

    pub fn phi_batch(&self, s_t: &[Vec<f64>], a_seq: &[Vec<f64>]) -> Result<Tensor> {
        let inputs: Vec<Vec<f64>> = s_t
            .iter()
            .zip(a_seq)
            .map(|(s, a)| {
                self.check_seq(a)?;
                Ok(s.iter().chain(a).copied().collect())
            })
            .collect::<Result<_>>()?;
        let base = self.encode_batch(&Tensor::from_rows(s_t)?)?;
        let res = self.phi_net.predict(&Tensor::from_rows(&inputs)?)?;
        Tensor::new(base.shape().to_vec(), base.data().iter().zip(res.data()).map(|(a, b)| a + b).collect())
    }

    /// `(1/B) Σ_i weight_i (D(f(s_{t+k}), φ_i) + exp(-D(f(s̃_i), φ_i) - L_i))`
    /// with `L` entering as a constant.
    pub fn build_loss(&self, g: &mut Graph, batch: &ReprBatch, weights: &[f64], log_parts: &[f64]) -> Result<LossGraph> {
        batch.validate(&self.cfg)?;
        let b = batch.len();
        if weights.len() != b || log_parts.len() != b {
            return Err(shape_err("build_loss", "weights or log-partitions do not match the batch"));
        }
        let delta = self.cfg.huber_delta;
        let s_t = g.constant(Tensor::from_rows(&batch.s_t)?);
        let a = g.constant(Tensor::from_rows(&batch.a_seq)?);
        let s_tk = g.constant(Tensor::from_rows(&batch.s_tk)?);
        let neg = g.constant(Tensor::from_rows(&batch.negatives)?);

        let f_st = self.f_net.forward(g, s_t)?;
        let phi_in = g.concat_cols(s_t, a)?;
        let phi_res = self.phi_net.forward(g, phi_in)?;
        let phi = g.add(f_st.out, phi_res.out)?;

        let f_next = self.f_net.forward(g, s_tk)?;
        let diff = g.sub(f_next.out, phi)?;
        let h = g.huber(diff, delta);
        let att = g.sum_rows(h)?;

        let f_neg = self.f_net.forward(g, neg)?;
        let diff_neg = g.sub(f_neg.out, phi)?;
        let h_neg = g.huber(diff_neg, delta);
        let d_neg = g.sum_rows(h_neg)?;
        let l = g.constant(Tensor::new(vec![b, 1], log_parts.to_vec())?);
        let l = g.stop_gradient(l);
        let arg = g.add(d_neg, l)?;
        let arg = g.neg(arg);
        let rep = g.exp(arg);

        let per = g.add(att, rep)?;
        let w = g.constant(Tensor::new(vec![b, 1], weights.to_vec())?);
        let weighted = g.mul(per, w)?;
        let loss = g.mean(weighted);
        Ok(LossGraph {
            loss,
            f_bindings: vec![f_st.params, f_next.params, f_neg.params],
            phi_binding: phi_res.params,
        })
    }
}

/// Outcome of one representation update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReprStep {
    /// Mean weighted loss before the update.
    pub loss: f64,
    /// The update was refused because the loss or a gradient was not finite.
    pub skipped: bool,
}

/// One Adam step on `θ = [θ_f, θ_φ]`.
pub fn repr_train_step(model: &mut EnergyModel, batch: &ReprBatch, opt: &mut Adam, w: &Weights) -> Result<ReprStep> {
    let log_parts = model.log_partitions(batch)?;
    let weights = sample_weights(&batch.k, w);
    let mut g = Graph::new();
    let lg = model.build_loss(&mut g, batch, &weights, &log_parts)?;
    let loss = g.value(lg.loss).item();
    if !loss.is_finite() {
        return Ok(ReprStep { loss, skipped: true });
    }
    let grads = lg.gradients(&g, &g.backward(lg.loss)?);
    let skipped = match opt.step(&mut model.tensors_mut(), &grads) {
        Ok(()) => false,
        Err(Error::NonFinite(_)) => true,
        Err(e) => return Err(e),
    };
    Ok(ReprStep { loss, skipped })
}
