use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{ActorCritic, AgentConfig};
use super::policy::{high_update, low_update, HighPolicy, HighTuple, LowPolicy, LowTuple};
use super::replay::{ReplayBuffer, Stored};
use crate::divergence::{weights, Weights};
use crate::envs::{MazeConfig, MazeLayout, ObsAugmenter, PointMazeEnv, Transition};
use crate::error::{Error, Result};
use crate::numkit::{checkpoint, Adam, AdamConfig, Parameters, Tensor};
use crate::par::mix_seed;
use crate::repr::{
    huber_distance, probe_features, repr_train_step, EnergyConfig, EnergyModel, Encoder, LinearRepr, ProbeReport,
    ReprBatch,
};

/// Which representation the hierarchy plans in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// Ground-truth `(x, y)`, no representation learning.
    Xy,
    /// The raw observation.
    WholeObs,
    /// The energy-based representation, trained online.
    Learned,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Xy => "xy",
            Arm::WholeObs => "whole-obs",
            Arm::Learned => "learned",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Arm::Xy, Arm::WholeObs, Arm::Learned]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown arm '{s}' (expected xy, whole-obs or learned)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Text layout file; the built-in U maze when absent.
    pub layout: Option<PathBuf>,
    pub cell_size: f64,
    pub max_speed: f64,
    pub horizon: usize,
    pub target_radius: f64,
    pub obs_dim: usize,
    pub noise_dims: usize,
    pub noise_scale: f64,
    /// Training episodes draw a uniform free-space target; evaluation
    /// always uses the layout's goal cell.
    pub random_targets: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let maze = MazeConfig::default();
        Self {
            layout: None,
            cell_size: crate::envs::maze::DEFAULT_CELL_SIZE,
            max_speed: maze.max_speed,
            horizon: maze.horizon,
            target_radius: maze.target_radius,
            obs_dim: crate::envs::DEFAULT_OBS_DIM,
            noise_dims: crate::envs::DEFAULT_NOISE_DIMS,
            noise_scale: crate::envs::DEFAULT_NOISE_SCALE,
            random_targets: true,
        }
    }
}

impl EnvConfig {
    pub fn layout(&self) -> Result<MazeLayout> {
        match &self.layout {
            Some(p) => MazeLayout::load(p, self.cell_size),
            None if self.cell_size == crate::envs::maze::DEFAULT_CELL_SIZE => Ok(MazeLayout::default_layout()),
            None => MazeLayout::parse(crate::envs::maze::DEFAULT_LAYOUT, self.cell_size),
        }
    }

    pub fn maze(&self) -> MazeConfig {
        MazeConfig {
            max_speed: self.max_speed,
            horizon: self.horizon,
            target_radius: self.target_radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReprConfig {
    pub goal_dim: usize,
    pub f_hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
    pub huber_delta: f64,
    pub lr: f64,
}

impl Default for ReprConfig {
    fn default() -> Self {
        let e = EnergyConfig::default();
        Self {
            goal_dim: e.goal_dim,
            f_hidden: e.f_hidden,
            phi_hidden: e.phi_hidden,
            huber_delta: e.huber_delta,
            lr: AdamConfig::default().lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub arm: Arm,
    pub seed: u64,
    pub total_steps: u64,
    pub c: usize,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Uniformly random actions and offsets before learning starts.
    pub warmup_steps: u64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// High-level offsets live in `[-delta_bound, delta_bound]^d`.
    pub delta_bound: f64,
    pub high_reward_scale: f64,
    /// Multiply low-level rewards by `c · w_k γ^(k-1) / w̄`.
    pub weight_low_rewards: bool,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub probe_states: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub low: AgentConfig,
    pub high: AgentConfig,
    pub repr: ReprConfig,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arm: Arm::Learned,
            seed: 0,
            total_steps: 500_000,
            c: 10,
            gamma: 0.99,
            buffer_capacity: 200_000,
            batch_size: 64,
            warmup_steps: 1_000,
            sigma_lo: 0.3,
            sigma_hi: 5.0,
            delta_bound: 10.0,
            high_reward_scale: 0.1,
            weight_low_rewards: true,
            eval_every: 10_000,
            eval_episodes: 20,
            probe_states: 500,
            checkpoint_every: 0,
            low: AgentConfig::default(),
            high: AgentConfig::default(),
            repr: ReprConfig::default(),
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.c == 0 {
            return bad("c must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} must lie in (0, 1)", self.gamma));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.c {
            return bad(format!("batch size {} / buffer capacity {}", self.batch_size, self.buffer_capacity));
        }
        let positive = [self.sigma_lo, self.sigma_hi, self.delta_bound, self.high_reward_scale, self.repr.huber_delta];
        if positive.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || self.delta_bound == 0.0 {
            return bad("noise scales, offset bound, reward scale and Huber delta must be non-negative and finite".into());
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive".into());
        }
        if self.probe_states != 0 && self.probe_states < crate::repr::MIN_PROBE_STATES {
            return bad(format!("probe_states must be 0 or at least {}", crate::repr::MIN_PROBE_STATES));
        }
        if self.env.obs_dim < self.env.noise_dims + 2 {
            return bad(format!("obs_dim {} leaves no room for position", self.env.obs_dim));
        }
        if self.env.horizon == 0 || !(self.env.max_speed > 0.0) || !(self.env.target_radius > 0.0) {
            return bad("horizon, max_speed and target_radius must be positive".into());
        }
        self.low.validate()?;
        self.high.validate()
    }

    pub fn goal_dim(&self) -> usize {
        match self.arm {
            Arm::Xy => 2,
            Arm::WholeObs => self.env.obs_dim,
            Arm::Learned => self.repr.goal_dim,
        }
    }

    pub fn energy_config(&self) -> EnergyConfig {
        EnergyConfig {
            obs_dim: self.env.obs_dim,
            action_dim: 2,
            c: self.c,
            goal_dim: self.repr.goal_dim,
            f_hidden: self.repr.f_hidden.clone(),
            phi_hidden: self.repr.phi_hidden.clone(),
            huber_delta: self.repr.huber_delta,
        }
    }
}

/// The representation an arm plans in.
#[derive(Clone, Debug)]
pub enum Encoding {
    Fixed(LinearRepr),
    Learned(EnergyModel),
}

impl Encoder for Encoding {
    fn goal_dim(&self) -> usize {
        match self {
            Encoding::Fixed(f) => f.goal_dim(),
            Encoding::Learned(m) => Encoder::goal_dim(m),
        }
    }

    fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Encoding::Fixed(f) => f.encode(obs),
            Encoding::Learned(m) => m.encode(obs),
        }
    }
}

impl Encoding {
    pub fn model(&self) -> Option<&EnergyModel> {
        match self {
            Encoding::Learned(m) => Some(m),
            Encoding::Fixed(_) => None,
        }
    }
}

/// Everything needed to act: the representation, both policies and the
/// observation map.
#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: TrainConfig,
    pub aug: ObsAugmenter,
    pub enc: Encoding,
    pub low: LowPolicy,
    pub high: HighPolicy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub final_distance: f64,
}

/// States `(obs, x, y)` visited by one evaluation episode, start included.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub states: Vec<(Vec<f64>, f64, f64)>,
    pub success: bool,
    pub final_distance: f64,
}

/// Context given to the high level: the target position.
fn context(target: (f64, f64)) -> Vec<f64> {
    vec![target.0, target.1]
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl Agent {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
        let aug = ObsAugmenter::new(cfg.env.obs_dim, cfg.env.noise_dims, cfg.env.noise_scale, mix_seed(cfg.seed, 2))?;
        let enc = match cfg.arm {
            Arm::Xy => Encoding::Fixed(LinearRepr::xy_oracle(&aug)),
            Arm::WholeObs => Encoding::Fixed(LinearRepr::identity(cfg.env.obs_dim)),
            Arm::Learned => Encoding::Learned(EnergyModel::new(cfg.energy_config(), &mut rng)?),
        };
        let d = cfg.goal_dim();
        let low = LowPolicy {
            ac: ActorCritic::new(cfg.low.clone(), cfg.env.obs_dim + d, 2, 1.0, &mut rng)?,
            sigma: cfg.sigma_lo,
        };
        let high = HighPolicy {
            ac: ActorCritic::new(cfg.high.clone(), cfg.env.obs_dim + 2, d, cfg.delta_bound, &mut rng)?,
            sigma: cfg.sigma_hi,
        };
        Ok(Self { cfg, aug, enc, low, high })
    }

    pub fn goal(&self, obs: &[f64], delta: &[f64]) -> Result<Vec<f64>> {
        Ok(add(&self.enc.encode(obs)?, delta))
    }

    /// One deterministic episode from the start cell to the layout's goal.
    /// Observation noise is drawn from a stream fixed by `seed`.
    pub fn rollout(&self, seed: u64) -> Result<Episode> {
        let layout = self.cfg.env.layout()?;
        let mut env = PointMazeEnv::new(layout.clone(), self.cfg.env.maze());
        let ctx = context(layout.goal());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = env.reset(layout.goal());
        let mut obs = self.aug.augment(p.0, p.1, &mut rng);
        let mut states = vec![(obs.clone(), p.0, p.1)];
        let mut goal = Vec::new();
        for t in 0.. {
            if t % self.cfg.c == 0 {
                goal = self.goal(&obs, &self.high.act(&obs, &ctx)?)?;
            }
            let a = self.low.act(&obs, &goal)?;
            let out = env.step([a[0], a[1]]);
            obs = self.aug.augment(out.pos.0, out.pos.1, &mut rng);
            states.push((obs.clone(), out.pos.0, out.pos.1));
            if out.done {
                return Ok(Episode {
                    states,
                    success: out.success,
                    final_distance: env.distance_to_target(),
                });
            }
        }
        unreachable!("episodes end at the horizon")
    }

    /// Mean over `episodes` rollouts seeded from `seed`.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalResult> {
        let (mut successes, mut dist) = (0usize, 0.0);
        for e in 0..episodes {
            let ep = self.rollout(mix_seed(seed, e as u64))?;
            successes += usize::from(ep.success);
            dist += ep.final_distance;
        }
        Ok(EvalResult {
            success_rate: successes as f64 / episodes as f64,
            final_distance: dist / episodes as f64,
        })
    }

    /// Labeled states `(obs, x, y)` drawn uniformly over free space.
    pub fn labeled_states(&self, n: usize, seed: u64) -> Result<Vec<(Vec<f64>, f64, f64)>> {
        let layout = self.cfg.env.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let (x, y) = layout.sample_free_point(&mut rng);
                (self.aug.augment(x, y, &mut rng), x, y)
            })
            .collect())
    }

    pub fn probe(&self, n: usize, seed: u64) -> Result<ProbeReport> {
        let labeled = self.labeled_states(n, seed)?;
        let features = labeled.iter().map(|(o, _, _)| self.enc.encode(o)).collect::<Result<Vec<_>>>()?;
        let xy: Vec<(f64, f64)> = labeled.iter().map(|&(_, x, y)| (x, y)).collect();
        probe_features(&features, &xy)
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Encoding::Learned(m) = &self.enc {
            out.extend(m.named_tensors());
        }
        out.extend(self.low.ac.named_tensors("low"));
        out.extend(self.high.ac.named_tensors("high"));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Encoding::Learned(m) = &mut self.enc {
            out.extend(m.tensors_mut());
        }
        out.extend(self.low.ac.tensors_mut_all());
        out.extend(self.high.ac.tensors_mut_all());
        out
    }

    /// Hash of every representation parameter.
    pub fn repr_hash(&self) -> u64 {
        match &self.enc {
            Encoding::Learned(m) => hash_tensors(m.tensors()),
            Encoding::Fixed(f) => hash_tensors([&Tensor::vector(f.matrix().to_vec())]),
        }
    }

    /// Hash of every policy parameter, targets included.
    pub fn policy_hash(&self) -> u64 {
        let named = self.low.ac.named_tensors("low");
        let named_hi = self.high.ac.named_tensors("high");
        hash_tensors(named.iter().chain(&named_hi).map(|(_, t)| *t))
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        let meta = serde_json::json!({
            "config": self.cfg,
            "step": step,
        });
        checkpoint::save(path, &self.named_tensors(), &meta)
    }

    /// Rebuilds the agent from its config and overwrites every tensor.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let (tensors, meta) = checkpoint::load(path)?;
        let cfg: TrainConfig = serde_json::from_value(meta["config"].clone())?;
        let step = meta["step"].as_u64().ok_or_else(|| Error::Checkpoint("missing step".into()))?;
        let mut agent = Agent::new(cfg)?;
        let names: Vec<String> = agent.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut by_name: HashMap<String, Tensor> = tensors.into_iter().collect();
        for (name, slot) in names.iter().zip(agent.tensors_mut()) {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok((agent, step))
    }
}

/// FNV-1a over the bit patterns.
fn hash_tensors<'a>(ts: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for t in ts {
        for v in t.data() {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
    }
    h
}

/// Mean losses since the previous metrics row.
#[derive(Clone, Debug, Default)]
struct LossAcc {
    sums: [f64; 5],
    counts: [u64; 5],
    skipped: u64,
}

impl LossAcc {
    fn add(&mut self, i: usize, v: Option<f64>) {
        if let Some(v) = v.filter(|v| v.is_finite()) {
            self.sums[i] += v;
            self.counts[i] += 1;
        }
    }

    fn means(&self) -> [Option<f64>; 5] {
        std::array::from_fn(|i| (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64))
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub repr_loss: Option<f64>,
    pub low_critic_loss: Option<f64>,
    pub low_actor_loss: Option<f64>,
    pub high_critic_loss: Option<f64>,
    pub high_actor_loss: Option<f64>,
    pub eval_success_rate: f64,
    pub eval_final_distance: f64,
    pub probe_r2: Option<f64>,
    /// Updates refused because of non-finite losses or gradients.
    pub skipped_updates: u64,
}

pub const METRICS_HEADER: &str = "step,repr_loss,low_critic_loss,low_actor_loss,high_critic_loss,high_actor_loss,eval_success_rate,eval_final_distance,probe_r2,skipped_updates";

impl MetricsRow {
    pub fn csv(&self) -> String {
        let o = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            o(self.repr_loss),
            o(self.low_critic_loss),
            o(self.low_actor_loss),
            o(self.high_critic_loss),
            o(self.high_actor_loss),
            self.eval_success_rate,
            self.eval_final_distance,
            o(self.probe_r2),
            self.skipped_updates
        )
    }
}

/// Online training state: the agent plus environment, replay and optimizer.
pub struct Trainer {
    agent: Agent,
    env: PointMazeEnv,
    layout: MazeLayout,
    buffer: ReplayBuffer,
    repr_opt: Option<Adam>,
    weights: Weights,
    rng: ChaCha8Rng,
    step: u64,
    episode: u64,
    obs: Vec<f64>,
    ctx: Vec<f64>,
    goal: Vec<f64>,
    delta: Vec<f64>,
    window_pos: usize,
    acc: LossAcc,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let agent = Agent::new(cfg)?;
        let cfg = &agent.cfg;
        let layout = cfg.env.layout()?;
        let env = PointMazeEnv::new(layout.clone(), cfg.env.maze());
        let buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.c)?;
        let repr_opt = agent
            .enc
            .model()
            .map(|m| Adam::new(&m.tensors(), AdamConfig::with_lr(cfg.repr.lr)));
        let weights = weights(cfg.c, cfg.gamma)?;
        let rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3));
        let mut t = Self {
            agent,
            env,
            layout,
            buffer,
            repr_opt,
            weights,
            rng,
            step: 0,
            episode: 0,
            obs: Vec::new(),
            ctx: Vec::new(),
            goal: Vec::new(),
            delta: Vec::new(),
            window_pos: 0,
            acc: LossAcc::default(),
        };
        t.reset_episode();
        Ok(t)
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Position of the next step inside its decision window.
    pub fn window_pos(&self) -> usize {
        self.window_pos
    }

    /// Observation the next step acts on.
    pub fn obs(&self) -> &[f64] {
        &self.obs
    }

    fn reset_episode(&mut self) {
        let target = if self.agent.cfg.env.random_targets {
            self.layout.sample_free_point(&mut self.rng)
        } else {
            self.layout.goal()
        };
        let p = self.env.reset(target);
        self.obs = self.agent.aug.augment(p.0, p.1, &mut self.rng);
        self.ctx = context(target);
        self.window_pos = 0;
    }

    fn warming_up(&self) -> bool {
        self.step < self.agent.cfg.warmup_steps
    }

    /// Acts for one environment step and stores the transition.
    pub fn act(&mut self) -> Result<()> {
        let warm = self.warming_up();
        if self.window_pos == 0 {
            let b = self.agent.cfg.delta_bound;
            let d = self.agent.cfg.goal_dim();
            self.delta = if warm {
                (0..d).map(|_| self.rng.gen_range(-b..=b)).collect()
            } else {
                self.agent.high.explore(&self.obs, &self.ctx, &mut self.rng)?
            };
            self.goal = self.agent.goal(&self.obs, &self.delta)?;
        }
        let action = if warm {
            (0..2).map(|_| self.rng.gen_range(-1.0..=1.0)).collect()
        } else {
            self.agent.low.explore(&self.obs, &self.goal, &mut self.rng)?
        };
        let out = self.env.step([action[0], action[1]]);
        let next_obs = self.agent.aug.augment(out.pos.0, out.pos.1, &mut self.rng);
        let stored = Stored {
            tr: Transition {
                obs: std::mem::take(&mut self.obs),
                action,
                reward: out.reward,
                next_obs: next_obs.clone(),
                done: out.done,
                terminal: out.success,
                window_pos: self.window_pos,
                next_pos: out.pos,
            },
            goal: self.goal.clone(),
            delta: self.delta.clone(),
            context: self.ctx.clone(),
            episode: self.episode,
        };
        self.buffer.push(stored)?;
        self.step += 1;
        self.obs = next_obs;
        self.window_pos = (self.window_pos + 1) % self.agent.cfg.c;
        if out.done {
            self.episode += 1;
            self.reset_episode();
        }
        Ok(())
    }

    /// Samples `B` full windows with offsets `k` and `B` negatives.
    pub fn sample_batch(&mut self) -> Result<(ReprBatch, Vec<LowTuple>)> {
        let cfg = &self.agent.cfg;
        let (b, c) = (cfg.batch_size, cfg.c);
        let windows = self.buffer.sample_full(b, &mut self.rng)?;
        let negatives: Vec<Vec<f64>> = self.buffer.sample_states(b, &mut self.rng)?.into_iter().map(|s| s.to_vec()).collect();
        let mut batch = ReprBatch {
            negatives,
            ..ReprBatch::default()
        };
        let mut tuples = Vec::with_capacity(b);
        for w in &windows {
            let k = self.rng.gen_range(1..=c);
            let st = w.step(k - 1);
            batch.s_t.push(w.state(0).to_vec());
            batch.a_seq.push(w.actions_flat());
            batch.k.push(k);
            batch.s_tk.push(w.state(k).to_vec());
            tuples.push(LowTuple {
                goal: w.first().goal().to_vec(),
                obs: st.obs().to_vec(),
                action: st.action().to_vec(),
                reward: 0.0,
                next_obs: st.next_obs().to_vec(),
                weight: 1.0,
                terminal: st.terminal(),
            });
        }
        Ok((batch, tuples))
    }

    /// Fills in low-level rewards and weights from the current
    /// representation.
    pub fn relabel(&self, batch: &ReprBatch, tuples: &mut [LowTuple]) -> Result<()> {
        let cfg = &self.agent.cfg;
        let delta = cfg.repr.huber_delta;
        match &self.agent.enc {
            Encoding::Learned(m) => {
                let lp = m.log_partitions(batch)?;
                let f_next = m.encode_batch(&Tensor::from_rows(&batch.s_tk)?)?;
                let phi = m.phi_batch(&batch.s_t, &batch.a_seq)?;
                for (i, t) in tuples.iter_mut().enumerate() {
                    let f = f_next.row(i);
                    t.reward = -huber_distance(f, &t.goal, delta) + huber_distance(f, phi.row(i), delta) + lp[i];
                }
            }
            Encoding::Fixed(f) => {
                for (i, t) in tuples.iter_mut().enumerate() {
                    t.reward = -huber_distance(&f.encode(&batch.s_tk[i])?, &t.goal, delta);
                }
            }
        }
        if cfg.weight_low_rewards {
            // mean one under uniform k
            let c = cfg.c as f64;
            for (t, &k) in tuples.iter_mut().zip(&batch.k) {
                t.weight = c * self.weights.normalized(k);
            }
        }
        Ok(())
    }

    /// Low-level update, plus a high-level update at decision boundaries.
    pub fn update_policies(&mut self, tuples: &[LowTuple]) -> Result<()> {
        let gamma = self.agent.cfg.gamma;
        let low = low_update(&mut self.agent.low, tuples, gamma, &mut self.rng)?;
        self.acc.add(1, Some(low.critic));
        self.acc.add(2, low.actor);
        self.acc.skipped += u64::from(low.skipped);
        if self.step % self.agent.cfg.c as u64 == 0 && self.buffer.n_windows() > 0 {
            let decisions = self.buffer.sample_decisions(self.agent.cfg.batch_size, &mut self.rng)?;
            let tuples: Vec<HighTuple> = decisions
                .iter()
                .map(|w| HighTuple {
                    obs: w.state(0).to_vec(),
                    context: w.first().context().to_vec(),
                    delta: w.first().delta().to_vec(),
                    rewards: w.rewards(),
                    next_obs: w.state(w.len()).to_vec(),
                    terminal: w.terminal(),
                })
                .collect();
            let scale = self.agent.cfg.high_reward_scale;
            let high = high_update(&mut self.agent.high, &tuples, gamma, scale, &mut self.rng)?;
            self.acc.add(3, Some(high.critic));
            self.acc.add(4, high.actor);
            self.acc.skipped += u64::from(high.skipped);
        }
        Ok(())
    }

    /// One representation step; a no-op for fixed arms.
    pub fn update_repr(&mut self, batch: &ReprBatch) -> Result<()> {
        if let (Encoding::Learned(m), Some(opt)) = (&mut self.agent.enc, &mut self.repr_opt) {
            let r = repr_train_step(m, batch, opt, &self.weights)?;
            self.acc.add(0, Some(r.loss));
            self.acc.skipped += u64::from(r.skipped);
        }
        Ok(())
    }

    /// Act once, then update everything once past warm-up.
    pub fn iterate(&mut self) -> Result<()> {
        self.act()?;
        if self.warming_up() || self.buffer.n_full_windows() == 0 {
            return Ok(());
        }
        let (batch, mut tuples) = self.sample_batch()?;
        self.relabel(&batch, &mut tuples)?;
        self.update_policies(&tuples)?;
        self.update_repr(&batch)
    }

    /// Evaluation plus probe at the current step; resets the loss means.
    pub fn metrics(&mut self) -> Result<MetricsRow> {
        let cfg = &self.agent.cfg;
        let eval = self.agent.evaluate(cfg.eval_episodes, mix_seed(cfg.seed ^ 0xE7A1, self.step))?;
        let probe_r2 = if cfg.probe_states > 0 {
            self.agent.probe(cfg.probe_states, mix_seed(cfg.seed ^ 0x9B0E, self.step))?.min_r2()
        } else {
            None
        };
        let [repr_loss, low_critic_loss, low_actor_loss, high_critic_loss, high_actor_loss] = self.acc.means();
        let row = MetricsRow {
            step: self.step,
            repr_loss,
            low_critic_loss,
            low_actor_loss,
            high_critic_loss,
            high_actor_loss,
            eval_success_rate: eval.success_rate,
            eval_final_distance: eval.final_distance,
            probe_r2,
            skipped_updates: self.acc.skipped,
        };
        self.acc = LossAcc::default();
        Ok(row)
    }

    pub fn into_agent(self) -> Agent {
        self.agent
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub agent: Agent,
    pub rows: Vec<MetricsRow>,
}

fn at_step(step: u64) -> impl Fn(Error) -> Error {
    move |e| Error::AtStep {
        step,
        source: Box::new(e),
    }
}

/// Runs the full loop. With `out`, writes `metrics.csv`, periodic
/// `ckpt_<step>.grckpt` files and `final.grckpt` there.
pub fn train(cfg: TrainConfig, out: Option<&Path>, mut on_row: impl FnMut(&MetricsRow)) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg)?;
    let mut csv = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.csv"))?);
            writeln!(f, "{METRICS_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut emit = |row: MetricsRow, csv: &mut Option<std::io::BufWriter<std::fs::File>>| -> Result<()> {
        if let Some(f) = csv {
            writeln!(f, "{}", row.csv())?;
            f.flush()?;
        }
        on_row(&row);
        rows.push(row);
        Ok(())
    };
    let row = t.metrics().map_err(at_step(0))?;
    emit(row, &mut csv)?;
    let (total, eval_every, ckpt_every) = (t.agent.cfg.total_steps, t.agent.cfg.eval_every, t.agent.cfg.checkpoint_every);
    while t.step < total {
        t.iterate().map_err(at_step(t.step))?;
        if t.step % eval_every == 0 || t.step == total {
            let row = t.metrics().map_err(at_step(t.step))?;
            emit(row, &mut csv)?;
        }
        if let Some(dir) = out {
            if ckpt_every > 0 && t.step % ckpt_every == 0 {
                t.agent.save(&dir.join(format!("ckpt_{}.grckpt", t.step)), t.step)?;
            }
        }
    }
    if let Some(dir) = out {
        t.agent.save(&dir.join("final.grckpt"), t.step)?;
    }
    Ok(TrainOutcome {
        agent: t.into_agent(),
        rows,
    })
}
