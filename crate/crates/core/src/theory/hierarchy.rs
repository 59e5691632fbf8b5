use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{policy_count, rollout, OpenLoopPolicy};
use super::tabrepr::TabularRepr;
use crate::divergence::{weights, Weights};
use crate::envs::TabularMdp;
use crate::error::{Error, Result};

/// Sup-norm residual at which value iteration stops.
pub const VI_TOL: f64 = 1e-10;
pub const VI_MAX_SWEEPS: usize = 100_000;

/// Selected policy (as a lexicographic index into `A^c`) and objective
/// value for every `(state, goal candidate)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiTable {
    n_states: usize,
    n_goals: usize,
    n_actions: usize,
    c: usize,
    choice: Vec<usize>,
    value: Vec<f64>,
}

impl PsiTable {
    /// Table with caller-chosen entries; objective values are recorded as
    /// NaN since nothing was optimized.
    pub fn from_choices(
        n_states: usize,
        n_goals: usize,
        n_actions: usize,
        c: usize,
        choice: Vec<usize>,
    ) -> Result<Self> {
        let n_pol = policy_count(n_actions, c)?;
        if choice.len() != n_states * n_goals {
            return Err(Error::Invalid(format!(
                "{} entries for {n_states} states × {n_goals} goals",
                choice.len()
            )));
        }
        if let Some(&p) = choice.iter().find(|&&p| p >= n_pol) {
            return Err(Error::OutOfRange {
                what: "policy",
                index: p,
                limit: n_pol,
            });
        }
        Ok(Self {
            n_states,
            n_goals,
            n_actions,
            c,
            value: vec![f64::NAN; choice.len()],
            choice,
        })
    }

    /// Fault injection: one random policy per state, shared by every goal,
    /// with no regard for the objective.
    pub fn corrupted<R: Rng + ?Sized>(
        n_states: usize,
        n_goals: usize,
        n_actions: usize,
        c: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n_pol = policy_count(n_actions, c)?;
        let per_state: Vec<usize> = (0..n_states).map(|_| rng.gen_range(0..n_pol)).collect();
        let choice = (0..n_states * n_goals).map(|i| per_state[i / n_goals]).collect();
        Self::from_choices(n_states, n_goals, n_actions, c, choice)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_goals(&self) -> usize {
        self.n_goals
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn policy_index(&self, s: usize, g: usize) -> usize {
        self.choice[s * self.n_goals + g]
    }

    pub fn policy(&self, s: usize, g: usize) -> OpenLoopPolicy {
        OpenLoopPolicy::from_index(self.policy_index(s, g), self.n_actions, self.c)
    }

    pub fn value(&self, s: usize, g: usize) -> f64 {
        self.value[s * self.n_goals + g]
    }
}

/// Value-iteration result: values and the greedy choice per state.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
    pub greedy: Vec<usize>,
    pub sweeps: usize,
}

/// Generic value iteration over `n` states with `choices(s)` options, where
/// `q(s, j, v)` is the backed-up value of option `j`. Ties go to the lowest
/// option index.
pub fn iterate_values(
    n: usize,
    choices: impl Fn(usize) -> usize,
    q: impl Fn(usize, usize, &[f64]) -> f64,
) -> Result<Solution> {
    let backup = |v: &[f64]| -> (Vec<f64>, Vec<usize>) {
        (0..n)
            .map(|s| {
                let mut best = (f64::NEG_INFINITY, 0);
                for j in 0..choices(s) {
                    let x = q(s, j, v);
                    if x > best.0 {
                        best = (x, j);
                    }
                }
                best
            })
            .unzip()
    };
    let mut v = vec![0.0; n];
    for sweep in 1..=VI_MAX_SWEEPS {
        let (next, greedy) = backup(&v);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("value iteration"));
        }
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual <= VI_TOL {
            return Ok(Solution {
                values: v,
                greedy,
                sweeps: sweep,
            });
        }
    }
    Err(Error::Invalid(format!("value iteration did not converge in {VI_MAX_SWEEPS} sweeps")))
}

/// Optimal values with reward collected on arrival:
/// `V(s) = max_a Σ_s' T(s'|s,a) (R(s') + γ V(s'))`.
pub fn value_iteration(mdp: &TabularMdp) -> Result<Solution> {
    let r = mdp.rewards();
    let g = mdp.gamma();
    iterate_values(
        mdp.n_states(),
        |_| mdp.n_actions(),
        |s, a, v| mdp.row(s, a).iter().enumerate().map(|(t, p)| p * (r[t] + g * v[t])).sum(),
    )
}

/// Exact quantities for every `(state, open-loop policy)` pair of one
/// instance. Everything downstream (Ψ, φ, values, bounds) reads from here.
#[derive(Clone, Debug)]
pub struct Hierarchy<'a> {
    mdp: &'a TabularMdp,
    repr: &'a TabularRepr,
    c: usize,
    weights: Weights,
    n_pol: usize,
    /// `[(s * n_pol + p) * c + (k - 1)] -> P^k` flattened over states.
    dists: Vec<f64>,
    /// `Σ_k γ^(k-1) E[R(s_{t+k})]` per `(s, p)`.
    rewards: Vec<f64>,
    /// `Σ_k γ^(k-1) w_k (H(P^k) + E_{P^k} log ρ)` per `(s, p)`.
    entropy_terms: Vec<f64>,
    /// `Σ_k γ^(k-1) w_k P^k` per `(s, p)`, flattened over states.
    marginals: Vec<f64>,
    /// `D(f(s'), g)` as `[g * n + s']`.
    dmat: Vec<f64>,
    /// `log K_g(s')` as `[g * n + s']`.
    log_k: Vec<f64>,
}

impl<'a> Hierarchy<'a> {
    pub fn new(mdp: &'a TabularMdp, repr: &'a TabularRepr, c: usize) -> Result<Self> {
        if c == 0 {
            return Err(Error::Invalid("c must be at least 1".into()));
        }
        let n = mdp.n_states();
        if repr.n_states() != n {
            return Err(Error::Invalid(format!(
                "representation covers {} states, MDP has {n}",
                repr.n_states()
            )));
        }
        let n_pol = policy_count(mdp.n_actions(), c)?;
        let w = weights(c, mdp.gamma())?;
        let log_rho: Vec<f64> = repr.rho().probs().iter().map(|p| p.ln()).collect();
        let r = mdp.rewards();
        let gamma = mdp.gamma();

        let mut dists = Vec::with_capacity(n * n_pol * c * n);
        let mut rewards = Vec::with_capacity(n * n_pol);
        let mut entropy_terms = Vec::with_capacity(n * n_pol);
        let mut marginals = Vec::with_capacity(n * n_pol * n);
        for s in 0..n {
            for p in 0..n_pol {
                let pol = OpenLoopPolicy::from_index(p, mdp.n_actions(), c);
                let ks = rollout(mdp, s, pol.actions());
                let mut reward = 0.0;
                let mut ent = 0.0;
                let mut marg = vec![0.0; n];
                for (i, d) in ks.iter().enumerate() {
                    let k = i + 1;
                    let dk = w.discounted(k);
                    reward += gamma.powi(i as i32) * d.iter().zip(r).map(|(p, r)| p * r).sum::<f64>();
                    let h: f64 = d
                        .iter()
                        .zip(&log_rho)
                        .filter(|(&p, _)| p > 0.0)
                        .map(|(&p, &lr)| p * (lr - p.ln()))
                        .sum();
                    ent += dk * h;
                    for (m, &p) in marg.iter_mut().zip(d) {
                        *m += dk * p;
                    }
                    dists.extend_from_slice(d);
                }
                rewards.push(reward);
                entropy_terms.push(ent);
                marginals.extend(marg);
            }
        }
        let mut dmat = Vec::with_capacity(repr.goals().len() * n);
        let mut log_k = Vec::with_capacity(repr.goals().len() * n);
        for g in repr.goals() {
            dmat.extend(repr.distances_to(g));
            log_k.extend(repr.log_k(g));
        }
        Ok(Self {
            mdp,
            repr,
            c,
            weights: w,
            n_pol,
            dists,
            rewards,
            entropy_terms,
            marginals,
            dmat,
            log_k,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }

    pub fn repr(&self) -> &TabularRepr {
        self.repr
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn n_policies(&self) -> usize {
        self.n_pol
    }

    pub fn n_goals(&self) -> usize {
        self.repr.goals().len()
    }

    fn n(&self) -> usize {
        self.mdp.n_states()
    }

    /// `P_π^k(· | s)` for policy index `p`.
    pub fn dist(&self, s: usize, p: usize, k: usize) -> &[f64] {
        let n = self.n();
        let start = ((s * self.n_pol + p) * self.c + (k - 1)) * n;
        &self.dists[start..start + n]
    }

    /// Expected discounted reward over one `c`-step decision.
    pub fn decision_reward(&self, s: usize, p: usize) -> f64 {
        self.rewards[s * self.n_pol + p]
    }

    fn marginal(&self, s: usize, p: usize) -> &[f64] {
        let n = self.n();
        let start = (s * self.n_pol + p) * n;
        &self.marginals[start..start + n]
    }

    /// Objective of policy `p` at `s` for a goal whose per-state distances
    /// are `dist_row`.
    fn objective_with(&self, s: usize, p: usize, dist_row: &[f64]) -> f64 {
        let pull: f64 = self.marginal(s, p).iter().zip(dist_row).map(|(m, d)| m * d).sum();
        self.entropy_terms[s * self.n_pol + p] - pull
    }

    /// `Σ_k γ^(k-1) w_k E_{P^k}[-D(f(s'), g) + log ρ(s') - log P^k(s')]` for
    /// goal candidate `g`.
    pub fn objective(&self, s: usize, p: usize, g: usize) -> f64 {
        let n = self.n();
        self.objective_with(s, p, &self.dmat[g * n..(g + 1) * n])
    }

    fn argmax_policy(&self, s: usize, dist_row: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for p in 0..self.n_pol {
            let v = self.objective_with(s, p, dist_row);
            if v > best.1 {
                best = (p, v);
            }
        }
        best
    }

    /// Ψ over every `(state, goal candidate)`.
    pub fn psi_table(&self) -> PsiTable {
        let n = self.n();
        let n_goals = self.n_goals();
        let mut choice = Vec::with_capacity(n * n_goals);
        let mut value = Vec::with_capacity(n * n_goals);
        for s in 0..n {
            for g in 0..n_goals {
                let (p, v) = self.argmax_policy(s, &self.dmat[g * n..(g + 1) * n]);
                choice.push(p);
                value.push(v);
            }
        }
        PsiTable {
            n_states: n,
            n_goals,
            n_actions: self.mdp.n_actions(),
            c: self.c,
            choice,
            value,
        }
    }

    /// Ψ for an arbitrary goal vector.
    pub fn psi_for_goal(&self, s: usize, goal: &[f64]) -> (usize, f64) {
        self.argmax_policy(s, &self.repr.distances_to(goal))
    }

    /// `(1/w̄) Σ_k γ^(k-1) w_k KL(P_π^k ‖ K_g)`.
    pub fn weighted_kl(&self, s: usize, p: usize, g: usize) -> f64 {
        let n = self.n();
        let lk = &self.log_k[g * n..(g + 1) * n];
        let total: f64 = (1..=self.c)
            .map(|k| {
                let kl: f64 = self
                    .dist(s, p, k)
                    .iter()
                    .zip(lk)
                    .filter(|(&q, _)| q > 0.0)
                    .map(|(&q, &l)| q * (q.ln() - l))
                    .sum();
                self.weights.discounted(k) * kl.max(0.0)
            })
            .sum();
        total / self.weights.w_bar
    }

    /// `(1/w̄) Σ_k γ^(k-1) w_k TV(P_p^k, P_q^k)` from the same state.
    pub fn weighted_tv(&self, s: usize, p: usize, q: usize) -> f64 {
        let total: f64 = (1..=self.c)
            .map(|k| {
                let l1: f64 = self.dist(s, p, k).iter().zip(self.dist(s, q, k)).map(|(a, b)| (a - b).abs()).sum();
                self.weights.discounted(k) * (0.5 * l1).min(1.0)
            })
            .sum();
        total / self.weights.w_bar
    }

    /// Goal candidate minimizing the weighted KL for `(s, p)`.
    pub fn phi_kl(&self, s: usize, p: usize) -> (usize, f64) {
        argmin((0..self.n_goals()).map(|g| self.weighted_kl(s, p, g)))
    }

    /// Goal candidate whose Ψ-policy is closest in weighted TV to `p`.
    pub fn phi_tv(&self, s: usize, p: usize, psi: &PsiTable) -> (usize, f64) {
        argmin((0..self.n_goals()).map(|g| self.weighted_tv(s, p, psi.policy_index(s, g))))
    }

    /// Optimal values of the `c`-step MDP whose options are all of `A^c`.
    pub fn optimal_values(&self) -> Result<Solution> {
        self.solve(|_| self.n_pol, |_, j| j)
    }

    /// Optimal values of the `c`-step MDP whose options are the goal
    /// candidates, each executed through Ψ.
    pub fn hierarchical_values(&self, psi: &PsiTable) -> Result<Solution> {
        self.check_table(psi)?;
        self.solve(|_| psi.n_goals(), |s, g| psi.policy_index(s, g))
    }

    fn check_table(&self, psi: &PsiTable) -> Result<()> {
        if psi.n_states() != self.n() || psi.n_goals() != self.n_goals() || psi.c() != self.c || psi.n_actions() != self.mdp.n_actions() {
            return Err(Error::Invalid("Ψ table does not match this instance".into()));
        }
        Ok(())
    }

    fn solve(&self, choices: impl Fn(usize) -> usize, policy: impl Fn(usize, usize) -> usize) -> Result<Solution> {
        let disc = self.mdp.gamma().powi(self.c as i32);
        iterate_values(self.n(), choices, |s, j, v| {
            let p = policy(s, j);
            let next: f64 = self.dist(s, p, self.c).iter().zip(v).map(|(a, b)| a * b).sum();
            self.decision_reward(s, p) + disc * next
        })
    }

    /// Value gaps between the unrestricted and Ψ-restricted hierarchies.
    pub fn suboptimality(&self, psi: &PsiTable) -> Result<Gap> {
        let star = self.optimal_values()?;
        let hier = self.hierarchical_values(psi)?;
        let arrival = star
            .values
            .iter()
            .zip(&hier.values)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        Ok(Gap {
            arrival,
            inclusive: self.mdp.gamma() * arrival,
        })
    }
}

/// Worst-case value gap under the two reward-timing conventions. With the
/// start state's reward counted (`V(s) = R(s) + γ V_arrival(s)`) the gap is
/// exactly `γ` times the arrival-convention gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub arrival: f64,
    pub inclusive: f64,
}

fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Ψ-selection for one state and an arbitrary goal vector.
pub fn psi_select(
    mdp: &TabularMdp,
    repr: &TabularRepr,
    s: usize,
    goal: &[f64],
    c: usize,
) -> Result<(OpenLoopPolicy, f64)> {
    let h = Hierarchy::new(mdp, repr, c)?;
    if s >= mdp.n_states() {
        return Err(Error::OutOfRange {
            what: "state",
            index: s,
            limit: mdp.n_states(),
        });
    }
    let (p, v) = h.psi_for_goal(s, goal);
    Ok((OpenLoopPolicy::from_index(p, mdp.n_actions(), c), v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    Kl,
    Tv,
}

/// Inverse goal model over the candidate set. Returns the candidate index
/// and its weighted divergence.
pub fn phi_select(
    mdp: &TabularMdp,
    repr: &TabularRepr,
    s: usize,
    policy: &OpenLoopPolicy,
    mode: PhiMode,
) -> Result<(usize, f64)> {
    let c = policy.len();
    let h = Hierarchy::new(mdp, repr, c)?;
    let p = OpenLoopPolicy::new(policy.actions().to_vec(), mdp.n_actions())?.index(mdp.n_actions());
    Ok(match mode {
        PhiMode::Kl => h.phi_kl(s, p),
        PhiMode::Tv => h.phi_tv(s, p, &h.psi_table()),
    })
}

/// Values of the Ψ-restricted hierarchy, computed from the table alone.
pub fn hierarchical_value(mdp: &TabularMdp, psi: &PsiTable) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    if psi.n_states() != n || psi.n_actions() != mdp.n_actions() {
        return Err(Error::Invalid("Ψ table does not match the MDP".into()));
    }
    let c = psi.c();
    let gamma = mdp.gamma();
    let r = mdp.rewards();
    let mut options: Vec<Vec<(f64, Vec<f64>)>> = Vec::with_capacity(n);
    for s in 0..n {
        options.push(
            (0..psi.n_goals())
                .map(|g| {
                    let ks = rollout(mdp, s, psi.policy(s, g).actions());
                    let reward = ks
                        .iter()
                        .enumerate()
                        .map(|(i, d)| gamma.powi(i as i32) * d.iter().zip(r).map(|(p, r)| p * r).sum::<f64>())
                        .sum();
                    (reward, ks.last().cloned().unwrap_or_default())
                })
                .collect(),
        );
    }
    let disc = gamma.powi(c as i32);
    Ok(iterate_values(n, |s| options[s].len(), |s, j, v| {
        let (reward, d) = &options[s][j];
        reward + disc * d.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    })?
    .values)
}

/// Arrival-convention sub-optimality of Ψ: `max_s V*(s) - V_Ψ(s)`, clamped
/// at zero against rounding residue.
pub fn suboptimality(mdp: &TabularMdp, repr: &TabularRepr, psi: &PsiTable) -> Result<f64> {
    Ok(Hierarchy::new(mdp, repr, psi.c())?.suboptimality(psi)?.arrival)
}
