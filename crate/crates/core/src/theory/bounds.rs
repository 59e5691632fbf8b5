use serde::{Deserialize, Serialize};

use super::hierarchy::{Hierarchy, PsiTable};
use super::tabrepr::TabularRepr;
use crate::envs::TabularMdp;
use crate::error::{Error, Result};

/// Slack below which a report fails.
pub const PASS_TOL: f64 = 1e-7;

/// Which sufficient condition is being certified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    /// One-step TV condition, `c = 1`.
    Thm1,
    /// Weighted multi-step TV condition.
    Thm2,
    /// One-step KL condition against `K`, `c = 1`.
    Claim1,
    /// Weighted multi-step KL condition against `K`.
    Claim2,
}

impl Which {
    pub const ALL: [Which; 4] = [Which::Thm1, Which::Thm2, Which::Claim1, Which::Claim2];

    pub fn name(self) -> &'static str {
        match self {
            Which::Thm1 => "thm1",
            Which::Thm2 => "thm2",
            Which::Claim1 => "claim1",
            Which::Claim2 => "claim2",
        }
    }

    pub fn single_step(self) -> bool {
        matches!(self, Which::Thm1 | Which::Claim1)
    }

    pub fn applies_to(self, c: usize) -> bool {
        !self.single_step() || c == 1
    }
}

impl std::str::FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Which::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown condition '{s}' (expected thm1, thm2, claim1 or claim2)")))
    }
}

/// Divergence attained at the worst policy from one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstDivergence {
    pub state: usize,
    pub policy: Vec<usize>,
    pub goal: usize,
    pub divergence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub mdp_id: String,
    pub which: Which,
    pub c: usize,
    pub gamma: f64,
    pub eps: f64,
    #[serde(rename = "C")]
    pub c_const: f64,
    /// Gap with the start state's reward counted; this is what the bound
    /// is checked against.
    pub subopt: f64,
    /// Gap under the arrival convention of [`super::value_iteration`].
    pub subopt_arrival: f64,
    pub slack: f64,
    pub r_max: f64,
    pub w_bar: f64,
    pub worst: Vec<WorstDivergence>,
    pub pass: bool,
}

/// `2γ / (1-γ)² · R_max`
pub fn c_thm1(gamma: f64, r_max: f64) -> f64 {
    2.0 * gamma / ((1.0 - gamma) * (1.0 - gamma)) * r_max
}

/// `2γ / (1-γ^c) · R_max · w̄`
pub fn c_thm2(gamma: f64, c: usize, r_max: f64, w_bar: f64) -> f64 {
    2.0 * gamma / (1.0 - gamma.powi(c as i32)) * r_max * w_bar
}

impl Hierarchy<'_> {
    /// Per-state worst case over policies of the best-candidate divergence.
    fn worst_divergences(&self, which: Which, psi: &PsiTable) -> Vec<WorstDivergence> {
        let n_actions = self.mdp().n_actions();
        (0..self.mdp().n_states())
            .map(|s| {
                let mut worst = WorstDivergence {
                    state: s,
                    policy: Vec::new(),
                    goal: 0,
                    divergence: f64::NEG_INFINITY,
                };
                for p in 0..self.n_policies() {
                    let (g, d) = match which {
                        Which::Thm1 | Which::Thm2 => self.phi_tv(s, p, psi),
                        Which::Claim1 | Which::Claim2 => self.phi_kl(s, p),
                    };
                    if d > worst.divergence {
                        worst = WorstDivergence {
                            state: s,
                            policy: super::OpenLoopPolicy::from_index(p, n_actions, self.c()).actions().to_vec(),
                            goal: g,
                            divergence: d,
                        };
                    }
                }
                worst
            })
            .collect()
    }

    /// Certifies one condition against the given Ψ table.
    pub fn certify(&self, mdp_id: &str, which: Which, psi: &PsiTable) -> Result<BoundReport> {
        if !which.applies_to(self.c()) {
            return Err(Error::Invalid(format!("{} requires c = 1, got c = {}", which.name(), self.c())));
        }
        let gamma = self.mdp().gamma();
        let r_max = self.mdp().r_max();
        let w_bar = self.weights().w_bar;
        let worst = self.worst_divergences(which, psi);
        let sup = worst.iter().map(|w| w.divergence).fold(0.0, f64::max);
        let eps = match which {
            Which::Thm1 | Which::Thm2 => sup,
            Which::Claim1 | Which::Claim2 => (8.0 * sup).sqrt(),
        };
        let c_const = if which.single_step() {
            c_thm1(gamma, r_max)
        } else {
            c_thm2(gamma, self.c(), r_max, w_bar)
        };
        let gap = self.suboptimality(psi)?;
        let slack = c_const * eps - gap.inclusive;
        Ok(BoundReport {
            mdp_id: mdp_id.to_string(),
            which,
            c: self.c(),
            gamma,
            eps,
            c_const,
            subopt: gap.inclusive,
            subopt_arrival: gap.arrival,
            slack,
            r_max,
            w_bar,
            worst,
            pass: slack >= -PASS_TOL,
        })
    }
}

/// Builds Ψ from the objective and certifies one condition.
pub fn certify(mdp: &TabularMdp, repr: &TabularRepr, c: usize, which: Which) -> Result<BoundReport> {
    let h = Hierarchy::new(mdp, repr, c)?;
    h.certify("mdp", which, &h.psi_table())
}
