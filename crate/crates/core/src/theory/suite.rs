use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bounds::{BoundReport, Which};
use super::hierarchy::{Hierarchy, PsiTable};
use super::tabrepr::{Distance, TabularRepr};
use crate::envs::{random_mdp, TabularMdp};
use crate::error::{Error, Result};
use crate::par::{map_indexed, mix_seed, Exec};

/// One certification instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub id: String,
    pub mdp: TabularMdp,
    pub repr: TabularRepr,
    pub c: usize,
}

/// Fault injected into every instance of a suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Replace Ψ by [`PsiTable::corrupted`].
    RandomPsi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub count: usize,
    pub min_states: usize,
    pub max_states: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub gammas: Vec<f64>,
    pub cs: Vec<usize>,
    pub which: Vec<Which>,
    /// Extra instances with an exactly invertible Ψ.
    pub constructed: usize,
    /// Scale of the random embedding: `f(s)` uniform in `[-scale, scale]²`.
    pub f_scale: f64,
    pub fault: Option<Fault>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            count: 200,
            min_states: 3,
            max_states: 6,
            min_actions: 2,
            max_actions: 3,
            gammas: vec![0.5, 0.9],
            cs: vec![1, 2, 3],
            which: Which::ALL.to_vec(),
            constructed: 0,
            f_scale: 2.0,
            fault: None,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.min_states < 2 || self.min_states > self.max_states {
            return bad(format!("state range [{}, {}]", self.min_states, self.max_states));
        }
        if self.min_actions < 1 || self.min_actions > self.max_actions {
            return bad(format!("action range [{}, {}]", self.min_actions, self.max_actions));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return bad(format!("gammas {:?} must be non-empty and inside (0, 1)", self.gammas));
        }
        if self.cs.is_empty() || self.cs.contains(&0) {
            return bad(format!("cs {:?} must be non-empty and positive", self.cs));
        }
        if self.which.is_empty() {
            return bad("no conditions selected".into());
        }
        if !(self.f_scale > 0.0 && self.f_scale.is_finite()) {
            return bad(format!("f_scale {}", self.f_scale));
        }
        Ok(())
    }
}

/// Random instance `index` of the suite.
pub fn random_instance(cfg: &SuiteConfig, seed: u64, index: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));
    let n = rng.gen_range(cfg.min_states..=cfg.max_states);
    let a = rng.gen_range(cfg.min_actions..=cfg.max_actions);
    let gamma = *cfg.gammas.choose(&mut rng).expect("validated");
    let c = *cfg.cs.choose(&mut rng).expect("validated");
    let sparsity = match rng.gen_range(0..3) {
        0 => None,
        k => Some(k),
    };
    let mdp = random_mdp(n, a, gamma, sparsity, &mut rng)?;
    let f = (0..n)
        .map(|_| (0..2).map(|_| rng.gen_range(-cfg.f_scale..=cfg.f_scale)).collect())
        .collect();
    let repr = TabularRepr::with_default_goals(f, Distance::SquaredL2)?;
    Ok(Instance {
        id: format!("rand-{index:04}"),
        mdp,
        repr,
        c,
    })
}

/// One-hot embedding scaled so that `K` is nearly a point mass on the
/// matching state.
pub fn scaled_one_hot(n: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect()).collect()
}

/// Deterministic MDP with an injective embedding and `G ⊇ f(S)`: every
/// action's successor is reachable through Ψ, so the sub-optimality is 0.
pub fn invertible_single_step<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<(TabularMdp, TabularRepr)> {
    let mdp = random_mdp(n_states, n_actions, gamma, Some(1), rng)?;
    let repr = TabularRepr::with_default_goals(scaled_one_hot(n_states, 10.0), Distance::SquaredL2)?;
    Ok((mdp, repr))
}

/// Shift-register MDP: the state records the last `c` actions, so after
/// `c` steps it identifies the open-loop policy that was run. With a
/// one-hot embedding, Ψ can reach every sequence in `A^c` as long as
/// `γ^(c-1) > 1/2` lets the final-step weight dominate.
pub fn shift_register<R: Rng + ?Sized>(
    n_actions: usize,
    c: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<(TabularMdp, TabularRepr)> {
    if n_actions < 2 || c == 0 {
        return Err(Error::Invalid("shift register needs |A| ≥ 2 and c ≥ 1".into()));
    }
    let n = n_actions.pow(c as u32);
    let reward = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let transition = (0..n)
        .map(|s| {
            (0..n_actions)
                .map(|a| {
                    let mut row = vec![0.0; n];
                    row[(s * n_actions + a) % n] = 1.0;
                    row
                })
                .collect()
        })
        .collect();
    let mdp = TabularMdp::new(reward, transition, gamma)?;
    let repr = TabularRepr::with_default_goals(scaled_one_hot(n, 10.0), Distance::SquaredL2)?;
    Ok((mdp, repr))
}

/// Constructed instance `index`: alternates single-step invertible MDPs and
/// shift registers with `c ∈ {2, 3}`.
pub fn constructed_instance(seed: u64, index: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0xC0_57_8C_7E, index as u64));
    if index % 2 == 0 {
        let n = rng.gen_range(3..=6);
        let a = rng.gen_range(2..=3);
        let gamma = *[0.5, 0.9].choose(&mut rng).expect("non-empty");
        let (mdp, repr) = invertible_single_step(n, a, gamma, &mut rng)?;
        Ok(Instance {
            id: format!("inv-{index:04}"),
            mdp,
            repr,
            c: 1,
        })
    } else {
        let c = 2 + (index / 2) % 2;
        let (mdp, repr) = shift_register(2, c, 0.9, &mut rng)?;
        Ok(Instance {
            id: format!("shift-{index:04}"),
            mdp,
            repr,
            c,
        })
    }
}

/// Instance that could not be certified, e.g. because of a guard.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refusal {
    pub mdp_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub reports: Vec<BoundReport>,
    pub refusals: Vec<Refusal>,
}

impl SuiteOutcome {
    pub fn violations(&self) -> usize {
        self.reports.iter().filter(|r| !r.pass).count()
    }
}

/// Certifies one instance for every applicable condition in `which`.
pub fn certify_instance(
    inst: &Instance,
    which: &[Which],
    fault: Option<Fault>,
    fault_seed: u64,
) -> Result<Vec<BoundReport>> {
    let h = Hierarchy::new(&inst.mdp, &inst.repr, inst.c)?;
    let psi = match fault {
        None => h.psi_table(),
        Some(Fault::RandomPsi) => PsiTable::corrupted(
            inst.mdp.n_states(),
            h.n_goals(),
            inst.mdp.n_actions(),
            inst.c,
            &mut ChaCha8Rng::seed_from_u64(fault_seed),
        )?,
    };
    which
        .iter()
        .filter(|w| w.applies_to(inst.c))
        .map(|&w| h.certify(&inst.id, w, &psi))
        .collect()
}

/// Runs the whole suite. Results come back in instance order regardless of
/// how the work was scheduled.
pub fn run_suite(cfg: &SuiteConfig, seed: u64, exec: Exec) -> Result<SuiteOutcome> {
    cfg.validate()?;
    let total = cfg.count + cfg.constructed;
    let per_instance = map_indexed(exec, total, |i| {
        let inst = if i < cfg.count {
            random_instance(cfg, seed, i)
        } else {
            constructed_instance(seed, i - cfg.count)
        };
        let id = inst.as_ref().map_or_else(|_| format!("inst-{i:04}"), |x| x.id.clone());
        (id, inst.and_then(|x| certify_instance(&x, &cfg.which, cfg.fault, mix_seed(!seed, i as u64))))
    });
    let mut out = SuiteOutcome::default();
    for (id, res) in per_instance {
        match res {
            Ok(reports) => out.reports.extend(reports),
            Err(e @ Error::EnumerationGuard { .. }) => out.refusals.push(Refusal {
                mdp_id: id,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

