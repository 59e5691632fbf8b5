//! Exact goal-to-policy maps on tabular MDPs and certification of the
//! sub-optimality bounds they satisfy.
//!
//! Values follow two conventions. [`value_iteration`] and the
//! `*_values` solvers collect reward on arrival, `V(s) = E[Σ_{t≥1}
//! γ^(t-1) R(s_t)]`. The bounds are stated for values that also count the
//! start state's reward; the worst-case gap under that convention is `γ`
//! times the arrival gap, and it is the one [`BoundReport::subopt`] checks.

mod bounds;
mod hierarchy;
mod policy;
pub mod suite;
mod tabrepr;

pub use bounds::{c_thm1, c_thm2, certify, BoundReport, Which, WorstDivergence, PASS_TOL};
pub use hierarchy::{
    hierarchical_value, iterate_values, phi_select, psi_select, suboptimality, value_iteration, Gap,
    Hierarchy, PhiMode, PsiTable, Solution, VI_MAX_SWEEPS, VI_TOL,
};
pub use policy::{kstep_distribution, policy_count, rollout, OpenLoopPolicy, ENUMERATION_LIMIT};
pub use suite::{run_suite, Fault, Instance, SuiteConfig, SuiteOutcome};
pub use tabrepr::{build_k, default_goals, Distance, TabularRepr, GRID_POINTS, RHO_MIN};
