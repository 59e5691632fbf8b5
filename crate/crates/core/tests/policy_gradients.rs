mod support;

use support::gradcheck::{self, FdStats};
use support::policy_sweep::sweep;

fn assert_fidelity(name: &str, stats: FdStats, instances: usize) {
    eprintln!("{name}: {stats:?}");
    assert!(stats.checked >= instances * 6 * 4, "{name}: {stats:?}");
    assert!(stats.max_rel <= gradcheck::REL_TOL, "{name}: {stats:?}");
}

#[test]
fn low_policy_losses_match_finite_differences() {
    // obs ⊕ goal → 2-d action in [-1, 1]
    let (c, a) = sweep(14, 2, 1.0, 50);
    assert_fidelity("low critic", c, 50);
    assert_fidelity("low actor", a, 50);
}

#[test]
fn high_policy_losses_match_finite_differences() {
    // obs ⊕ context → 2-d offset in [-10, 10]
    let (c, a) = sweep(14, 2, 10.0, 50);
    assert_fidelity("high critic", c, 50);
    assert_fidelity("high actor", a, 50);
}
