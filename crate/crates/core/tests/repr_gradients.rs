mod support;

use goalrepr::repr::EnergyConfig;
use support::gradcheck;
use support::repr_sweep::sweep;

#[test]
fn repr_loss_gradient_matches_finite_differences() {
    let stats = sweep(&EnergyConfig::default(), 0.99, 8, 50, 6);
    eprintln!("{stats:?}");
    assert!(stats.checked >= 50 * 12 * 5, "{stats:?}");
    assert!(stats.max_rel <= gradcheck::REL_TOL, "{stats:?}");
}
