mod common;

use common::*;

#[test]
fn every_component_passes_finite_differences() {
    let checks = gradient_checks();
    assert_eq!(checks.len(), 9);
    for (name, err) in checks {
        assert!(err < 1e-4, "{name}: max relative error {err:e}");
    }
}
