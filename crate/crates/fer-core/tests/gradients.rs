//! Finite-difference gradient verification over a handful of seeds. The
//! acceptance harness re-runs the same checks over a larger seed set.

use fer_core::gradcheck;

#[test]
fn every_layer_passes_finite_difference_checks() {
    let checks = gradcheck::run_all(&[1, 2, 3]).unwrap();
    assert_eq!(checks.len(), 13);
    for check in checks {
        assert!(
            check.passed(),
            "{}: max rel err {:.3e} over tolerance {:.0e}",
            check.name,
            check.max_rel_err,
            check.tolerance
        );
    }
}

#[test]
fn rel_err_floors_small_denominators() {
    // both tiny: treated as matching
    assert_eq!(gradcheck::rel_err(1e-12, -1e-12), 0.0);
    // denominator floor keeps small absolute noise from exploding
    let e = gradcheck::rel_err(1e-6, 2e-6);
    assert!(e <= 1e-3 + 1e-12, "{e}");
    // large disagreement is reported at full scale
    assert!(gradcheck::rel_err(1.0, 2.0) >= 0.5 - 1e-12);
}
