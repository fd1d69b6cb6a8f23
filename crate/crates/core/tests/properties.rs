//! Structural identities that every linear system must satisfy, checked on
//! randomly generated coefficients and on the built-in catalog.

mod common;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cocycle_and_inverse(sys in common::coefficients(), t in -2.0f64..2.0, r in -2.0f64..2.0, s in -2.0f64..2.0) {
        common::cocycle(&sys, t, r, s).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn adjoint_pairing_is_constant(sys in common::coefficients(), a in -3.0f64..0.0, len in 0.5f64..4.0) {
        common::adjoint_constancy(&sys, a, len).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn bounded_growth_sandwich(sys in common::coefficients(), a in -3.0f64..0.0) {
        common::growth_sandwich(&sys, a).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn rank_is_monotone_across_resolvent((diag, off) in common::triangular()) {
        common::rank_monotonicity(&diag, off).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn certified_catalog_systems_are_noncritical() {
    let checked = common::certified_catalog_is_noncritical().unwrap();
    assert!(checked.len() >= 4);
}
