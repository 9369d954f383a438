//! GEM projection against brute-force active-set enumeration.

#[path = "oracles/gem.rs"]
mod oracle;

use kwscl_core::strategies::gem_project;
use oracle::dot;
use proptest::prelude::*;

#[test]
fn projection_matches_brute_force_on_200_instances() {
    oracle::projection_matches_brute_force_on_200_instances();
}

#[test]
fn hand_examples() {
    oracle::hand_examples();
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(gem_project(&[1.0, 2.0], &[vec![1.0]]).is_err());
    assert!(gem_project(&[f64::NAN], &[vec![1.0]]).is_err());
}

proptest! {
    #[test]
    fn projection_is_feasible_and_no_farther_than_any_feasible_point(
        g in prop::collection::vec(-3.0f64..3.0, 6),
        m in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 1..4),
    ) {
        let out = gem_project(&g, &m).unwrap();
        prop_assume!(out.converged);
        for mk in &m {
            prop_assert!(dot(&out.grad, mk) >= -1e-9 * (1.0 + dot(mk, mk)));
        }
        // Zero is always feasible, so the projection is at most ||g|| away.
        let dist: f64 = out.grad.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!(dist <= dot(&g, &g) + 1e-9);
    }
}
