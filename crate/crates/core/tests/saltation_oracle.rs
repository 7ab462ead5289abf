mod support;

use std::time::Instant;

use contact_smpc_core::model::builtin::{biped_mode, biped_transition};
use contact_smpc_core::model::TransitionId;
use support::salt::{biped_event, bouncing_event, elastic_closed_form, elastic_event, errors, library};
use support::{fd_saltation, rel_err};

#[test]
fn bouncing_mass_matches_finite_differences() {
    let start = Instant::now();
    let (m, u, x) = bouncing_event();
    let (ex, eg) = errors(&m, TransitionId(0), &u, &x);
    assert!(ex <= 1e-4, "Ξ_x relative error {ex}");
    assert!(eg <= 1e-4, "Ξ_g relative error {eg}");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn elastic_bounce_oracle_confirms_closed_form() {
    let (m, u, x) = elastic_event();
    let (cx, cg) = elastic_closed_form();
    let (fd_x, fd_g) = fd_saltation(&m, TransitionId(0), &u, &x, 0.01);
    assert!(rel_err(&fd_x, &cx) < 1e-6);
    assert!((fd_g - &cg).norm() < 1e-6);
    let (xi_x, xi_g) = library(&m, TransitionId(0), &u, &x);
    assert!((xi_x - cx).amax() <= 1e-10);
    assert!((xi_g - cg).amax() <= 1e-10);
}

#[test]
fn biped_touchdown_matches_finite_differences() {
    let start = Instant::now();
    let (m, u, x) = biped_event();
    assert_eq!(m.transition(biped_transition::RIGHT_TOUCHDOWN).unwrap().from, biped_mode::LEFT_STANCE);
    let (ex, eg) = errors(&m, biped_transition::RIGHT_TOUCHDOWN, &u, &x);
    assert!(ex <= 1e-4, "Ξ_x relative error {ex}");
    assert!(eg <= 1e-4, "Ξ_g relative error {eg}");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
