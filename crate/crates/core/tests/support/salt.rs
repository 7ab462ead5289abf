//! Saltation matrices of the library next to their finite-difference
//! estimates.

use contact_smpc_core::linalg::{Matrix, Vector};
use contact_smpc_core::model::builtin::{biped, biped_index::*, bouncing_mass, BipedParams, BouncingMassParams};
use contact_smpc_core::model::{HybridModel, TransitionId};
use contact_smpc_core::saltation::{guard_saltation_matrix, saltation_matrix, EventLinearization, EPS_TRANSVERSAL};

use super::{fd_saltation, rel_err};

pub fn library(model: &HybridModel, tr: TransitionId, u: &Vector, x: &Vector) -> (Matrix, Vector) {
    let t = model.transition(tr).unwrap();
    let x_plus = model.evaluate_reset(tr, 0.0, x).unwrap().x_plus;
    let f_minus = model.flow_value(t.from, 0.0, x, u).unwrap();
    let f_plus = model.flow_value(t.to, 0.0, &x_plus, u).unwrap();
    let lin = EventLinearization::at_state(model, tr, 0.0, x, f_minus, f_plus).unwrap();
    (
        saltation_matrix(&lin, 0, EPS_TRANSVERSAL).unwrap(),
        guard_saltation_matrix(&lin, 0, EPS_TRANSVERSAL).unwrap(),
    )
}

fn column(v: &Vector) -> Matrix {
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Relative errors of `Ξ_x` and `Ξ_g` against the finite-difference oracle.
pub fn errors(model: &HybridModel, tr: TransitionId, u: &Vector, x: &Vector) -> (f64, f64) {
    let (xi_x, xi_g) = library(model, tr, u, x);
    let (fd_x, fd_g) = fd_saltation(model, tr, u, x, 0.01);
    (rel_err(&xi_x, &fd_x), rel_err(&column(&xi_g), &column(&fd_g)))
}

/// Mass falling at 2 m/s onto the ground.
pub fn bouncing_event() -> (HybridModel, Vector, Vector) {
    let m = bouncing_mass(&BouncingMassParams::default()).unwrap();
    (m, Vector::zeros(0), Vector::from_vec(vec![0.0, -2.0]))
}

/// Elastic bounce with unit gravity hitting the ground at unit speed.
pub fn elastic_event() -> (HybridModel, Vector, Vector) {
    let m = bouncing_mass(&BouncingMassParams {
        gravity: 1.0,
        restitution: 1.0,
        ..BouncingMassParams::default()
    })
    .unwrap();
    (m, Vector::zeros(0), Vector::from_vec(vec![0.0, -1.0]))
}

pub fn elastic_closed_form() -> (Matrix, Vector) {
    (
        Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 2.0, -1.0]),
        Vector::from_vec(vec![2.0, -2.0]),
    )
}

/// Right foot touching down during left stance.
pub fn biped_event() -> (HybridModel, Vector, Vector) {
    let m = biped(&BipedParams::default()).unwrap();
    let mut x = Vector::zeros(NX);
    x[P + 2] = 0.9;
    x[V] = 0.5;
    x[V + 2] = -0.1;
    x[FOOT[0]] = -0.1;
    x[FOOT[0] + 1] = 0.1;
    x[FOOT[1]] = 0.2;
    x[FOOT[1] + 1] = -0.1;
    let mut u = Vector::zeros(NU);
    u[LAMBDA[0]] = 10.0;
    u[LAMBDA[1]] = 8.0;
    u[W[0]] = 0.3;
    u[W[0] + 2] = 0.2;
    u[W[1]] = 0.4;
    u[W[1] + 2] = -0.6;
    (m, u, x)
}
