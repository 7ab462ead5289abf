//! Linear-quadratic oracles for the solver.

use std::sync::Arc;

use contact_smpc_core::model::builtin::{double_integrator, DoubleIntegratorParams};
use contact_smpc_core::ocp::{
    evaluate, newton_step, solve, ConstraintSpec, LinearInequality, OcpProblem, QuadraticCost, SolverOptions,
    SolverState, Uncertainty,
};
use contact_smpc_core::{Matrix, ModeId, ModeSchedule, Vector};

pub const DT: f64 = 0.1;

pub fn a_mat() -> Matrix {
    Matrix::from_row_slice(2, 2, &[1.0, DT, 0.0, 1.0])
}

pub fn b_mat() -> Matrix {
    Matrix::from_row_slice(2, 1, &[0.0, DT])
}

/// Stationary solution of the discrete Riccati equation by fixed-point
/// iteration.
pub fn dare(q: &Matrix, r: &Matrix) -> (Matrix, Matrix) {
    let (a, b) = (a_mat(), b_mat());
    let mut p = q.clone();
    for _ in 0..100_000 {
        let s = r + b.transpose() * &p * &b;
        let k = -s.try_inverse().unwrap() * b.transpose() * &p * &a;
        let next = q + a.transpose() * &p * &a + a.transpose() * &p * &b * &k;
        let diff = (&next - &p).abs().max();
        p = (&next + next.transpose()) * 0.5;
        if diff < 1e-15 {
            break;
        }
    }
    let s = r + b.transpose() * &p * &b;
    let k = -s.try_inverse().unwrap() * b.transpose() * &p * &a;
    (p, k)
}

pub fn plain_problem(n: usize, x0: Vector) -> OcpProblem {
    let model = double_integrator(&DoubleIntegratorParams::default()).unwrap();
    let sched = ModeSchedule::from_events(&model, 0.0, DT, n as f64 * DT, ModeId(0), &[]).unwrap();
    OcpProblem::new(model, sched, x0)
}

/// Largest deviation of the solved unconstrained LQ trajectory and gains
/// from the stationary Riccati solution, and whether the solve converged.
pub fn lq_riccati_deviation() -> (f64, bool) {
    let q = Matrix::identity(2, 2);
    let r = Matrix::from_element(1, 1, 0.1);
    let (p_inf, k_inf) = dare(&q, &r);
    let n = 60;
    let x0 = Vector::from_vec(vec![1.0, -0.5]);
    let mut prob = plain_problem(n, x0.clone());
    for i in 0..n {
        prob.costs[i] = QuadraticCost::new(q.clone(), Vector::zeros(2), r.clone(), Vector::zeros(1));
    }
    prob.costs[n] = QuadraticCost::state_only(p_inf, Vector::zeros(2));
    let opts = SolverOptions::default();
    let out = solve(&prob, &Uncertainty::Nominal, &opts, None).unwrap();
    let acl = a_mat() + b_mat() * &k_inf;
    let mut x = x0;
    let mut dev = 0.0f64;
    for i in 0..n {
        let u = &k_inf * &x;
        dev = dev
            .max((&out.trajectory.xs[i] - &x).amax())
            .max((&out.trajectory.us[i] - u).amax())
            .max((&out.trajectory.gains[i] - &k_inf).amax());
        x = &acl * x;
    }
    (dev, out.converged)
}


/// Largest difference between the Riccati Newton step and the solution of
/// the dense primal-dual KKT system on a constrained three-node instance.
pub fn newton_step_dense_kkt_deviation() -> f64 {
    let n = 3;
    let mut prob = plain_problem(n, Vector::from_vec(vec![0.0, 1.0]));
    let q = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let r = Matrix::from_element(1, 1, 0.5);
    let x_ref = Vector::from_vec(vec![1.0, 0.0]);
    for i in 0..n {
        prob.costs[i] = QuadraticCost::new(q.clone(), x_ref.clone(), r.clone(), Vector::from_element(1, 0.1));
        let ub = LinearInequality::input_bound("u_max", 1, 0, 0.2, -1.0);
        prob.constraints[i].push(ConstraintSpec::hard(Arc::new(ub)));
    }
    prob.costs[n] = QuadraticCost::state_only(q.clone() * 3.0, x_ref.clone());
    for i in 1..=n {
        let lb = LinearInequality::state_bound("v_min", 2, 1, 0.5, 1.0);
        prob.constraints[i].push(ConstraintSpec::hard(Arc::new(lb)));
    }
    let opts = SolverOptions::default();
    let mut st = SolverState::from_rollout(&prob, &opts).unwrap();
    st.xs[2][0] += 0.1;
    st.xs[2][1] -= 0.05;
    st.us[1][0] = 0.15;
    let ev = evaluate(&prob, &Uncertainty::Nominal, &opts, &mut st).unwrap();
    let step = newton_step(&prob, &opts, &st, &ev).unwrap();

    // dense primal-dual Newton system in (Δx₁..₃, Δu₀..₂, Δs, Δz, λ⁺)
    let (a, b) = (a_mat(), b_mat());
    let nw = 9; // x1,x2,x3 at 0..6, u0..u2 at 6..9
    let xi = |k: usize| 2 * (k - 1);
    let ui = |k: usize| 6 + k;
    // inequality rows: u rows at nodes 0..2, v rows at nodes 1..3
    let mut rows: Vec<(Vec<(usize, f64)>, f64, f64, f64)> = Vec::new();
    for k in 0..n {
        let u = st.us[k][0];
        rows.push((vec![(ui(k), -1.0)], 0.2 - u, st.slacks[k][0], st.duals[k][0]));
    }
    for k in 1..=n {
        let v = st.xs[k][1];
        let r_idx = if k < n { 1 } else { 0 };
        rows.push((vec![(xi(k) + 1, 1.0)], v - 0.5, st.slacks[k][r_idx], st.duals[k][r_idx]));
    }
    let m = rows.len();
    let nd = 2 * n;
    let dim = nw + m + m + nd;
    let (os, oz, ol) = (nw, nw + m, nw + 2 * m);
    let mut kkt = Matrix::zeros(dim, dim);
    let mut rhs = Vector::zeros(dim);
    let mu = st.mu;
    // cost Hessian and gradient
    for k in 1..=n {
        let qk = if k == n { q.clone() * 3.0 } else { q.clone() };
        let g = &qk * (&st.xs[k] - &x_ref);
        for i in 0..2 {
            rhs[xi(k) + i] -= g[i];
            for j in 0..2 {
                kkt[(xi(k) + i, xi(k) + j)] += qk[(i, j)];
            }
        }
    }
    for k in 0..n {
        kkt[(ui(k), ui(k))] += r[(0, 0)];
        rhs[ui(k)] -= r[(0, 0)] * (st.us[k][0] - 0.1);
    }
    // inequality rows: c(w) − s = 0 with multiplier z, s z = μ
    for (r_i, (coef, c, s, z)) in rows.iter().enumerate() {
        for (col, v) in coef {
            kkt[(*col, oz + r_i)] -= v; // −Cᵀ Δz
            rhs[*col] += v * z; // + Cᵀ z
            kkt[(oz + r_i, *col)] += v; // C Δw − Δs
        }
        kkt[(oz + r_i, os + r_i)] -= 1.0;
        rhs[oz + r_i] = -(c - s);
        kkt[(os + r_i, os + r_i)] = *z;
        kkt[(os + r_i, oz + r_i)] = *s;
        rhs[os + r_i] = mu - s * z;
    }
    // dynamics rows x_{k+1} = A x_k + B u_k with multiplier λ⁺
    for k in 0..n {
        let row = ol + 2 * k;
        let defect = &a * &st.xs[k] + &b * &st.us[k] - &st.xs[k + 1];
        for i in 0..2 {
            rhs[row + i] = -defect[i];
            kkt[(row + i, xi(k + 1) + i)] -= 1.0;
            kkt[(xi(k + 1) + i, row + i)] -= 1.0;
            if k > 0 {
                for j in 0..2 {
                    kkt[(row + i, xi(k) + j)] += a[(i, j)];
                    kkt[(xi(k) + j, row + i)] += a[(i, j)];
                }
            }
            kkt[(row + i, ui(k))] += b[(i, 0)];
            kkt[(ui(k), row + i)] += b[(i, 0)];
        }
    }
    let sol = kkt.lu().solve(&rhs).unwrap();
    let mut dev = 0.0f64;
    for k in 1..=n {
        for i in 0..2 {
            dev = dev.max((sol[xi(k) + i] - step.dx[k][i]).abs());
        }
    }
    for k in 0..n {
        dev = dev.max((sol[ui(k)] - step.du[k][0]).abs());
    }
    for (r_i, k) in (0..n).enumerate() {
        dev = dev.max((sol[os + r_i] - step.ds[k][0]).abs());
        dev = dev.max((sol[oz + r_i] - step.dz[k][0]).abs());
    }
    dev
}

