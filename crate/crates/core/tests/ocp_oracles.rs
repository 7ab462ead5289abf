mod support;

use std::sync::Arc;

use contact_smpc_core::covariance::{BackoffSpec, CovarianceOptions};
use contact_smpc_core::model::builtin::{double_integrator, DoubleIntegratorParams};
use contact_smpc_core::ocp::{
    solve, BarrierSchedule, ConstraintSpec, LinearInequality, OcpProblem,
    QuadraticCost, SolverOptions, SolverState, Uncertainty,
};
use contact_smpc_core::schedule::PlannedEvent;
use contact_smpc_core::{Matrix, ModeId, ModeSchedule, NodeKind, TransitionId, Vector};
use support::lq::*;

#[test]
fn unconstrained_lq_matches_stationary_riccati() {
    let (dev, converged) = lq_riccati_deviation();
    assert!(converged);
    assert!(dev < 1e-6, "deviation {dev}");
}

#[test]
fn newton_step_matches_dense_kkt_on_three_node_instance() {
    let dev = newton_step_dense_kkt_deviation();
    assert!(dev < 1e-8, "deviation {dev}");
}

fn hybrid_problem(x0: Vector) -> OcpProblem {
    let model = double_integrator(&DoubleIntegratorParams::default()).unwrap();
    let ev = [PlannedEvent {
        time: 0.55,
        transition: TransitionId(0),
    }];
    let sched = ModeSchedule::from_events(&model, 0.0, DT, 1.5, ModeId(0), &ev).unwrap();
    let mut prob = OcpProblem::new(model, sched, x0);
    for i in 0..prob.num_nodes() {
        let q = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.1]));
        let x_ref = Vector::from_vec(vec![2.0, 0.0]);
        prob.costs[i] = if prob.schedule.kind(i).is_flow() {
            QuadraticCost::new(q, x_ref, Matrix::from_element(1, 1, 0.05), Vector::zeros(1))
        } else {
            QuadraticCost::state_only(q, x_ref)
        };
    }
    prob
}

#[test]
fn switching_constraint_is_met_at_the_jump_node() {
    let prob = hybrid_problem(Vector::from_vec(vec![0.0, 0.0]));
    let opts = SolverOptions::default();
    let out = solve(&prob, &Uncertainty::Nominal, &opts, None).unwrap();
    assert!(out.converged, "{:?}", out.kkt);
    let (j, _) = prob.schedule.jump_nodes().next().unwrap();
    assert!((out.trajectory.xs[j][1] - 1.0).abs() < 1e-8);
    // linear problem with a linear switching row converges in one step
    assert_eq!(out.log.len(), 1);
    assert!(out.kkt.max() < 1e-9);
}

#[test]
fn kkt_residual_decreases_with_full_steps_on_lq_with_bounds() {
    let mut prob = hybrid_problem(Vector::from_vec(vec![0.0, 0.0]));
    for i in 0..prob.num_nodes() {
        if prob.schedule.kind(i).is_flow() {
            let ub = LinearInequality::input_bound("u_max", 1, 0, 4.0, -1.0);
            prob.constraints[i].push(ConstraintSpec::hard(Arc::new(ub)));
        }
    }
    let opts = SolverOptions {
        line_search: false,
        max_iterations: 30,
        ..SolverOptions::default()
    };
    let out = solve(&prob, &Uncertainty::Nominal, &opts, None).unwrap();
    assert!(out.converged);
    let mut prev = f64::INFINITY;
    for entry in &out.log {
        assert!(entry.kkt.max() <= prev, "{} > {}", entry.kkt.max(), prev);
        prev = entry.kkt.max();
    }
    assert!(out.kkt.max() <= prev);
}

#[test]
fn bound_duals_approach_qp_multipliers() {
    // one-step problem min ½x₁² + ½r u² with u ≤ ū active:
    // x₁ = x₀ + u·dt·(…); the multiplier follows from stationarity by hand.
    let mut prob = plain_problem(1, Vector::from_vec(vec![0.0, 0.0]));
    let r = 0.01;
    prob.costs[0] = QuadraticCost::new(
        Matrix::zeros(2, 2),
        Vector::zeros(2),
        Matrix::from_element(1, 1, r),
        Vector::zeros(1),
    );
    let target = 1.0;
    prob.costs[1] = QuadraticCost::state_only(
        Matrix::from_diagonal(&Vector::from_vec(vec![0.0, 1.0])),
        Vector::from_vec(vec![0.0, target]),
    );
    let ub = 2.0;
    prob.constraints[0].push(ConstraintSpec::hard(Arc::new(LinearInequality::input_bound(
        "u_max", 1, 0, ub, -1.0,
    ))));
    let opts = SolverOptions {
        barrier: BarrierSchedule::Monotone { mu_min: 1e-10 },
        tolerance: 1e-9,
        max_iterations: 200,
        ..SolverOptions::default()
    };
    let out = solve(&prob, &Uncertainty::Nominal, &opts, None).unwrap();
    assert!(out.converged);
    // unconstrained optimum u = target·dt/(dt² + r) = 5 > ū, so the bound binds;
    // stationarity: r ū + dt (dt ū − target) − z·(−1)·(−1)… = 0
    let z_qp = r * ub + DT * (DT * ub - target);
    let z_qp = -z_qp;
    assert!(z_qp > 0.0);
    assert!((out.trajectory.us[0][0] - ub).abs() < 1e-6);
    assert!((out.state.duals[0][0] - z_qp).abs() < 1e-6, "{} vs {}", out.state.duals[0][0], z_qp);
}

fn stochastic_problem() -> (OcpProblem, Matrix) {
    let mut prob = hybrid_problem(Vector::from_vec(vec![0.0, 0.0]));
    let spec = BackoffSpec::from_probability(0.9, 1.0).unwrap();
    for i in 1..prob.num_nodes() {
        let pmax = LinearInequality::state_bound("p_max", 2, 0, 0.6, -1.0);
        prob.constraints[i].push(ConstraintSpec::soft(Arc::new(pmax)).tightened(spec));
    }
    let p0 = Matrix::from_diagonal(&Vector::from_vec(vec![1e-3, 4e-3]));
    (prob, p0)
}

#[test]
fn active_bound_keeps_margin_equal_to_backoff() {
    let (prob, p0) = stochastic_problem();
    let unc = Uncertainty::Covariance {
        options: CovarianceOptions::default(),
        p0,
    };
    let opts = SolverOptions::default();
    let out = solve(&prob, &unc, &opts, None).unwrap();
    assert!(out.converged, "{:?}", out.kkt);
    let tr = &out.trajectory;
    // most active node: smallest tightened value
    let (i, c) = (1..prob.num_nodes())
        .map(|i| (i, 0.6 - tr.xs[i][0] - tr.backoffs[i][0]))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let beta = tr.backoffs[i][0];
    assert!(beta > 1e-3, "backoff {beta}");
    // margin to the untightened bound equals β up to the barrier offset μ/|∇cost|
    let margin = 0.6 - tr.xs[i][0];
    assert!(margin >= beta - 1e-4 && margin - beta < 2e-3, "margin {margin} β {beta} c {c}");
    // and the covariance cache reproduces the backoff
    let p = &tr.covariances[i];
    let gamma = 1.2815515655446004;
    assert!((beta - gamma * p[(0, 0)].sqrt()).abs() < 1e-9);
}

#[test]
fn zero_uncertainty_reproduces_nominal_iterates_exactly() {
    let (prob, _) = stochastic_problem();
    let model = prob
        .model
        .clone()
        .with_guard_covariance(0.0)
        .unwrap()
        .with_flow_noise(Matrix::zeros(2, 2))
        .unwrap()
        .with_jump_noise(Matrix::zeros(2, 2))
        .unwrap();
    let prob = OcpProblem { model, ..prob };
    let unc = Uncertainty::Covariance {
        options: CovarianceOptions::default(),
        p0: Matrix::zeros(2, 2),
    };
    let opts = SolverOptions {
        max_iterations: 8,
        ..SolverOptions::default()
    };
    let a = solve(&prob, &Uncertainty::Nominal, &opts, None).unwrap();
    let b = solve(&prob, &unc, &opts, None).unwrap();
    assert_eq!(a.trajectory.xs, b.trajectory.xs);
    assert_eq!(a.trajectory.us, b.trajectory.us);
    assert_eq!(a.log.len(), b.log.len());
    for (x, y) in a.log.iter().zip(&b.log) {
        assert_eq!(x.kkt, y.kkt);
        assert_eq!(x.alpha_primal, y.alpha_primal);
    }
}

#[test]
fn transcription_layout_counts() {
    let model = double_integrator(&DoubleIntegratorParams::default()).unwrap();
    let ev = [PlannedEvent {
        time: 0.45,
        transition: TransitionId(0),
    }];
    // eight grid intervals, the jump node and its post-event flow node
    let sched = ModeSchedule::from_events(&model, 0.0, DT, 0.8, ModeId(0), &ev).unwrap();
    let prob = OcpProblem::new(model, sched, Vector::zeros(2));
    assert_eq!(prob.schedule.horizon_len(), 10);
    let st = SolverState::from_reference(&prob, &SolverOptions::default());
    assert_eq!(st.xs.len(), 11);
    assert_eq!(st.us.iter().filter(|u| !u.is_empty()).count(), 9);
    assert!(matches!(prob.schedule.kind(10), NodeKind::Terminal));
}
