//! Tightened optimal control problem over a fixed mode schedule.

mod barrier;
mod problem;
mod riccati;
mod solver;
mod warmstart;

pub use barrier::{fraction_to_boundary, primal_dual_row, relaxed_log_barrier, slack_dual_step};
pub use problem::{
    ConstraintSpec, Inequality, LinearInequality, OcpProblem, QuadraticCost, Softness, Uncertainty,
};
pub use riccati::{riccati_recursion, QuadraticSubproblem, RiccatiOptions, RiccatiSolution, Stage};
pub use solver::{
    evaluate, newton_step, solve, step, BarrierSchedule, NewtonStep, BeliefTrajectory, Evaluation, IterationLog, KktResiduals,
    RowBlock, SolveOutput, SolverOptions, SolverState,
};
pub use warmstart::{shift, shift_aligned};
