//! Regulation of a double integrator with an input bound and a tightened
//! position limit.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::covariance::BackoffSpec;
use crate::error::Result;
use crate::linalg::{Matrix, Vector};
use crate::model::builtin::{double_integrator, DoubleIntegratorParams};
use crate::model::{HybridModel, ModeId};
use crate::ocp::{ConstraintSpec, LinearInequality, OcpProblem, QuadraticCost};
use crate::runtime::MpcTask;
use crate::schedule::ModeSchedule;

#[derive(Clone, Debug)]
pub struct DoubleIntegratorTask {
    pub model: HybridModel,
    pub dt: f64,
    pub horizon: f64,
    pub x_ref: Vector,
    pub q: f64,
    pub r: f64,
    pub terminal_weight: f64,
    pub input_max: f64,
    /// Upper position limit, tightened at `probability`.
    pub position_max: Option<f64>,
    pub probability: f64,
}

impl DoubleIntegratorTask {
    /// Flow-only regulation to the origin; the synthetic switching guard
    /// is moved out of reach.
    pub fn new(dt: f64, horizon: f64, noise: f64) -> Result<Self> {
        let model = double_integrator(&DoubleIntegratorParams {
            switch_velocity: 1e9,
            noise,
            ..DoubleIntegratorParams::default()
        })?;
        Ok(Self {
            model,
            dt,
            horizon,
            x_ref: Vector::zeros(2),
            q: 1.0,
            r: 0.1,
            terminal_weight: 10.0,
            input_max: 10.0,
            position_max: None,
            probability: 0.9,
        })
    }

    pub fn problem(&self, t: f64, x: &Vector) -> Result<OcpProblem> {
        let schedule = ModeSchedule::from_events(&self.model, t, self.dt, self.horizon, ModeId(0), &[])?;
        let mut p = OcpProblem::new(self.model.clone(), schedule, x.clone());
        let n = p.num_nodes();
        for i in 0..n {
            let q = if i + 1 == n { self.q * self.terminal_weight } else { self.q };
            if i + 1 == n {
                p.costs[i] = QuadraticCost::state_only(Matrix::identity(2, 2) * q, self.x_ref.clone());
            } else {
                p.costs[i] = QuadraticCost::new(
                    Matrix::identity(2, 2) * q,
                    self.x_ref.clone(),
                    Matrix::identity(1, 1) * self.r,
                    Vector::zeros(1),
                );
                let upper = LinearInequality::input_bound("input_upper", 1, 0, self.input_max, -1.0);
                let lower = LinearInequality::input_bound("input_lower", 1, 0, -self.input_max, 1.0);
                p.constraints[i].push(ConstraintSpec::hard(Arc::new(upper)));
                p.constraints[i].push(ConstraintSpec::hard(Arc::new(lower)));
            }
            if let Some(pmax) = self.position_max {
                if i > 0 {
                    let c = LinearInequality::state_bound("position", 2, 0, pmax, -1.0);
                    p.constraints[i].push(
                        ConstraintSpec::soft(Arc::new(c))
                            .tightened(BackoffSpec::from_probability(self.probability, f64::INFINITY)?),
                    );
                }
            }
        }
        Ok(p)
    }
}

impl MpcTask for DoubleIntegratorTask {
    fn build(&mut self, t: f64, x: &Vector, _mode: ModeId) -> Result<OcpProblem> {
        self.problem(t, x)
    }

    fn monitored_names(&self) -> Vec<String> {
        vec![String::from("position")]
    }

    fn monitored(&self, _t: f64, x: &Vector, _mode: ModeId) -> Vec<f64> {
        vec![self.position_max.map_or(f64::INFINITY, |p| p - x[0])]
    }
}
