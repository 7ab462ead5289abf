//! Forward hopping gait: double stance and flight separated by two-guard
//! liftoff and touchdown events.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::builtin::{biped, biped_index::*, biped_mode, biped_transition, BipedParams};
use crate::model::HybridModel;
use crate::ocp::{ConstraintSpec, LinearInequality, OcpProblem, QuadraticCost};
use crate::schedule::{ModeSchedule, NodeKind, PlannedEvent};

#[derive(Clone, Debug, PartialEq)]
pub struct HopParams {
    pub hops: usize,
    pub stance_time: f64,
    pub flight_time: f64,
    pub speed: f64,
    /// Initial body height; also the height reference.
    pub height: f64,
    pub rest_length: f64,
    /// Lateral offset of each foot from the body.
    pub foot_width: f64,
    pub clearance: f64,
    /// Double stance after the last touchdown.
    pub tail: f64,
    pub guard_variance: f64,
    pub flow_noise: f64,
    pub jump_noise: f64,
}

impl Default for HopParams {
    fn default() -> Self {
        Self {
            hops: 2,
            stance_time: 0.25,
            flight_time: 0.2,
            speed: 0.5,
            height: 0.9,
            rest_length: 1.0,
            foot_width: 0.1,
            clearance: 0.08,
            tail: 0.1,
            guard_variance: 1e-3,
            flow_noise: 1e-6,
            jump_noise: 1e-6,
        }
    }
}

impl HopParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.stance_time,
            self.flight_time,
            self.height,
            self.rest_length,
            self.foot_width,
            self.clearance,
            self.tail,
        ];
        if self.hops == 0 || positive.iter().any(|v| !(*v > 0.0)) || !(self.speed >= 0.0) {
            return Err(Error::Argument("hop parameters must be positive".into()));
        }
        if !(self.height < self.rest_length) {
            return Err(Error::Argument("initial height must be below the rest length".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<HybridModel> {
        biped(&BipedParams {
            rest_length: self.rest_length,
            guard_variance: self.guard_variance,
            flow_noise: self.flow_noise,
            jump_noise: self.jump_noise,
            ..BipedParams::default()
        })
    }

    pub fn initial_state(&self) -> Vector {
        let mut x = Vector::zeros(NX);
        x[P + 2] = self.height;
        x[V] = self.speed;
        x[FOOT[0] + 1] = self.foot_width;
        x[FOOT[1] + 1] = -self.foot_width;
        x
    }

    pub fn horizon(&self) -> f64 {
        self.hops as f64 * (self.stance_time + self.flight_time) + self.tail
    }

    /// Liftoff and touchdown times.
    pub fn events(&self) -> Vec<PlannedEvent> {
        let cycle = self.stance_time + self.flight_time;
        let mut out = Vec::with_capacity(2 * self.hops);
        for h in 0..self.hops {
            let t0 = h as f64 * cycle;
            out.push(PlannedEvent {
                time: t0 + self.stance_time,
                transition: biped_transition::BOTH_LIFTOFF,
            });
            out.push(PlannedEvent {
                time: t0 + cycle,
                transition: biped_transition::BOTH_TOUCHDOWN,
            });
        }
        out
    }

    /// Offline problem over all hops starting at `t = 0` in double stance.
    pub fn problem(&self, dt: f64) -> Result<OcpProblem> {
        self.validate()?;
        let model = self.model()?;
        let x0 = self.initial_state();
        let schedule = ModeSchedule::from_events(
            &model,
            0.0,
            dt,
            self.horizon(),
            biped_mode::DOUBLE_STANCE,
            &self.events(),
        )?;
        let mut problem = OcpProblem::new(model, schedule, x0.clone());
        let cycle = self.stance_time + self.flight_time;
        let lambda_ref = 9.81 / (2.0 * self.height);
        for i in 0..problem.num_nodes() {
            let kind = problem.schedule.kind(i);
            let tau = problem.schedule.time(i);
            let mut x_ref = Vector::zeros(NX);
            let mut q = Vector::zeros(NX);
            x_ref[P] = x0[P] + self.speed * tau;
            x_ref[P + 2] = self.height;
            x_ref[V] = self.speed;
            q[P] = 10.0;
            q[P + 1] = 10.0;
            q[P + 2] = 5.0;
            q[V] = 10.0;
            q[V + 1] = 5.0;
            let mode = match kind {
                NodeKind::Flow(m) => Some(m),
                _ => None,
            };
            if mode == Some(biped_mode::FLIGHT) {
                let hop = libm::floor(tau / cycle);
                let lift = hop * cycle + self.stance_time;
                let land = (hop + 1.0) * cycle;
                let sigma = ((tau - lift) / (land - lift)).clamp(0.0, 1.0);
                for (k, side) in [(0, 1.0), (1, -1.0)] {
                    let f = FOOT[k];
                    x_ref[f] = x0[P] + self.speed * land;
                    x_ref[f + 1] = side * self.foot_width;
                    x_ref[f + 2] = 4.0 * self.clearance * sigma * (1.0 - sigma);
                    q[f] = 50.0;
                    q[f + 1] = 50.0;
                    q[f + 2] = 50.0;
                }
            }
            let q = Matrix::from_diagonal(&q);
            problem.costs[i] = match kind {
                NodeKind::Flow(m) => {
                    let mut u_ref = Vector::zeros(NU);
                    if m == biped_mode::DOUBLE_STANCE {
                        u_ref[LAMBDA[0]] = lambda_ref;
                        u_ref[LAMBDA[1]] = lambda_ref;
                    }
                    let mut r = Vector::from_element(NU, 1e-1);
                    r[LAMBDA[0]] = 1e-3;
                    r[LAMBDA[1]] = 1e-3;
                    QuadraticCost::new(q, x_ref, Matrix::from_diagonal(&r), u_ref)
                }
                _ => QuadraticCost::state_only(q, x_ref),
            };
            if mode == Some(biped_mode::DOUBLE_STANCE) {
                for k in 0..2 {
                    let lam = LinearInequality::input_bound("force", NU, LAMBDA[k], 0.0, 1.0);
                    problem.constraints[i].push(ConstraintSpec::hard(Arc::new(lam)));
                }
            }
        }
        Ok(problem)
    }
}
