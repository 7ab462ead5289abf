use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::covariance::{BackoffSpec, CovarianceOptions};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::HybridModel;
use crate::schedule::{ModeSchedule, NodeKind};

/// `½ (x − x_ref)ᵀ Q (x − x_ref) + ½ (u − u_ref)ᵀ R (u − u_ref)`.
///
/// Jump and terminal nodes use only the state part.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    pub q: Matrix,
    pub x_ref: Vector,
    pub r: Matrix,
    pub u_ref: Vector,
}

impl QuadraticCost {
    pub fn new(q: Matrix, x_ref: Vector, r: Matrix, u_ref: Vector) -> Self {
        Self { q, x_ref, r, u_ref }
    }

    pub fn state_only(q: Matrix, x_ref: Vector) -> Self {
        Self {
            q,
            x_ref,
            r: Matrix::zeros(0, 0),
            u_ref: Vector::zeros(0),
        }
    }

    pub fn value(&self, x: &Vector, u: &Vector) -> f64 {
        let dx = x - &self.x_ref;
        let mut v = 0.5 * dx.dot(&(&self.q * &dx));
        if !u.is_empty() && self.r.nrows() == u.len() {
            let du = u - &self.u_ref;
            v += 0.5 * du.dot(&(&self.r * &du));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Softness {
    /// Kept strictly feasible through slacks and duals.
    Hard,
    /// Relaxed log barrier penalty, may be violated.
    Soft,
}

/// Inequality `h(t, x, u) ≥ 0`; at jump and terminal nodes `u` is empty.
pub trait Inequality: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &Vector, u: &Vector) -> Vector;
    /// `(∂h/∂x, ∂h/∂u)`; `∂h/∂u` has zero columns when `u` is empty.
    fn jacobians(&self, t: f64, x: &Vector, u: &Vector) -> (Matrix, Matrix);
    fn depends_on_input(&self) -> bool;
}

/// `h = C_x x + C_u u + d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearInequality {
    pub name: String,
    pub cx: Matrix,
    pub cu: Matrix,
    pub d: Vector,
}

impl LinearInequality {
    pub fn new(name: impl Into<String>, cx: Matrix, cu: Matrix, d: Vector) -> Self {
        Self {
            name: name.into(),
            cx,
            cu,
            d,
        }
    }

    /// Rows `±(x_i − bound)` style bounds on single coordinates:
    /// `sign·(x[index] − bound) ≥ 0`.
    pub fn state_bound(name: impl Into<String>, nx: usize, index: usize, bound: f64, sign: f64) -> Self {
        let mut cx = Matrix::zeros(1, nx);
        cx[(0, index)] = sign;
        Self::new(name, cx, Matrix::zeros(1, 0), Vector::from_element(1, -sign * bound))
    }

    pub fn input_bound(name: impl Into<String>, nu: usize, index: usize, bound: f64, sign: f64) -> Self {
        let mut cu = Matrix::zeros(1, nu);
        cu[(0, index)] = sign;
        Self::new(name, Matrix::zeros(1, 0), cu, Vector::from_element(1, -sign * bound))
    }
}

impl Inequality for LinearInequality {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.d.len()
    }

    fn eval(&self, _t: f64, x: &Vector, u: &Vector) -> Vector {
        let mut h = self.d.clone();
        if self.cx.ncols() > 0 {
            h += &self.cx * x;
        }
        if self.cu.ncols() > 0 && !u.is_empty() {
            h += &self.cu * u;
        }
        h
    }

    fn jacobians(&self, _t: f64, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
        let hx = if self.cx.ncols() > 0 {
            self.cx.clone()
        } else {
            Matrix::zeros(self.dim(), x.len())
        };
        let hu = if u.is_empty() {
            Matrix::zeros(self.dim(), 0)
        } else if self.cu.ncols() > 0 {
            self.cu.clone()
        } else {
            Matrix::zeros(self.dim(), u.len())
        };
        (hx, hu)
    }

    fn depends_on_input(&self) -> bool {
        self.cu.iter().any(|v| *v != 0.0)
    }
}

/// An inequality placed at a node, with its softness and optional tightening.
#[derive(Clone)]
pub struct ConstraintSpec {
    pub constraint: Arc<dyn Inequality>,
    pub softness: Softness,
    /// `None` keeps the constraint untightened in every uncertainty mode.
    pub backoff: Option<BackoffSpec>,
}

impl core::fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("name", &self.constraint.name())
            .field("dim", &self.constraint.dim())
            .field("softness", &self.softness)
            .field("backoff", &self.backoff)
            .finish()
    }
}

impl ConstraintSpec {
    pub fn hard(c: Arc<dyn Inequality>) -> Self {
        Self {
            constraint: c,
            softness: Softness::Hard,
            backoff: None,
        }
    }

    pub fn soft(c: Arc<dyn Inequality>) -> Self {
        Self {
            constraint: c,
            softness: Softness::Soft,
            backoff: None,
        }
    }

    pub fn tightened(mut self, backoff: BackoffSpec) -> Self {
        self.backoff = Some(backoff);
        self
    }
}

/// Source of the backoff terms.
#[derive(Clone, Debug, PartialEq)]
pub enum Uncertainty {
    /// `β ≡ 0`.
    Nominal,
    /// `β` from the propagated covariance.
    Covariance {
        options: CovarianceOptions,
        p0: Matrix,
    },
    /// Fixed `β` per constraint name; unnamed constraints get zero.
    Margins(BTreeMap<String, f64>),
}

impl Uncertainty {
    pub fn label(&self) -> &'static str {
        match self {
            Uncertainty::Nominal => "nominal",
            Uncertainty::Covariance { .. } => "covariance",
            Uncertainty::Margins(_) => "margins",
        }
    }
}

#[derive(Clone, Debug)]
pub struct OcpProblem {
    pub model: HybridModel,
    pub schedule: ModeSchedule,
    /// One cost per node `0..=N`.
    pub costs: Vec<QuadraticCost>,
    /// Inequalities per node `0..=N`.
    pub constraints: Vec<Vec<ConstraintSpec>>,
    /// Measured initial state.
    pub x0: Vector,
}

impl OcpProblem {
    pub fn new(model: HybridModel, schedule: ModeSchedule, x0: Vector) -> Self {
        let n = schedule.num_nodes();
        let nx = model.nx();
        let nu = model.nu();
        let costs = (0..n)
            .map(|i| {
                if schedule.kind(i).is_flow() {
                    QuadraticCost::new(
                        Matrix::zeros(nx, nx),
                        Vector::zeros(nx),
                        Matrix::zeros(nu, nu),
                        Vector::zeros(nu),
                    )
                } else {
                    QuadraticCost::state_only(Matrix::zeros(nx, nx), Vector::zeros(nx))
                }
            })
            .collect();
        Self {
            model,
            schedule,
            costs,
            constraints: vec![Vec::new(); n],
            x0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.schedule.num_nodes()
    }

    /// Input dimension at node `i`: `nu` at flow nodes, zero otherwise.
    pub fn input_dim(&self, i: usize) -> usize {
        if self.schedule.kind(i).is_flow() {
            self.model.nu()
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let nx = self.model.nx();
        let nu = self.model.nu();
        if self.x0.len() != nx {
            return Err(Error::Problem(format!(
                "initial state has {} entries, model has {nx}",
                self.x0.len()
            )));
        }
        if self.costs.len() != n || self.constraints.len() != n {
            return Err(Error::Problem(format!(
                "costs/constraints must have one entry per node ({n})"
            )));
        }
        for (i, cost) in self.costs.iter().enumerate() {
            if cost.q.nrows() != nx || cost.q.ncols() != nx || cost.x_ref.len() != nx {
                return Err(Error::Problem(format!("state cost at node {i} has wrong shape")));
            }
            if self.schedule.kind(i).is_flow()
                && (cost.r.nrows() != nu || cost.r.ncols() != nu || cost.u_ref.len() != nu)
            {
                return Err(Error::Problem(format!("input cost at node {i} has wrong shape")));
            }
        }
        for (i, specs) in self.constraints.iter().enumerate() {
            let flow = self.schedule.kind(i).is_flow();
            for spec in specs {
                let c = &spec.constraint;
                if let Some(b) = &spec.backoff {
                    b.validate()?;
                }
                if !flow && c.depends_on_input() {
                    return Err(Error::Problem(format!(
                        "constraint '{}' at node {i} depends on the input but the node has none",
                        c.name()
                    )));
                }
                if spec.backoff.is_some() && !c.depends_on_input() && spec.softness == Softness::Hard {
                    return Err(Error::Problem(format!(
                        "state-only tightened constraint '{}' at node {i} must be soft",
                        c.name()
                    )));
                }
            }
        }
        if let NodeKind::Jump(_) = self.schedule.kind(0) {
            return Err(Error::Problem("node 0 must be a flow node".into()));
        }
        Ok(())
    }
}
