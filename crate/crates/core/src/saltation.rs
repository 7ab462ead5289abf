//! Saltation and guard saltation matrices of a switching event.
//!
//! Guards are taken to decrease toward contact, so a component is transversal
//! when `∇t g + ∇x g · f⁻ < −ε`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{HybridModel, TransitionId};
use crate::schedule::{ModeSchedule, NodeKind};

/// Default transversality threshold.
pub const EPS_TRANSVERSAL: f64 = 1e-8;

/// Everything the saltation formulas need about one event.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLinearization {
    pub t_minus: f64,
    pub t_plus: f64,
    pub x_minus: Vector,
    pub x_plus: Vector,
    pub f_minus: Vector,
    pub f_plus: Vector,
    pub dr_dx: Matrix,
    pub dr_dt: Vector,
    pub dg_dx: Matrix,
    pub dg_dt: Vector,
}

impl EventLinearization {
    /// Linearization at an exact event state with explicitly supplied
    /// pre- and post-event vector fields.
    pub fn at_state(
        model: &HybridModel,
        transition: TransitionId,
        t: f64,
        x_minus: &Vector,
        f_minus: Vector,
        f_plus: Vector,
    ) -> Result<Self> {
        let reset = model.evaluate_reset(transition, t, x_minus)?;
        let guard = model.evaluate_guard(transition, t, x_minus)?;
        let nx = model.nx();
        if f_minus.len() != nx || f_plus.len() != nx {
            return Err(Error::Dimension {
                what: "event vector field",
                expected: nx,
                got: f_minus.len().min(f_plus.len()),
            });
        }
        Ok(Self {
            t_minus: t,
            t_plus: t,
            x_minus: x_minus.clone(),
            x_plus: reset.x_plus,
            f_minus,
            f_plus,
            dr_dx: reset.dx,
            dr_dt: reset.dt,
            dg_dx: guard.dx,
            dg_dt: guard.dt,
        })
    }

    pub fn ng(&self) -> usize {
        self.dg_dt.len()
    }

    pub fn nx(&self) -> usize {
        self.x_minus.len()
    }
}

/// Linearizes the event at jump node `j`, approximating `f⁻` with node
/// `j − 1` data and `f⁺` with node `j + 1` data.
pub fn build_event_linearization(
    model: &HybridModel,
    schedule: &ModeSchedule,
    xs: &[Vector],
    us: &[Vector],
    j: usize,
) -> Result<EventLinearization> {
    let transition = match schedule.kinds().get(j) {
        Some(NodeKind::Jump(tr)) => *tr,
        _ => return Err(Error::Schedule(alloc::format!("node {j} is not a jump node"))),
    };
    if j == 0 || j + 1 >= schedule.horizon_len() {
        return Err(Error::Schedule(alloc::format!(
            "jump node {j} lacks a neighbouring flow node"
        )));
    }
    let (NodeKind::Flow(m_minus), NodeKind::Flow(m_plus)) =
        (schedule.kind(j - 1), schedule.kind(j + 1))
    else {
        return Err(Error::Schedule(alloc::format!(
            "jump node {j} lacks a neighbouring flow node"
        )));
    };
    let f_minus = model.flow_value(m_minus, schedule.time(j - 1), &xs[j - 1], &us[j - 1])?;
    let f_plus = model.flow_value(m_plus, schedule.time(j + 1), &xs[j + 1], &us[j + 1])?;
    EventLinearization::at_state(model, transition, schedule.time(j), &xs[j], f_minus, f_plus)
}

/// `∇t g⁽ⁱ⁾ + ∇x g⁽ⁱ⁾ · f⁻` and whether it is below `−eps`.
pub fn transversality(lin: &EventLinearization, i: usize, eps: f64) -> (f64, bool) {
    let value = lin.dg_dt[i] + (lin.dg_dx.row(i) * &lin.f_minus)[0];
    (value, value < -eps)
}

fn transversal_denominator(lin: &EventLinearization, i: usize, eps: f64) -> Result<f64> {
    if i >= lin.ng() {
        return Err(Error::Argument(alloc::format!(
            "guard component {i} out of range for ng = {}",
            lin.ng()
        )));
    }
    match transversality(lin, i, eps) {
        (value, true) => Ok(value),
        _ => Err(Error::NotTransversal(i)),
    }
}

/// `Ξ_x = ∇xR + (f⁺ − ∇xR f⁻ − ∇tR) ∇x g⁽ⁱ⁾ / (∇t g⁽ⁱ⁾ + ∇x g⁽ⁱ⁾ f⁻)`.
pub fn saltation_matrix(lin: &EventLinearization, i: usize, eps: f64) -> Result<Matrix> {
    let den = transversal_denominator(lin, i, eps)?;
    let jump = &lin.f_plus - &lin.dr_dx * &lin.f_minus - &lin.dr_dt;
    Ok(&lin.dr_dx + (jump / den) * lin.dg_dx.row(i))
}

/// `Ξ_g = (∇xR f⁻ + ∇tR − f⁺) / (∇t g⁽ⁱ⁾ + ∇x g⁽ⁱ⁾ f⁻)`.
pub fn guard_saltation_matrix(lin: &EventLinearization, i: usize, eps: f64) -> Result<Vector> {
    let den = transversal_denominator(lin, i, eps)?;
    Ok((&lin.dr_dx * &lin.f_minus + &lin.dr_dt - &lin.f_plus) / den)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaltationComponent {
    pub denominator: f64,
    pub transversal: bool,
    pub xi_x: Option<Matrix>,
    pub xi_g: Option<Vector>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaltationResult {
    pub components: Vec<SaltationComponent>,
}

impl SaltationResult {
    pub fn num_transversal(&self) -> usize {
        self.components.iter().filter(|c| c.transversal).count()
    }

    pub fn num_skipped(&self) -> usize {
        self.components.len() - self.num_transversal()
    }
}

/// Both matrices for every guard component; non-transversal components
/// are reported without matrices.
pub fn saltation(lin: &EventLinearization, eps: f64) -> SaltationResult {
    let jump = &lin.f_plus - &lin.dr_dx * &lin.f_minus - &lin.dr_dt;
    let components = (0..lin.ng())
        .map(|i| {
            let (denominator, transversal) = transversality(lin, i, eps);
            if transversal {
                SaltationComponent {
                    denominator,
                    transversal,
                    xi_x: Some(&lin.dr_dx + (&jump / denominator) * lin.dg_dx.row(i)),
                    xi_g: Some(-&jump / denominator),
                }
            } else {
                SaltationComponent {
                    denominator,
                    transversal,
                    xi_x: None,
                    xi_g: None,
                }
            }
        })
        .collect();
    SaltationResult { components }
}
