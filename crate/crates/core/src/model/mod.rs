//! Multi-mode dynamical systems: per-mode flow maps plus guarded, resetting
//! transitions between modes.
//!
//! Analytic jacobians are optional everywhere; when a map does not provide
//! them they are recovered by central differences with step
//! `1e-6·(1 + |x|∞)`.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use alloc::format;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

pub mod builtin;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransitionId(pub usize);

/// Continuous dynamics `ẋ = f(t, x, u)` of one mode.
pub trait FlowMap: Send + Sync {
    fn eval(&self, t: f64, x: &Vector, u: &Vector) -> Vector;

    /// `(∂f/∂x, ∂f/∂u)` when available in closed form.
    fn jacobians(&self, _t: f64, _x: &Vector, _u: &Vector) -> Option<(Matrix, Matrix)> {
        None
    }
}

/// Guard `g(t, x)`; a component reaching zero from above triggers the event.
pub trait GuardMap: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &Vector) -> Vector;

    /// `(∂g/∂x, ∂g/∂t)` when available in closed form.
    fn jacobians(&self, _t: f64, _x: &Vector) -> Option<(Matrix, Vector)> {
        None
    }
}

/// Reset `x⁺ = R(t, x⁻)` applied at an event.
pub trait ResetMap: Send + Sync {
    fn eval(&self, t: f64, x: &Vector) -> Vector;

    /// `(∂R/∂x, ∂R/∂t)` when available in closed form.
    fn jacobians(&self, _t: f64, _x: &Vector) -> Option<(Matrix, Vector)> {
        None
    }
}

/// Flow map backed by a closure; jacobians fall back to finite differences.
pub struct FnFlow<F>(pub F);

impl<F> FlowMap for FnFlow<F>
where
    F: Fn(f64, &Vector, &Vector) -> Vector + Send + Sync,
{
    fn eval(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        (self.0)(t, x, u)
    }
}

/// Guard backed by a closure.
pub struct FnGuard<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> GuardMap for FnGuard<F>
where
    F: Fn(f64, &Vector) -> Vector + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &Vector) -> Vector {
        (self.f)(t, x)
    }
}

/// Reset backed by a closure.
pub struct FnReset<F>(pub F);

impl<F> ResetMap for FnReset<F>
where
    F: Fn(f64, &Vector) -> Vector + Send + Sync,
{
    fn eval(&self, t: f64, x: &Vector) -> Vector {
        (self.0)(t, x)
    }
}

/// `x⁺ = x⁻`.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityReset;

impl ResetMap for IdentityReset {
    fn eval(&self, _t: f64, x: &Vector) -> Vector {
        x.clone()
    }

    fn jacobians(&self, _t: f64, x: &Vector) -> Option<(Matrix, Vector)> {
        Some((Matrix::identity(x.len(), x.len()), Vector::zeros(x.len())))
    }
}

/// A registered switch between two modes.
#[derive(Clone)]
pub struct Transition {
    pub from: ModeId,
    pub to: ModeId,
    pub guard: Arc<dyn GuardMap>,
    pub reset: Arc<dyn ResetMap>,
    /// Variance of each guard component, `C_g^(i) ≥ 0`.
    pub guard_covariance: Vec<f64>,
}

impl core::fmt::Debug for Transition {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Transition")
            .field("from", &self.from)
            .field("to", &self.to)
            .field("ng", &self.guard.dim())
            .field("guard_covariance", &self.guard_covariance)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

#[derive(Clone, Debug)]
pub struct FlowEval {
    pub f: Vector,
    pub a: Matrix,
    pub b: Matrix,
}

/// One discretized flow step evaluated at zero noise.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub x_next: Vector,
    pub a: Matrix,
    pub b: Matrix,
    pub gamma: Matrix,
}

#[derive(Clone, Debug)]
pub struct ResetEval {
    pub x_plus: Vector,
    pub dx: Matrix,
    pub dt: Vector,
}

#[derive(Clone, Debug)]
pub struct GuardEval {
    pub g: Vector,
    pub dx: Matrix,
    pub dt: Vector,
}

/// Immutable hybrid system definition.
#[derive(Clone)]
pub struct HybridModel {
    name: String,
    nx: usize,
    nu: usize,
    nw: usize,
    flows: Vec<Arc<dyn FlowMap>>,
    transitions: Vec<Transition>,
    flow_noise_input: Matrix,
    flow_noise: Matrix,
    jump_noise_input: Matrix,
    jump_noise: Matrix,
    integrator: Integrator,
    state_names: Vec<String>,
    input_names: Vec<String>,
}

impl core::fmt::Debug for HybridModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("HybridModel")
            .field("name", &self.name)
            .field("nx", &self.nx)
            .field("nu", &self.nu)
            .field("nw", &self.nw)
            .field("modes", &self.flows.len())
            .field("transitions", &self.transitions)
            .field("integrator", &self.integrator)
            .finish()
    }
}

pub struct HybridModelBuilder {
    name: String,
    nx: usize,
    nu: usize,
    flows: Vec<Arc<dyn FlowMap>>,
    transitions: Vec<Transition>,
    flow_noise: Option<(Matrix, Matrix)>,
    jump_noise: Option<(Matrix, Matrix)>,
    integrator: Integrator,
    state_names: Option<Vec<String>>,
    input_names: Option<Vec<String>>,
}

impl HybridModelBuilder {
    /// Adds a mode; modes are numbered in insertion order.
    pub fn flow(mut self, flow: Arc<dyn FlowMap>) -> Self {
        self.flows.push(flow);
        self
    }

    pub fn transition(
        mut self,
        from: ModeId,
        to: ModeId,
        guard: Arc<dyn GuardMap>,
        reset: Arc<dyn ResetMap>,
        guard_covariance: Vec<f64>,
    ) -> Self {
        self.transitions.push(Transition {
            from,
            to,
            guard,
            reset,
            guard_covariance,
        });
        self
    }

    /// Noise input `Γ_i` and covariance `W_i` on flow steps.
    pub fn flow_noise(mut self, gamma: Matrix, w: Matrix) -> Self {
        self.flow_noise = Some((gamma, w));
        self
    }

    /// Noise input `Γ_j` and covariance `W_j` on jumps (dynamics-only baseline).
    pub fn jump_noise(mut self, gamma: Matrix, w: Matrix) -> Self {
        self.jump_noise = Some((gamma, w));
        self
    }

    pub fn integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn state_names<I: IntoIterator<Item = S>, S: Into<String>>(mut self, names: I) -> Self {
        self.state_names = Some(names.into_iter().map(Into::into).collect());
        self
    }

    pub fn input_names<I: IntoIterator<Item = S>, S: Into<String>>(mut self, names: I) -> Self {
        self.input_names = Some(names.into_iter().map(Into::into).collect());
        self
    }

    pub fn build(self) -> Result<HybridModel> {
        let nx = self.nx;
        if self.flows.is_empty() {
            return Err(Error::Model("model has no modes".to_string()));
        }
        let (flow_noise_input, flow_noise) = self
            .flow_noise
            .unwrap_or_else(|| (Matrix::zeros(nx, 1), Matrix::zeros(1, 1)));
        let nw = flow_noise_input.ncols();
        let (jump_noise_input, jump_noise) = self
            .jump_noise
            .unwrap_or_else(|| (flow_noise_input.clone(), Matrix::zeros(nw, nw)));
        for (what, gamma, w) in [
            ("flow", &flow_noise_input, &flow_noise),
            ("jump", &jump_noise_input, &jump_noise),
        ] {
            let n = gamma.ncols();
            if gamma.nrows() != nx || w.nrows() != n || w.ncols() != n {
                return Err(Error::Model(format!(
                    "{what} noise must be Γ: {nx}×{n}, W: {n}×{n}"
                )));
            }
            validate_noise(w)?;
        }
        for (k, tr) in self.transitions.iter().enumerate() {
            if tr.from.0 >= self.flows.len() || tr.to.0 >= self.flows.len() {
                return Err(Error::Model(format!("transition {k} references an unknown mode")));
            }
            let ng = tr.guard.dim();
            if ng == 0 {
                return Err(Error::Model(format!("transition {k} has an empty guard")));
            }
            if tr.guard_covariance.len() != ng {
                return Err(Error::Model(format!(
                    "transition {k}: {} guard variances for {ng} components",
                    tr.guard_covariance.len()
                )));
            }
            if tr.guard_covariance.iter().any(|c| !(*c >= 0.0)) {
                return Err(Error::Model(format!("transition {k}: negative guard variance")));
            }
        }
        let state_names = self
            .state_names
            .unwrap_or_else(|| (0..nx).map(|i| format!("x{i}")).collect());
        let input_names = self
            .input_names
            .unwrap_or_else(|| (0..self.nu).map(|i| format!("u{i}")).collect());
        if state_names.len() != nx || input_names.len() != self.nu {
            return Err(Error::Model("state/input name count mismatch".to_string()));
        }
        Ok(HybridModel {
            name: self.name,
            nx,
            nu: self.nu,
            nw,
            flows: self.flows,
            transitions: self.transitions,
            flow_noise_input,
            flow_noise,
            jump_noise_input,
            jump_noise,
            integrator: self.integrator,
            state_names,
            input_names,
        })
    }
}

fn validate_noise(w: &Matrix) -> Result<()> {
    let scale = 1.0 + w.abs().max();
    if linalg::asymmetry(w) > 1e-12 * scale {
        return Err(Error::Model("noise covariance is not symmetric".to_string()));
    }
    linalg::check_psd(w).map_err(|_| Error::Model("noise covariance is not PSD".to_string()))
}

impl HybridModel {
    pub fn builder(name: impl Into<String>, nx: usize, nu: usize) -> HybridModelBuilder {
        HybridModelBuilder {
            name: name.into(),
            nx,
            nu,
            flows: Vec::new(),
            transitions: Vec::new(),
            flow_noise: None,
            jump_noise: None,
            integrator: Integrator::Euler,
            state_names: None,
            input_names: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nu(&self) -> usize {
        self.nu
    }
    pub fn nw(&self) -> usize {
        self.nw
    }
    pub fn num_modes(&self) -> usize {
        self.flows.len()
    }
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }
    pub fn integrator(&self) -> Integrator {
        self.integrator
    }
    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }
    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }
    pub fn flow_noise_input(&self) -> &Matrix {
        &self.flow_noise_input
    }
    pub fn flow_noise(&self) -> &Matrix {
        &self.flow_noise
    }
    pub fn jump_noise_input(&self) -> &Matrix {
        &self.jump_noise_input
    }
    pub fn jump_noise(&self) -> &Matrix {
        &self.jump_noise
    }

    pub fn transition(&self, id: TransitionId) -> Result<&Transition> {
        self.transitions
            .get(id.0)
            .ok_or(Error::UnknownTransition(id.0))
    }

    /// Transitions leaving `mode`.
    pub fn transitions_from(&self, mode: ModeId) -> impl Iterator<Item = (TransitionId, &Transition)> {
        self.transitions
            .iter()
            .enumerate()
            .filter(move |(_, tr)| tr.from == mode)
            .map(|(k, tr)| (TransitionId(k), tr))
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    /// Sets every guard component variance of every transition to `c`.
    pub fn with_guard_covariance(mut self, c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::Argument(format!("guard variance {c} must be non-negative")));
        }
        for tr in &mut self.transitions {
            tr.guard_covariance.iter_mut().for_each(|v| *v = c);
        }
        Ok(self)
    }

    pub fn with_flow_noise(mut self, w: Matrix) -> Result<Self> {
        if w.nrows() != self.nw || w.ncols() != self.nw {
            return Err(Error::Dimension {
                what: "flow noise",
                expected: self.nw,
                got: w.nrows(),
            });
        }
        validate_noise(&w)?;
        self.flow_noise = w;
        Ok(self)
    }

    pub fn with_jump_noise(mut self, w: Matrix) -> Result<Self> {
        if w.nrows() != self.jump_noise_input.ncols() || w.ncols() != w.nrows() {
            return Err(Error::Dimension {
                what: "jump noise",
                expected: self.jump_noise_input.ncols(),
                got: w.nrows(),
            });
        }
        validate_noise(&w)?;
        self.jump_noise = w;
        Ok(self)
    }

    /// Replaces the guard and reset maps of a transition, keeping its modes
    /// and guard variances.
    pub fn with_transition_maps(
        mut self,
        id: TransitionId,
        guard: Arc<dyn GuardMap>,
        reset: Arc<dyn ResetMap>,
    ) -> Result<Self> {
        let tr = self
            .transitions
            .get_mut(id.0)
            .ok_or(Error::UnknownTransition(id.0))?;
        if guard.dim() != tr.guard_covariance.len() {
            return Err(Error::Model("replacement guard changes the guard dimension".to_string()));
        }
        tr.guard = guard;
        tr.reset = reset;
        Ok(self)
    }

    fn flow_map(&self, mode: ModeId) -> Result<&Arc<dyn FlowMap>> {
        self.flows.get(mode.0).ok_or(Error::UnknownMode(mode.0))
    }

    fn check_dims(&self, x: &Vector, u: Option<&Vector>) -> Result<()> {
        if x.len() != self.nx {
            return Err(Error::Dimension {
                what: "state",
                expected: self.nx,
                got: x.len(),
            });
        }
        if let Some(u) = u {
            if u.len() != self.nu {
                return Err(Error::Dimension {
                    what: "input",
                    expected: self.nu,
                    got: u.len(),
                });
            }
        }
        Ok(())
    }

    /// `f_m(t, x, u)` without derivatives.
    pub fn flow_value(&self, mode: ModeId, t: f64, x: &Vector, u: &Vector) -> Result<Vector> {
        let flow = self.flow_map(mode)?;
        self.check_dims(x, Some(u))?;
        let f = flow.eval(t, x, u);
        if f.len() != self.nx {
            return Err(Error::Dimension {
                what: "flow output",
                expected: self.nx,
                got: f.len(),
            });
        }
        if !linalg::all_finite(&f) {
            return Err(Error::Evaluation("flow map"));
        }
        Ok(f)
    }

    /// `f_m(t, x, u)` with its state and input jacobians.
    pub fn evaluate_flow(&self, mode: ModeId, t: f64, x: &Vector, u: &Vector) -> Result<FlowEval> {
        let f = self.flow_value(mode, t, x, u)?;
        let flow = self.flow_map(mode)?;
        let (a, b) = match flow.jacobians(t, x, u) {
            Some(jac) => jac,
            None => (
                linalg::fd_jacobian(|xp| flow.eval(t, xp, u), x),
                if self.nu == 0 {
                    Matrix::zeros(self.nx, 0)
                } else {
                    linalg::fd_jacobian(|up| flow.eval(t, x, up), u)
                },
            ),
        };
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("flow jacobian"));
        }
        Ok(FlowEval { f, a, b })
    }

    /// Next state of one discretized step at zero noise, without derivatives.
    pub fn step_value(&self, mode: ModeId, t: f64, x: &Vector, u: &Vector, dt: f64) -> Result<Vector> {
        check_dt(dt)?;
        match self.integrator {
            Integrator::Euler => Ok(x + self.flow_value(mode, t, x, u)? * dt),
            Integrator::Rk4 => {
                let h = dt;
                let k1 = self.flow_value(mode, t, x, u)?;
                let k2 = self.flow_value(mode, t + 0.5 * h, &(x + &k1 * (0.5 * h)), u)?;
                let k3 = self.flow_value(mode, t + 0.5 * h, &(x + &k2 * (0.5 * h)), u)?;
                let k4 = self.flow_value(mode, t + h, &(x + &k3 * h), u)?;
                Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
            }
        }
    }

    /// One discretized step `x_next = F(t, x, u, 0)` with `A = ∂F/∂x`,
    /// `B = ∂F/∂u` and the configured noise input `Γ`.
    pub fn discretize_flow(
        &self,
        mode: ModeId,
        t: f64,
        x: &Vector,
        u: &Vector,
        dt: f64,
    ) -> Result<Discretization> {
        check_dt(dt)?;
        let nx = self.nx;
        let (x_next, a, b) = match self.integrator {
            Integrator::Euler => {
                let FlowEval { f, a, b } = self.evaluate_flow(mode, t, x, u)?;
                let mut a_d = a * dt;
                for i in 0..nx {
                    a_d[(i, i)] += 1.0;
                }
                (x + f * dt, a_d, b * dt)
            }
            Integrator::Rk4 => {
                // Chain rule through the four stages.
                let h = dt;
                let eye = Matrix::identity(nx, nx);
                let s1 = self.evaluate_flow(mode, t, x, u)?;
                let x2 = x + &s1.f * (0.5 * h);
                let s2 = self.evaluate_flow(mode, t + 0.5 * h, &x2, u)?;
                let x3 = x + &s2.f * (0.5 * h);
                let s3 = self.evaluate_flow(mode, t + 0.5 * h, &x3, u)?;
                let x4 = x + &s3.f * h;
                let s4 = self.evaluate_flow(mode, t + h, &x4, u)?;

                let dk1x = s1.a.clone();
                let dk1u = s1.b.clone();
                let dk2x = &s2.a * (&eye + &dk1x * (0.5 * h));
                let dk2u = &s2.a * &dk1u * (0.5 * h) + &s2.b;
                let dk3x = &s3.a * (&eye + &dk2x * (0.5 * h));
                let dk3u = &s3.a * &dk2u * (0.5 * h) + &s3.b;
                let dk4x = &s4.a * (&eye + &dk3x * h);
                let dk4u = &s4.a * &dk3u * h + &s4.b;

                let x_next = x + (s1.f + s2.f * 2.0 + s3.f * 2.0 + s4.f) * (h / 6.0);
                let a = eye + (dk1x + dk2x * 2.0 + dk3x * 2.0 + dk4x) * (h / 6.0);
                let b = (dk1u + dk2u * 2.0 + dk3u * 2.0 + dk4u) * (h / 6.0);
                (x_next, a, b)
            }
        };
        Ok(Discretization {
            x_next,
            a,
            b,
            gamma: self.flow_noise_input.clone(),
        })
    }

    pub fn evaluate_reset(&self, id: TransitionId, t: f64, x: &Vector) -> Result<ResetEval> {
        let tr = self.transition(id)?;
        self.check_dims(x, None)?;
        let reset = &tr.reset;
        let x_plus = reset.eval(t, x);
        if x_plus.len() != self.nx {
            return Err(Error::Dimension {
                what: "reset output",
                expected: self.nx,
                got: x_plus.len(),
            });
        }
        if !linalg::all_finite(&x_plus) {
            return Err(Error::Evaluation("reset map"));
        }
        let (dx, dt) = match reset.jacobians(t, x) {
            Some(jac) => jac,
            None => (
                linalg::fd_jacobian(|xp| reset.eval(t, xp), x),
                linalg::fd_derivative(|tp| reset.eval(tp, x), t),
            ),
        };
        if dx.iter().chain(dt.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("reset jacobian"));
        }
        Ok(ResetEval { x_plus, dx, dt })
    }

    /// Guard values without derivatives.
    pub fn guard_value(&self, id: TransitionId, t: f64, x: &Vector) -> Result<Vector> {
        let tr = self.transition(id)?;
        self.check_dims(x, None)?;
        let g = tr.guard.eval(t, x);
        if g.len() != tr.guard.dim() {
            return Err(Error::Dimension {
                what: "guard output",
                expected: tr.guard.dim(),
                got: g.len(),
            });
        }
        if !linalg::all_finite(&g) {
            return Err(Error::Evaluation("guard map"));
        }
        Ok(g)
    }

    pub fn evaluate_guard(&self, id: TransitionId, t: f64, x: &Vector) -> Result<GuardEval> {
        let g = self.guard_value(id, t, x)?;
        let guard = &self.transition(id)?.guard;
        let (dx, dt) = match guard.jacobians(t, x) {
            Some(jac) => jac,
            None => (
                linalg::fd_jacobian(|xp| guard.eval(t, xp), x),
                linalg::fd_derivative(|tp| guard.eval(tp, x), t),
            ),
        };
        if dx.iter().chain(dt.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("guard jacobian"));
        }
        Ok(GuardEval { g, dx, dt })
    }

    /// Zero input of the right dimension.
    pub fn zero_input(&self) -> Vector {
        Vector::zeros(self.nu)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("time step {dt} must be positive")))
    }
}

/// Selection matrix injecting `nw` noise channels into consecutive states
/// starting at `offset`.
pub fn selection_input(nx: usize, offset: usize, nw: usize) -> Matrix {
    let mut gamma = Matrix::zeros(nx, nw);
    for k in 0..nw {
        gamma[(offset + k, k)] = 1.0;
    }
    gamma
}

/// `σ·I` of size `n`.
pub fn scaled_identity(n: usize, sigma: f64) -> Matrix {
    Matrix::identity(n, n) * sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pendulum() -> HybridModel {
        let flow = FnFlow(|_t: f64, x: &Vector, u: &Vector| {
            Vector::from_vec(vec![x[1], -libm::sin(x[0]) + u[0] * libm::cos(x[0])])
        });
        HybridModel::builder("pendulum", 2, 1)
            .flow(Arc::new(flow))
            .transition(
                ModeId(0),
                ModeId(0),
                Arc::new(FnGuard {
                    dim: 1,
                    f: |t: f64, x: &Vector| Vector::from_vec(vec![x[0] - 0.1 * t]),
                }),
                Arc::new(IdentityReset),
                vec![1e-3],
            )
            .build()
            .unwrap()
    }

    #[test]
    fn unknown_mode_and_transition_are_model_errors() {
        let m = pendulum();
        let x = Vector::zeros(2);
        let u = Vector::zeros(1);
        assert_eq!(
            m.evaluate_flow(ModeId(3), 0.0, &x, &u).unwrap_err(),
            Error::UnknownMode(3)
        );
        assert_eq!(
            m.evaluate_guard(TransitionId(5), 0.0, &x).unwrap_err(),
            Error::UnknownTransition(5)
        );
        assert_eq!(
            m.evaluate_reset(TransitionId(1), 0.0, &x).unwrap_err(),
            Error::UnknownTransition(1)
        );
    }

    #[test]
    fn non_finite_flow_is_evaluation_error() {
        let m = HybridModel::builder("bad", 1, 0)
            .flow(Arc::new(FnFlow(|_t: f64, x: &Vector, _u: &Vector| {
                Vector::from_element(1, 1.0 / x[0])
            })))
            .build()
            .unwrap();
        let err = m
            .evaluate_flow(ModeId(0), 0.0, &Vector::zeros(1), &Vector::zeros(0))
            .unwrap_err();
        assert_eq!(err, Error::Evaluation("flow map"));
    }

    #[test]
    fn non_positive_dt_is_rejected() {
        let m = pendulum();
        let x = Vector::zeros(2);
        let u = Vector::zeros(1);
        assert!(matches!(
            m.discretize_flow(ModeId(0), 0.0, &x, &u, 0.0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            m.discretize_flow(ModeId(0), 0.0, &x, &u, -0.1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn fd_guard_time_derivative() {
        let m = pendulum();
        let ev = m
            .evaluate_guard(TransitionId(0), 2.0, &Vector::from_vec(vec![0.3, 0.0]))
            .unwrap();
        assert!((ev.dt[0] + 0.1).abs() < 1e-8);
        assert!((ev.dx[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rk4_jacobians_match_finite_differences_of_the_step() {
        let m = pendulum().with_integrator(Integrator::Rk4);
        let x = Vector::from_vec(vec![0.4, -0.3]);
        let u = Vector::from_vec(vec![0.7]);
        let dt = 0.05;
        let d = m.discretize_flow(ModeId(0), 0.0, &x, &u, dt).unwrap();
        let a_fd = linalg::fd_jacobian(|xp| m.step_value(ModeId(0), 0.0, xp, &u, dt).unwrap(), &x);
        let b_fd = linalg::fd_jacobian(|up| m.step_value(ModeId(0), 0.0, &x, up, dt).unwrap(), &u);
        assert!((d.a - a_fd).abs().max() < 1e-8);
        assert!((d.b - b_fd).abs().max() < 1e-8);
        let x_next = m.step_value(ModeId(0), 0.0, &x, &u, dt).unwrap();
        assert_eq!(d.x_next, x_next);
    }

    #[test]
    fn builder_rejects_bad_guard_variance() {
        let r = HybridModel::builder("m", 1, 0)
            .flow(Arc::new(FnFlow(|_t: f64, x: &Vector, _u: &Vector| x.clone())))
            .transition(
                ModeId(0),
                ModeId(0),
                Arc::new(FnGuard {
                    dim: 1,
                    f: |_t: f64, x: &Vector| x.clone(),
                }),
                Arc::new(IdentityReset),
                vec![-1.0],
            )
            .build();
        assert!(matches!(r, Err(Error::Model(_))));
    }

    #[test]
    fn builder_rejects_asymmetric_noise() {
        let r = HybridModel::builder("m", 2, 0)
            .flow(Arc::new(FnFlow(|_t: f64, x: &Vector, _u: &Vector| x.clone())))
            .flow_noise(
                Matrix::identity(2, 2),
                Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            )
            .build();
        assert!(matches!(r, Err(Error::Model(_))));
    }
}
