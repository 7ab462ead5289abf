//! Offline covariance forecasts compared across jump-covariance rules.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::covariance::{CovarianceOptions, JumpMethod};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::builtin::biped_index::P;
use crate::ocp::{solve, OcpProblem, SolverOptions, SolverState, Uncertainty};
use crate::scenario::{BipedWalk, HopParams, WalkParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Motion {
    /// Straight walk on flat ground.
    Forward,
    /// Walk along a circular arc on flat ground.
    Curve,
    /// Straight walk up the stairs.
    StepAscent,
    /// Forward hops with two-guard liftoff and touchdown.
    Hop,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::Forward, Motion::Curve, Motion::StepAscent, Motion::Hop];

    pub fn label(&self) -> &'static str {
        match self {
            Motion::Forward => "forward",
            Motion::Curve => "curve",
            Motion::StepAscent => "step-ascent",
            Motion::Hop => "hop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.label() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastConfig {
    pub walk: WalkParams,
    pub hop: HopParams,
    pub dt: f64,
    pub walk_horizon: f64,
    /// Path curvature of [`Motion::Curve`].
    pub curvature: f64,
    /// `C_g` values for methods (a) and (b).
    pub guard_variances: Vec<f64>,
    /// `W_j` values for method (c).
    pub jump_noises: Vec<f64>,
    /// Adds method (c) cells whose `W_j` matches the terminal trace of (a).
    pub trace_match: bool,
    pub solver: SolverOptions,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            walk: WalkParams::default(),
            hop: HopParams::default(),
            dt: 0.025,
            walk_horizon: 1.5,
            curvature: 0.8,
            guard_variances: alloc::vec![1e-4, 1e-3, 1e-2],
            jump_noises: alloc::vec![1e-5, 1e-4, 1e-3],
            trace_match: true,
            solver: SolverOptions {
                max_iterations: 200,
                ..SolverOptions::default()
            },
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        self.hop.validate()?;
        if !(self.dt > 0.0) || !(self.walk_horizon >= self.dt) {
            return Err(Error::Argument("forecast dt and horizon must be positive".into()));
        }
        if self
            .guard_variances
            .iter()
            .chain(&self.jump_noises)
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::Argument("sweep values must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Swept quantity of a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SweepParameter {
    GuardVariance(f64),
    JumpNoise(f64),
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::GuardVariance(_) => "C_g",
            SweepParameter::JumpNoise(_) => "W_j",
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            SweepParameter::GuardVariance(v) | SweepParameter::JumpNoise(v) => *v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastCell {
    pub motion: Motion,
    pub method: JumpMethod,
    pub parameter: SweepParameter,
    /// `C_g` of the (a) cell whose trace this (c) cell was matched to.
    pub matched_to: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Path heading at the terminal node.
    pub heading: f64,
    /// Terminal covariance; `None` when the solve failed.
    pub terminal: Option<Matrix>,
    pub error: Option<String>,
}

impl ForecastCell {
    pub fn trace(&self) -> Option<f64> {
        self.terminal.as_ref().map(|p| p.trace())
    }

    /// Terminal body-position variances along and across the heading.
    pub fn motion_lateral(&self) -> Option<(f64, f64)> {
        let p = self.terminal.as_ref()?;
        let (s, c) = (libm::sin(self.heading), libm::cos(self.heading));
        let pxx = p[(P, P)];
        let pyy = p[(P + 1, P + 1)];
        let pxy = p[(P, P + 1)];
        let along = c * c * pxx + 2.0 * c * s * pxy + s * s * pyy;
        let across = s * s * pxx - 2.0 * c * s * pxy + c * c * pyy;
        Some((along, across))
    }

    pub fn motion_lateral_ratio(&self) -> Option<f64> {
        self.motion_lateral().map(|(m, l)| m / l)
    }

    /// Major and minor variances of the horizontal body-position block and
    /// the angle of the major axis.
    pub fn principal_axes(&self) -> Option<(f64, f64, f64)> {
        let p = self.terminal.as_ref()?;
        let (a, b, c) = (p[(P, P)], p[(P + 1, P + 1)], p[(P, P + 1)]);
        let mean = 0.5 * (a + b);
        let r = libm::hypot(0.5 * (a - b), c);
        Some((mean + r, mean - r, 0.5 * libm::atan2(2.0 * c, a - b)))
    }
}

fn walk_params(config: &ForecastConfig, motion: Motion, guard_variance: f64, jump_noise: f64) -> WalkParams {
    let mut p = config.walk.clone();
    p.guard_variance = guard_variance;
    p.jump_noise = jump_noise;
    match motion {
        Motion::Forward => {
            p.stairs = 0;
            p.curvature = 0.0;
        }
        Motion::Curve => {
            p.stairs = 0;
            p.curvature = config.curvature;
        }
        Motion::StepAscent => p.curvature = 0.0,
        Motion::Hop => {}
    }
    p
}

/// Offline problem of `motion` with the given guard and jump noise levels,
/// and the path heading at its terminal node.
pub fn forecast_problem(config: &ForecastConfig, motion: Motion, guard_variance: f64, jump_noise: f64) -> Result<(OcpProblem, f64)> {
    match motion {
        Motion::Hop => {
            let mut hop = config.hop.clone();
            hop.guard_variance = guard_variance;
            hop.jump_noise = jump_noise;
            Ok((hop.problem(config.dt)?, 0.0))
        }
        _ => {
            let p = walk_params(config, motion, guard_variance, jump_noise);
            let heading = p.heading(p.speed * config.walk_horizon);
            let mut task = BipedWalk::new(p.clone(), config.dt, config.walk_horizon)?;
            let problem = task.problem(0.0, &p.initial_state(), p.initial_mode())?;
            Ok((problem, heading))
        }
    }
}

/// Solves one cell; failures are recorded in the cell.
pub fn forecast_cell(config: &ForecastConfig, motion: Motion, method: JumpMethod, parameter: SweepParameter) -> ForecastCell {
    let (c_g, w_j) = match parameter {
        SweepParameter::GuardVariance(v) => (v, 0.0),
        SweepParameter::JumpNoise(v) => (0.0, v),
    };
    let mut cell = ForecastCell {
        motion,
        method,
        parameter,
        matched_to: None,
        converged: false,
        iterations: 0,
        heading: 0.0,
        terminal: None,
        error: None,
    };
    let run = || -> Result<(bool, usize, Matrix, f64)> {
        let (problem, heading) = forecast_problem(config, motion, c_g, w_j)?;
        let nx = problem.model.nx();
        let uncertainty = Uncertainty::Covariance {
            options: CovarianceOptions {
                jump_method: method,
                ..CovarianceOptions::default()
            },
            p0: Matrix::zeros(nx, nx),
        };
        let start = SolverState::from_reference(&problem, &config.solver);
        let out = solve(&problem, &uncertainty, &config.solver, Some(start))?;
        let terminal = out
            .trajectory
            .covariances
            .last()
            .cloned()
            .ok_or_else(|| Error::Internal("no covariance trajectory".into()))?;
        Ok((out.converged, out.log.len(), terminal, heading))
    };
    match run() {
        Ok((converged, iterations, terminal, heading)) => {
            cell.converged = converged;
            cell.iterations = iterations;
            cell.terminal = Some(terminal);
            cell.heading = heading;
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Method (c) cell whose `W_j` reproduces `target` terminal trace, found
/// by secant steps on the solved trace.
pub fn trace_matched_cell(config: &ForecastConfig, motion: Motion, target: f64, matched_to: f64) -> ForecastCell {
    let eval = |w: f64| forecast_cell(config, motion, JumpMethod::DynamicsOnly, SweepParameter::JumpNoise(w));
    let mut lo = (0.0, eval(0.0));
    let Some(t_lo) = lo.1.trace() else {
        return tag(lo.1, matched_to);
    };
    let mut w = 1e-4;
    let mut cell = eval(w);
    for _ in 0..8 {
        let Some(t) = cell.trace() else {
            break;
        };
        if libm::fabs(t - target) <= 1e-3 * target {
            break;
        }
        let t_prev = lo.1.trace().unwrap_or(t_lo);
        let slope = (t - t_prev) / (w - lo.0);
        if !(slope > 0.0) {
            break;
        }
        let next = (w + (target - t) / slope).max(0.0);
        lo = (w, cell);
        w = next;
        cell = eval(w);
    }
    tag(cell, matched_to)
}

fn tag(mut cell: ForecastCell, matched_to: f64) -> ForecastCell {
    cell.matched_to = Some(matched_to);
    cell
}

/// Terminal covariances for every motion, method and sweep value.
///
/// Methods (a) and (b) sweep `C_g`, method (c) sweeps `W_j`; with
/// `trace_match` one more (c) cell per `C_g` matches the trace of (a).
pub fn covariance_forecast_experiment(config: &ForecastConfig, motions: &[Motion]) -> Result<Vec<ForecastCell>> {
    config.validate()?;
    let mut cells = Vec::new();
    for &motion in motions {
        for &c_g in &config.guard_variances {
            for method in [JumpMethod::SaltationPosterior, JumpMethod::SaltationApriori] {
                cells.push(forecast_cell(config, motion, method, SweepParameter::GuardVariance(c_g)));
            }
        }
        for &w in &config.jump_noises {
            cells.push(forecast_cell(config, motion, JumpMethod::DynamicsOnly, SweepParameter::JumpNoise(w)));
        }
        if config.trace_match {
            for &c_g in &config.guard_variances {
                let target = cells
                    .iter()
                    .find(|c| {
                        c.motion == motion
                            && c.method == JumpMethod::SaltationPosterior
                            && c.parameter == SweepParameter::GuardVariance(c_g)
                    })
                    .and_then(ForecastCell::trace);
                if let Some(target) = target {
                    cells.push(trace_matched_cell(config, motion, target, c_g));
                }
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motion_labels_round_trip() {
        for m in Motion::ALL {
            assert_eq!(Motion::parse(m.label()), Some(m));
        }
        assert_eq!(Motion::parse("sideways"), None);
    }

    fn cell_with(p: [[f64; 2]; 2], heading: f64) -> ForecastCell {
        let mut m = Matrix::zeros(NX_TEST, NX_TEST);
        for i in 0..2 {
            for j in 0..2 {
                m[(P + i, P + j)] = p[i][j];
            }
        }
        ForecastCell {
            motion: Motion::Curve,
            method: JumpMethod::SaltationPosterior,
            parameter: SweepParameter::GuardVariance(0.0),
            matched_to: None,
            converged: true,
            iterations: 0,
            heading,
            terminal: Some(m),
            error: None,
        }
    }

    const NX_TEST: usize = 3;

    #[test]
    fn rotated_ellipse_is_recovered_along_heading() {
        let th: f64 = 0.3;
        let (c, s) = (th.cos(), th.sin());
        let (major, minor) = (4.0, 1.0);
        let p = [
            [major * c * c + minor * s * s, (major - minor) * c * s],
            [(major - minor) * c * s, major * s * s + minor * c * c],
        ];
        let cell = cell_with(p, th);
        let (along, across) = cell.motion_lateral().unwrap();
        assert!((along - major).abs() < 1e-12 && (across - minor).abs() < 1e-12);
        let (a, b, angle) = cell.principal_axes().unwrap();
        assert!((a - major).abs() < 1e-12 && (b - minor).abs() < 1e-12 && (angle - th).abs() < 1e-12);
    }

    #[test]
    fn failed_cells_carry_the_error() {
        let mut config = ForecastConfig::default();
        config.hop.height = 2.0;
        let cell = forecast_cell(&config, Motion::Hop, JumpMethod::SaltationPosterior, SweepParameter::GuardVariance(1e-3));
        assert!(cell.terminal.is_none() && cell.error.is_some());
    }

    #[test]
    fn matched_dynamics_only_cell_reproduces_target_trace() {
        let config = ForecastConfig::default();
        let target = 1.0;
        let cell = trace_matched_cell(&config, Motion::Hop, target, 1e-3);
        assert_eq!(cell.matched_to, Some(1e-3));
        assert!((cell.trace().unwrap() - target).abs() <= 1e-3 * target, "{:?}", cell.trace());
    }
}
