//! Continuous-time plant with event detection, driven by the controller.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Matrix, Vector};
use crate::model::{HybridModel, ModeId, TransitionId};

use super::controller::{MpcController, MpcOutput, MpcTask};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantConfig {
    /// RK4 substeps per controller sample.
    pub substeps: usize,
    /// Added to each guard component per transition: positive values make
    /// the realized event happen later than the model predicts.
    pub guard_offsets: Vec<Vec<f64>>,
    /// Draw flow noise with the model's `W` per controller sample.
    pub noise: bool,
    /// Width of the bracketing interval at which event bisection stops.
    pub event_tolerance: f64,
    /// Time after an event during which no further event may fire.
    pub min_dwell: f64,
    /// Tolerance on monitored constraint values.
    pub violation_tolerance: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            substeps: 4,
            guard_offsets: Vec::new(),
            noise: true,
            event_tolerance: 1e-8,
            min_dwell: 0.01,
            violation_tolerance: 1e-3,
        }
    }
}

pub struct Plant {
    model: HybridModel,
    config: PlantConfig,
    rng: ChaCha8Rng,
    noise_factor: Matrix,
}

/// `L` with `L Lᵀ = W` for a PSD `W`.
fn psd_factor(w: &Matrix) -> Matrix {
    let eig = w.clone().symmetric_eigen();
    let mut l = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = libm::sqrt(lambda.max(0.0));
        for i in 0..l.nrows() {
            l[(i, j)] *= s;
        }
    }
    l
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub t: f64,
    /// On the sample grid (as opposed to triggered by an event).
    pub regular: bool,
    pub mode: ModeId,
    pub x: Vector,
    pub u: Vector,
    pub monitored: Vec<f64>,
    pub solver_failed: bool,
    pub kkt: f64,
    pub alpha: f64,
    pub max_backoff: f64,
    pub planned_event: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealizedEvent {
    pub time: f64,
    pub transition: TransitionId,
    /// Time the controller had planned for its first event at the last sample.
    pub planned_time: Option<f64>,
    /// Guard value (with offsets) at the located event.
    pub guard_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A monitored constraint fell below `−violation_tolerance`.
    Violation,
    /// Non-finite or unhealthy plant state.
    Fall,
    /// Two consecutive failed controller samples.
    SolverFailure,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Violation => "violation",
            Outcome::Fall => "fall",
            Outcome::SolverFailure => "solver-failure",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutRecord {
    pub monitored_names: Vec<String>,
    pub steps: Vec<RolloutStep>,
    pub events: Vec<RealizedEvent>,
    pub outcome: Outcome,
    /// Largest `−h` over monitored rows and samples (≤ 0 when never violated).
    pub max_violation: f64,
    pub solver_failures: usize,
}

impl RolloutRecord {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// Samples on the regular grid.
    pub fn regular_steps(&self) -> impl Iterator<Item = &RolloutStep> {
        self.steps.iter().filter(|s| s.regular)
    }
}

/// Smallest offset guard component of `tr` at `x`.
fn guard_level(model: &HybridModel, config: &PlantConfig, tr: TransitionId, t: f64, x: &Vector) -> Result<f64> {
    let g = model.guard_value(tr, t, x)?;
    let offs = config.guard_offsets.get(tr.0);
    Ok(g.iter()
        .enumerate()
        .map(|(i, v)| v + offs.map_or(0.0, |o| o[i]))
        .fold(f64::INFINITY, f64::min))
}

fn add_noise(
    rng: &mut ChaCha8Rng,
    factor: &Matrix,
    model: &HybridModel,
    config: &PlantConfig,
    mut x: Vector,
    h: f64,
    dt: f64,
) -> Vector {
    if !config.noise || h <= 0.0 || factor.nrows() == 0 {
        return x;
    }
    let nw = factor.nrows();
    let z = Vector::from_fn(nw, |_, _| StandardNormal.sample(rng));
    let w = factor * z * libm::sqrt(h / dt);
    x += model.flow_noise_input() * w;
    x
}

fn rk4<F: Fn(f64, &Vector) -> Result<Vector>>(f: &F, t: f64, x: &Vector, h: f64) -> Result<Vector> {
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

impl Plant {
    pub fn new(model: HybridModel, config: PlantConfig, seed: u64) -> Result<Self> {
        if config.substeps == 0 || !(config.event_tolerance > 0.0) {
            return Err(Error::Argument("substeps and event tolerance must be positive".into()));
        }
        for (i, offs) in config.guard_offsets.iter().enumerate() {
            let tr = model.transition(TransitionId(i))?;
            if offs.len() != tr.guard_covariance.len() || offs.iter().any(|o| !o.is_finite()) {
                return Err(Error::Argument(alloc::format!(
                    "guard offsets of transition {i} must have {} finite entries",
                    tr.guard_covariance.len()
                )));
            }
        }
        let noise_factor = psd_factor(model.flow_noise());
        Ok(Self {
            model,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise_factor,
        })
    }

    pub fn model(&self) -> &HybridModel {
        &self.model
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    /// Integrates the closed loop from `t` towards `t_end` and stops at the
    /// first event. Returns the new time, state, mode and the event if one
    /// fired.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &mut self,
        out: &MpcOutput,
        t: f64,
        x: &Vector,
        mode: ModeId,
        t_end: f64,
        dt: f64,
        last_event: f64,
    ) -> Result<(f64, Vector, ModeId, Option<RealizedEvent>)> {
        let Plant {
            model,
            config,
            rng,
            noise_factor,
        } = self;
        let model = &*model;
        let guard_level = |tr: TransitionId, t: f64, x: &Vector| guard_level(model, config, tr, t, x);
        let field = |s: f64, xs: &Vector| -> Result<Vector> {
            let u = out.input(s, xs);
            model.flow_value(mode, s, xs, &u)
        };
        let h_nom = dt / config.substeps as f64;
        let outgoing: Vec<TransitionId> = model.transitions_from(mode).map(|(id, _)| id).collect();
        let mut t = t;
        let mut x = x.clone();
        while t < t_end - 1e-12 {
            let h = h_nom.min(t_end - t);
            let x_next = rk4(&field, t, &x, h)?;
            let armed = t + h - last_event >= config.min_dwell;
            let mut fired: Option<(TransitionId, f64)> = None;
            if armed {
                for &tr in &outgoing {
                    let g0 = guard_level(tr, t, &x)?;
                    let g1 = guard_level(tr, t + h, &x_next)?;
                    if g1 > 0.0 {
                        continue;
                    }
                    // already below the guard at the start: fire at once
                    let tau = if g0 <= 0.0 {
                        if t - last_event >= config.min_dwell {
                            0.0
                        } else {
                            h
                        }
                    } else {
                        let (mut lo, mut hi) = (0.0, h);
                        while hi - lo > config.event_tolerance {
                            let mid = 0.5 * (lo + hi);
                            let xm = rk4(&field, t, &x, mid)?;
                            if guard_level(tr, t + mid, &xm)? > 0.0 {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        hi
                    };
                    if fired.is_none_or(|(_, best)| tau < best) {
                        fired = Some((tr, tau));
                    }
                }
            }
            match fired {
                Some((tr, tau)) => {
                    let x_ev = if tau > 0.0 { rk4(&field, t, &x, tau)? } else { x.clone() };
                    let x_ev = add_noise(rng, noise_factor, model, config, x_ev, tau, dt);
                    let guard_value = guard_level(tr, t + tau, &x_ev)?;
                    let tr_def = model.transition(tr)?;
                    let to = tr_def.to;
                    let x_plus = model.evaluate_reset(tr, t + tau, &x_ev)?.x_plus;
                    let ev = RealizedEvent {
                        time: t + tau,
                        transition: tr,
                        planned_time: out.planned_event.map(|p| p.0),
                        guard_value,
                    };
                    return Ok((t + tau, x_plus, to, Some(ev)));
                }
                None => {
                    x = add_noise(rng, noise_factor, model, config, x_next, h, dt);
                    t += h;
                }
            }
            if !all_finite(&x) {
                break;
            }
        }
        Ok((t_end.max(t), x, mode, None))
    }
}

/// Runs the controller against the plant for `duration` seconds.
///
/// The controller is called on the sample grid `k·dt` and additionally right
/// after every realized event.
pub fn simulate_closed_loop<T: MpcTask>(
    controller: &mut MpcController<T>,
    plant: &mut Plant,
    x0: &Vector,
    mode0: ModeId,
    duration: f64,
) -> Result<RolloutRecord> {
    simulate_closed_loop_observed(controller, plant, x0, mode0, duration, |_| {})
}

/// As [`simulate_closed_loop`], calling `observe` after every controller
/// sample.
pub fn simulate_closed_loop_observed<T: MpcTask, F: FnMut(&MpcController<T>)>(
    controller: &mut MpcController<T>,
    plant: &mut Plant,
    x0: &Vector,
    mode0: ModeId,
    duration: f64,
    mut observe: F,
) -> Result<RolloutRecord> {
    let dt = controller.config.dt;
    let tol = plant.config.violation_tolerance;
    let names = controller.task.monitored_names();
    let mut steps = Vec::new();
    let mut events = Vec::new();
    let mut outcome = Outcome::Success;
    let mut max_violation = f64::NEG_INFINITY;
    let mut x = x0.clone();
    let mut mode = mode0;
    let mut t = 0.0;
    let mut k: usize = 0;
    let mut regular = true;
    let mut last_event = f64::NEG_INFINITY;
    let max_samples = 4 * (libm::ceil(duration / dt) as usize + 1) + 64;

    loop {
        if !all_finite(&x) || !controller.task.healthy(&x, mode) {
            outcome = Outcome::Fall;
            break;
        }
        let monitored = controller.task.monitored(t, &x, mode);
        for h in &monitored {
            if h.is_finite() {
                max_violation = max_violation.max(-h);
            }
        }
        if t >= duration - 1e-12 || steps.len() >= max_samples {
            steps.push(RolloutStep {
                t,
                regular,
                mode,
                x: x.clone(),
                u: Vector::zeros(0),
                monitored,
                solver_failed: false,
                kkt: 0.0,
                alpha: 0.0,
                max_backoff: 0.0,
                planned_event: None,
            });
            break;
        }
        let out = controller.step(t, &x, mode)?;
        observe(controller);
        let u = out.input(t, &x);
        steps.push(RolloutStep {
            t,
            regular,
            mode,
            x: x.clone(),
            u,
            monitored,
            solver_failed: out.failed,
            kkt: out.kkt.max(),
            alpha: out.alpha_primal,
            max_backoff: out.max_backoff,
            planned_event: out.planned_event.map(|p| p.0),
        });
        if controller.max_consecutive_failures >= 2 {
            outcome = Outcome::SolverFailure;
            break;
        }
        let t_next = ((k + 1) as f64 * dt).min(duration);
        let (t_new, x_new, mode_new, event) = plant.advance(&out, t, &x, mode, t_next, dt, last_event)?;
        t = t_new;
        x = x_new;
        mode = mode_new;
        match event {
            Some(ev) => {
                last_event = ev.time;
                controller.task.on_event(ev.time, ev.transition, &x);
                events.push(ev);
                regular = false;
                if t >= t_next - 1e-12 {
                    k += 1;
                    t = t_next;
                    regular = true;
                }
            }
            None => {
                k += 1;
                t = t_next;
                regular = true;
            }
        }
    }
    if outcome == Outcome::Success && max_violation > tol {
        outcome = Outcome::Violation;
    }
    Ok(RolloutRecord {
        monitored_names: names,
        steps,
        events,
        outcome,
        max_violation,
        solver_failures: controller.failures,
    })
}
