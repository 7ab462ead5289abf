//! Receding-horizon controller with one Newton iteration per sample.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::covariance::{CovarianceOptions, JumpMethod};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, Matrix, Vector};
use crate::model::{ModeId, TransitionId};
use crate::ocp::{
    evaluate, shift_aligned, solve, step, KktResiduals, OcpProblem, SolverOptions, SolverState,
    Uncertainty,
};
use crate::schedule::NodeKind;

/// Controller families compared in closed loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// Saltation covariance with the posterior update.
    GsSmpc,
    /// Covariance with additive jump noise only.
    Smpc,
    /// Fixed margins per constraint.
    Hmpc,
    /// No tightening.
    Mpc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::GsSmpc, Variant::Smpc, Variant::Hmpc, Variant::Mpc];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::GsSmpc => "gs-smpc",
            Variant::Smpc => "smpc",
            Variant::Hmpc => "hmpc",
            Variant::Mpc => "mpc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.label() == s)
    }
}

#[derive(Clone, Debug)]
pub struct MpcConfig {
    pub variant: Variant,
    /// Sample period and node spacing.
    pub dt: f64,
    pub horizon: f64,
    /// Options of the per-sample iteration.
    pub solver: SolverOptions,
    /// Iteration budget of the first (cold) solve.
    pub init_iterations: usize,
    pub covariance: CovarianceOptions,
    /// Fixed backoffs for [`Variant::Hmpc`].
    pub margins: BTreeMap<String, f64>,
    /// Initial covariance; zero when `None`.
    pub p0: Option<Matrix>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            variant: Variant::GsSmpc,
            dt: 0.02,
            horizon: 0.8,
            solver: SolverOptions::real_time(),
            init_iterations: 100,
            covariance: CovarianceOptions::default(),
            margins: BTreeMap::new(),
            p0: None,
        }
    }
}

impl MpcConfig {
    /// Backoff source implied by the variant.
    pub fn uncertainty(&self, nx: usize) -> Uncertainty {
        let p0 = self.p0.clone().unwrap_or_else(|| Matrix::zeros(nx, nx));
        let with = |method| {
            let mut options = self.covariance.clone();
            options.jump_method = method;
            Uncertainty::Covariance {
                options,
                p0: p0.clone(),
            }
        };
        match self.variant {
            Variant::GsSmpc => with(JumpMethod::SaltationPosterior),
            Variant::Smpc => with(JumpMethod::DynamicsOnly),
            Variant::Hmpc => Uncertainty::Margins(self.margins.clone()),
            Variant::Mpc => Uncertainty::Nominal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon >= self.dt) {
            return Err(Error::Argument(alloc::format!(
                "dt {} and horizon {} must satisfy 0 < dt ≤ horizon",
                self.dt,
                self.horizon
            )));
        }
        if self.init_iterations == 0 || self.solver.max_iterations == 0 {
            return Err(Error::Argument("iteration budgets must be positive".into()));
        }
        if self.margins.values().any(|m| !(*m >= 0.0)) {
            return Err(Error::Argument("margins must be non-negative".into()));
        }
        Ok(())
    }
}

/// Problem source for the controller.
pub trait MpcTask {
    /// Optimal control problem for a sample at `t` with the plant at `x`
    /// in `mode`.
    fn build(&mut self, t: f64, x: &Vector, mode: ModeId) -> Result<OcpProblem>;

    /// Called once per realized plant event.
    fn on_event(&mut self, _t: f64, _transition: TransitionId, _x: &Vector) {}

    /// Names of the constraints monitored on the plant.
    fn monitored_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// Values `h ≥ 0` of the monitored constraints; `+∞` for rows not in
    /// force in `mode`.
    fn monitored(&self, _t: f64, _x: &Vector, _mode: ModeId) -> Vec<f64> {
        Vec::new()
    }

    /// `false` once the plant state counts as a fall.
    fn healthy(&self, _x: &Vector, _mode: ModeId) -> bool {
        true
    }
}

/// Local feedback law handed to the plant for one sample.
#[derive(Clone, Debug)]
pub struct MpcOutput {
    pub t0: f64,
    pub t1: f64,
    pub u0: Vector,
    pub k0: Matrix,
    pub x0_ref: Vector,
    pub x1_ref: Vector,
    pub kkt: KktResiduals,
    pub alpha_primal: f64,
    pub max_backoff: f64,
    pub failed: bool,
    /// First planned event after `t0`.
    pub planned_event: Option<(f64, TransitionId)>,
}

impl MpcOutput {
    /// `u = ū₀ + K₀ (x − x̄(t))` with `x̄` linear between the first two nodes.
    pub fn input(&self, t: f64, x: &Vector) -> Vector {
        let w = if self.t1 > self.t0 {
            ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let x_ref = &self.x0_ref * (1.0 - w) + &self.x1_ref * w;
        &self.u0 + &self.k0 * (x - x_ref)
    }

    fn replay(prev: &MpcOutput, t: f64, x: &Vector, kkt: KktResiduals) -> Self {
        Self {
            t0: t,
            t1: t,
            u0: prev.u0.clone(),
            k0: Matrix::zeros(prev.k0.nrows(), prev.k0.ncols()),
            x0_ref: x.clone(),
            x1_ref: x.clone(),
            kkt,
            alpha_primal: 0.0,
            max_backoff: 0.0,
            failed: true,
            planned_event: prev.planned_event,
        }
    }
}

pub struct MpcController<T: MpcTask> {
    pub task: T,
    pub config: MpcConfig,
    warm: Option<SolverState>,
    problem: Option<OcpProblem>,
    last: Option<MpcOutput>,
    consecutive_failures: usize,
    pub max_consecutive_failures: usize,
    pub failures: usize,
    pub samples: usize,
}

fn first_jump(times: &[f64], kinds: &[NodeKind], of: Option<TransitionId>) -> Option<(f64, TransitionId)> {
    times.iter().zip(kinds).find_map(|(t, k)| match k {
        NodeKind::Jump(tr) if of.is_none_or(|o| o == *tr) => Some((*t, *tr)),
        _ => None,
    })
}

impl<T: MpcTask> MpcController<T> {
    pub fn new(task: T, config: MpcConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            task,
            config,
            warm: None,
            problem: None,
            last: None,
            consecutive_failures: 0,
            max_consecutive_failures: 0,
            failures: 0,
            samples: 0,
        })
    }

    /// Latest iterate, if any.
    pub fn iterate(&self) -> Option<&SolverState> {
        self.warm.as_ref()
    }

    /// Problem the latest iterate belongs to.
    pub fn last_problem(&self) -> Option<&OcpProblem> {
        self.problem.as_ref()
    }

    /// Drops the warm start so the next sample solves from scratch.
    pub fn reset(&mut self) {
        self.warm = None;
        self.problem = None;
        self.last = None;
        self.consecutive_failures = 0;
    }

    /// One controller sample: rebuild, shift, iterate once.
    ///
    /// A failed iteration replays the previous input without feedback and
    /// keeps the previous iterate.
    pub fn step(&mut self, t: f64, x: &Vector, mode: ModeId) -> Result<MpcOutput> {
        self.samples += 1;
        let problem = self.task.build(t, x, mode)?;
        let attempt = self.iterate_once(&problem);
        match attempt {
            Ok((state, kkt, alpha, max_backoff)) if state_ok(&state) => {
                let out = MpcOutput {
                    t0: state.times[0],
                    t1: state.times[1],
                    u0: state.us[0].clone(),
                    k0: state.gains[0].clone(),
                    x0_ref: state.xs[0].clone(),
                    x1_ref: state.xs[1].clone(),
                    kkt,
                    alpha_primal: alpha,
                    max_backoff,
                    failed: false,
                    planned_event: first_jump(&state.times, &state.kinds, None),
                };
                self.warm = Some(state);
                self.problem = Some(problem);
                self.consecutive_failures = 0;
                self.last = Some(out.clone());
                Ok(out)
            }
            other => {
                self.failures += 1;
                self.consecutive_failures += 1;
                self.max_consecutive_failures = self.max_consecutive_failures.max(self.consecutive_failures);
                let kkt = match &other {
                    Ok((_, k, _, _)) => *k,
                    Err(_) => KktResiduals::default(),
                };
                match &self.last {
                    Some(prev) => Ok(MpcOutput::replay(prev, t, x, kkt)),
                    None => Err(match other {
                        Err(e) => e,
                        Ok(_) => Error::Internal("first solve produced a non-finite iterate".into()),
                    }),
                }
            }
        }
    }

    fn iterate_once(&self, problem: &OcpProblem) -> Result<(SolverState, KktResiduals, f64, f64)> {
        let uncertainty = self.config.uncertainty(problem.model.nx());
        match &self.warm {
            None => {
                let mut options = self.config.solver.clone();
                options.max_iterations = self.config.init_iterations;
                options.line_search = true;
                let start = SolverState::from_reference(problem, &options);
                let out = solve(problem, &uncertainty, &options, Some(start))?;
                let alpha = out.log.last().map_or(0.0, |l| l.alpha_primal);
                let beta = out.log.last().map_or(0.0, |l| l.max_backoff);
                Ok((out.state, out.kkt, alpha, beta))
            }
            Some(old) => {
                let offset = match first_jump(problem.schedule.times(), problem.schedule.kinds(), None) {
                    Some((t_new, tr)) => first_jump(&old.times, &old.kinds, Some(tr))
                        .map_or(0.0, |(t_old, _)| t_new - t_old),
                    None => 0.0,
                };
                let options = &self.config.solver;
                let mut state = shift_aligned(old, problem, options, offset);
                let mut kkt = KktResiduals::default();
                let mut alpha = 0.0;
                let mut beta = 0.0;
                for _ in 0..options.max_iterations {
                    let eval = evaluate(problem, &uncertainty, options, &mut state)?;
                    kkt = eval.kkt;
                    beta = eval.max_backoff;
                    let log = step(problem, options, &mut state, &eval)?;
                    if !log.accepted {
                        return Err(Error::Internal("step rejected".into()));
                    }
                    alpha = log.alpha_primal;
                }
                Ok((state, kkt, alpha, beta))
            }
        }
    }
}

fn state_ok(s: &SolverState) -> bool {
    s.xs.len() >= 2
        && s.xs.iter().all(all_finite)
        && s.us.iter().all(all_finite)
        && s.gains[0].iter().all(|v| v.is_finite())
        && s.kinds[0].is_flow()
}
