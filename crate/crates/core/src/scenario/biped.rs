//! Walking task for the point-mass biped: alternating single support over
//! stairs with a leg-reach limit on the stance leg.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::covariance::BackoffSpec;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::builtin::{
    biped, biped_index::*, biped_mode, biped_transition, BipedParams, Terrain,
};
use crate::model::{GuardMap, HybridModel, IdentityReset, ModeId, ResetMap, TransitionId};
use crate::ocp::{ConstraintSpec, Inequality, LinearInequality, OcpProblem, QuadraticCost};
use crate::runtime::MpcTask;
use crate::schedule::{ModeSchedule, NodeKind, PlannedEvent};

/// Stance-leg reach: `front·(p_z − f_z) − (f_x − p_x) ≥ 0` and
/// `back·(p_z − f_z) − (p_x − f_x) ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachLimit {
    pub foot: usize,
    pub front: f64,
    pub back: f64,
}

impl ReachLimit {
    pub const NAME: &'static str = "reach";

    pub fn values(&self, x: &Vector) -> [f64; 2] {
        let f = FOOT[self.foot];
        let dz = x[P + 2] - x[f + 2];
        let dx = x[P] - x[f];
        [self.front * dz + dx, self.back * dz - dx]
    }
}

impl Inequality for ReachLimit {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, x: &Vector, _u: &Vector) -> Vector {
        let v = self.values(x);
        Vector::from_vec(vec![v[0], v[1]])
    }

    fn jacobians(&self, _t: f64, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
        let f = FOOT[self.foot];
        let mut hx = Matrix::zeros(2, x.len());
        hx[(0, P + 2)] = self.front;
        hx[(0, f + 2)] = -self.front;
        hx[(0, P)] = 1.0;
        hx[(0, f)] = -1.0;
        hx[(1, P + 2)] = self.back;
        hx[(1, f + 2)] = -self.back;
        hx[(1, P)] = -1.0;
        hx[(1, f)] = 1.0;
        (hx, Matrix::zeros(2, u.len()))
    }

    fn depends_on_input(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkParams {
    pub step_period: f64,
    pub speed: f64,
    /// Body height above the stance foothold.
    pub height: f64,
    /// Distance between consecutive footholds, also the stair tread.
    pub stride: f64,
    pub rise: f64,
    /// Flat footholds before the first stair.
    pub flat_steps: usize,
    pub stairs: usize,
    /// Path curvature in 1/m; footholds lie on a circular arc.
    pub curvature: f64,
    /// Apex of the swing foot above the higher of its end points.
    pub clearance: f64,
    pub reach_front: f64,
    pub reach_back: f64,
    pub probability: f64,
    /// Input weight on the horizontal swing-foot velocity.
    pub swing_rate_weight: f64,
    /// Upper bound on a single backoff.
    pub backoff_clip: f64,
    /// Terrain estimate is lowered by this much below an overdue swing foot.
    pub seek_depth: f64,
    pub guard_variance: f64,
    pub flow_noise: f64,
    pub jump_noise: f64,
    pub min_height: f64,
    pub max_height: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            step_period: 0.35,
            speed: 0.7,
            height: 0.9,
            stride: 0.245,
            rise: 0.05,
            flat_steps: 1,
            stairs: 16,
            curvature: 0.0,
            clearance: 0.1,
            reach_front: 0.12,
            reach_back: 0.4,
            probability: 0.9,
            swing_rate_weight: 2.0,
            backoff_clip: 0.05,
            seek_depth: 0.02,
            guard_variance: 1e-3,
            flow_noise: 1e-6,
            jump_noise: 1e-6,
            min_height: 0.5,
            max_height: 1.3,
        }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.step_period,
            self.height,
            self.stride,
            self.clearance,
            self.reach_front,
            self.reach_back,
            self.seek_depth,
            self.backoff_clip,
            self.swing_rate_weight,
        ];
        if !self.curvature.is_finite() || self.curvature.abs() * self.stride > 0.5 {
            return Err(Error::Argument("curvature must keep consecutive footholds within 0.5 rad".into()));
        }
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.speed >= 0.0) {
            return Err(Error::Argument("walk parameters must be positive".into()));
        }
        if !(self.probability > 0.0 && self.probability < 1.0) {
            return Err(Error::Argument("probability must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Forward position of foothold `j`; the left foot starts on foothold 0.
    pub fn foothold_x(&self, j: usize) -> f64 {
        self.foothold_xy(j)[0]
    }

    /// Horizontal position of foothold `j` at arc length `j·stride`.
    pub fn foothold_xy(&self, j: usize) -> [f64; 2] {
        let s = j as f64 * self.stride;
        let k = self.curvature;
        if k == 0.0 {
            [s, 0.0]
        } else {
            [libm::sin(k * s) / k, (1.0 - libm::cos(k * s)) / k]
        }
    }

    /// Path heading at arc length `s`.
    pub fn heading(&self, s: f64) -> f64 {
        self.curvature * s
    }

    /// Nominal terrain with one segment per foothold.
    pub fn terrain(&self) -> Terrain {
        let n = self.flat_steps + self.stairs + 4;
        let mut segments = vec![(f64::NEG_INFINITY, 0.0)];
        for j in 1..n {
            let level = j.saturating_sub(self.flat_steps).min(self.stairs);
            let start = 0.5 * (self.foothold_x(j - 1) + self.foothold_x(j));
            segments.push((start, level as f64 * self.rise));
        }
        Terrain::new(segments).expect("finite segments")
    }

    pub fn model(&self, terrain: &Terrain) -> Result<HybridModel> {
        biped(&BipedParams {
            terrain: terrain.clone(),
            guard_variance: self.guard_variance,
            flow_noise: self.flow_noise,
            jump_noise: self.jump_noise,
            ..BipedParams::default()
        })
    }

    /// Mid-stance on the left foot with the right foot at its swing apex.
    pub fn initial_state(&self) -> Vector {
        let mut x = Vector::zeros(NX);
        x[P + 2] = self.height;
        x[V] = self.speed;
        x[FOOT[1] + 2] = self.clearance;
        x
    }

    pub fn initial_mode(&self) -> ModeId {
        biped_mode::LEFT_STANCE
    }
}

fn touchdown_of(foot: usize) -> TransitionId {
    if foot == 0 {
        biped_transition::LEFT_TOUCHDOWN
    } else {
        biped_transition::RIGHT_TOUCHDOWN
    }
}

fn stance_of(mode: ModeId) -> Result<usize> {
    match mode {
        biped_mode::LEFT_STANCE => Ok(0),
        biped_mode::RIGHT_STANCE => Ok(1),
        m => Err(Error::Argument(alloc::format!("walking task has no gait phase for mode {}", m.0))),
    }
}

fn foot_point(x: &Vector, k: usize) -> [f64; 3] {
    let f = FOOT[k];
    [x[f], x[f + 1], x[f + 2]]
}

/// Planner guard `f_z − h(t)` with the terrain height scheduled per
/// planned touchdown, so the guard is smooth in the foot position.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledClearance {
    pub foot: usize,
    /// `(start_time, height)` sorted by time; the first window extends to −∞.
    pub windows: Vec<(f64, f64)>,
}

impl ScheduledClearance {
    fn height(&self, t: f64) -> f64 {
        self.windows
            .iter()
            .rev()
            .find(|(start, _)| *start <= t)
            .or(self.windows.first())
            .map_or(0.0, |w| w.1)
    }
}

impl GuardMap for ScheduledClearance {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, t: f64, x: &Vector) -> Vector {
        Vector::from_element(1, x[FOOT[self.foot] + 2] - self.height(t))
    }

    fn jacobians(&self, _t: f64, x: &Vector) -> Option<(Matrix, Vector)> {
        let mut dx = Matrix::zeros(1, x.len());
        dx[(0, FOOT[self.foot] + 2)] = 1.0;
        Some((dx, Vector::zeros(1)))
    }
}

/// Walking controller task with terrain learning at touchdown.
#[derive(Clone, Debug)]
pub struct BipedWalk {
    pub params: WalkParams,
    pub dt: f64,
    pub horizon: f64,
    pub estimate: Terrain,
    model: HybridModel,
    last_event: f64,
    next_foothold: usize,
    /// Where the current swing foot left the ground.
    lift_point: [f64; 3],
}

impl BipedWalk {
    pub fn new(params: WalkParams, dt: f64, horizon: f64) -> Result<Self> {
        params.validate()?;
        let estimate = params.terrain();
        let model = params.model(&estimate)?;
        let lift_point = [-params.stride, 0.0, 0.0];
        Ok(Self {
            last_event: -0.5 * params.step_period,
            next_foothold: 1,
            lift_point,
            estimate,
            model,
            params,
            dt,
            horizon,
        })
    }

    pub fn model(&self) -> &HybridModel {
        &self.model
    }

    fn foothold(&self, j: usize) -> [f64; 3] {
        let [x, y] = self.params.foothold_xy(j);
        [x, y, self.estimate.height_at(x)]
    }

    /// Planner model whose touchdown guards use the target foothold
    /// heights of the planned events.
    fn planner_model(&self, times: &[f64], first_swing: usize) -> Result<HybridModel> {
        let half = 0.5 * self.params.step_period;
        let mut windows: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
        for (s, &t) in times.iter().enumerate() {
            let foot = if s % 2 == 0 { first_swing } else { 1 - first_swing };
            let h = self.foothold(self.next_foothold + s)[2];
            windows[foot].push((t - half, h));
        }
        let reset: Arc<dyn ResetMap> = Arc::new(IdentityReset);
        let mut model = self.model.clone();
        for (foot, w) in windows.into_iter().enumerate() {
            let w = if w.is_empty() { vec![(f64::NEG_INFINITY, 0.0)] } else { w };
            let guard = Arc::new(ScheduledClearance { foot, windows: w });
            model = model.with_transition_maps(touchdown_of(foot), guard, reset.clone())?;
        }
        Ok(model)
    }

    /// Planned touchdown times inside the horizon, starting with the
    /// current swing foot. Lowers the estimated height of the target
    /// foothold while the swing foot is overdue.
    fn plan_events(&mut self, t: f64, x: &Vector, swing: usize) -> Vec<f64> {
        let period = self.params.step_period;
        let lead = 0.1 * self.dt;
        let mut t_ev = self.last_event + period;
        if t_ev < t - 1e-6 {
            // overdue: keep reaching down for the ground
            t_ev = t + self.dt;
            let fz = x[FOOT[swing] + 2];
            let target = self.params.foothold_x(self.next_foothold);
            if fz - self.estimate.height_at(target) < self.params.seek_depth {
                self.estimate = self.estimate.with_height_at(target, fz - self.params.seek_depth);
            }
        } else if t_ev < t + lead {
            t_ev = t + lead;
        }
        let mut out = Vec::new();
        while t_ev < t + self.horizon + period {
            out.push(t_ev);
            t_ev += period;
        }
        out
    }

    pub fn problem(&mut self, t: f64, x: &Vector, mode: ModeId) -> Result<OcpProblem> {
        let stance = stance_of(mode)?;
        let swing = 1 - stance;
        let times = self.plan_events(t, x, swing);
        let model = self.planner_model(&times, swing)?;
        let events: Vec<PlannedEvent> = times
            .iter()
            .enumerate()
            .map(|(s, &time)| PlannedEvent {
                time,
                transition: touchdown_of(if s % 2 == 0 { swing } else { stance }),
            })
            .collect();
        let schedule = ModeSchedule::from_events(&model, t, self.dt, self.horizon, mode, &events)?;
        let mut problem = OcpProblem::new(model, schedule, x.clone());
        let p = &self.params;
        let backoff = BackoffSpec::from_probability(p.probability, p.backoff_clip)?;
        let n = problem.num_nodes();
        let mut segment = 0;
        for i in 0..n {
            let kind = problem.schedule.kind(i);
            let tau = problem.schedule.time(i);
            if i > 0 && problem.schedule.kind(i - 1).is_jump() {
                segment += 1;
            }
            let (stance_k, swing_k) = if segment % 2 == 0 { (stance, swing) } else { (swing, stance) };
            let stance_pt = if segment == 0 {
                foot_point(x, stance)
            } else {
                self.foothold(self.next_foothold + segment - 1)
            };
            let lift_pt = match segment {
                0 => self.lift_point,
                1 => foot_point(x, stance),
                s => self.foothold(self.next_foothold + s - 2),
            };
            let target = self.foothold(self.next_foothold + segment);
            let t_lift = if segment == 0 { self.last_event } else { times[segment - 1] };
            let t_td = times.get(segment).copied().unwrap_or(t_lift + p.step_period);
            let sigma = ((tau - t_lift) / (t_td - t_lift)).clamp(0.0, 1.0);

            let mut x_ref = Vector::zeros(NX);
            let mut q = Vector::zeros(NX);
            let heading = p.heading(p.stride * ((self.next_foothold + segment) as f64 - 0.5));
            x_ref[P + 1] = 0.5 * (stance_pt[1] + target[1]);
            x_ref[P + 2] = 0.5 * (stance_pt[2] + target[2]) + p.height;
            x_ref[V] = p.speed * libm::cos(heading);
            x_ref[V + 1] = p.speed * libm::sin(heading);
            q[P + 1] = 10.0;
            q[P + 2] = 50.0;
            q[V] = 10.0;
            q[V + 1] = 5.0;
            q[V + 2] = 5.0;
            let sw = FOOT[swing_k];
            let apex = p.clearance + 0.5 * (target[2] - lift_pt[2]).abs();
            x_ref[sw] = lift_pt[0] + sigma * (target[0] - lift_pt[0]);
            x_ref[sw + 1] = lift_pt[1] + sigma * (target[1] - lift_pt[1]);
            x_ref[sw + 2] = lift_pt[2] + sigma * (target[2] - lift_pt[2]) + 4.0 * apex * sigma * (1.0 - sigma);
            q[sw] = 50.0;
            q[sw + 1] = 50.0;
            q[sw + 2] = 200.0;
            let st = FOOT[stance_k];
            for a in 0..3 {
                x_ref[st + a] = stance_pt[a];
            }
            let q = Matrix::from_diagonal(&q);

            problem.costs[i] = match kind {
                NodeKind::Flow(_) => {
                    let mut u_ref = Vector::zeros(NU);
                    u_ref[LAMBDA[stance_k]] = p.gravity_over_height();
                    let mut r = Vector::from_element(NU, 1e-2);
                    r[LAMBDA[0]] = 1e-3;
                    r[LAMBDA[1]] = 1e-3;
                    r[W[swing_k]] = p.swing_rate_weight;
                    r[W[swing_k] + 1] = p.swing_rate_weight;
                    QuadraticCost::new(q, x_ref, Matrix::from_diagonal(&r), u_ref)
                }
                _ => QuadraticCost::state_only(q, x_ref),
            };
            if kind.is_flow() {
                let lam = LinearInequality::input_bound("force", NU, LAMBDA[stance_k], 0.0, 1.0);
                problem.constraints[i].push(ConstraintSpec::hard(Arc::new(lam)));
            }
            if i > 0 && !kind.is_jump() {
                let reach = ReachLimit {
                    foot: stance_k,
                    front: p.reach_front,
                    back: p.reach_back,
                };
                problem.constraints[i].push(ConstraintSpec::soft(Arc::new(reach)).tightened(backoff));
            }
        }
        Ok(problem)
    }
}

impl WalkParams {
    fn gravity_over_height(&self) -> f64 {
        9.81 / self.height
    }
}

impl MpcTask for BipedWalk {
    fn build(&mut self, t: f64, x: &Vector, mode: ModeId) -> Result<OcpProblem> {
        self.problem(t, x, mode)
    }

    fn on_event(&mut self, t: f64, transition: TransitionId, x: &Vector) {
        let landed = if transition == biped_transition::RIGHT_TOUCHDOWN { 1 } else { 0 };
        self.last_event = t;
        self.lift_point = foot_point(x, 1 - landed);
        let [fx, _, fz] = foot_point(x, landed);
        self.estimate = self.estimate.with_height_at(fx, fz);
        self.next_foothold += 1;
    }

    fn monitored_names(&self) -> Vec<String> {
        vec![String::from("reach_front"), String::from("reach_back")]
    }

    fn monitored(&self, _t: f64, x: &Vector, mode: ModeId) -> Vec<f64> {
        match stance_of(mode) {
            Ok(k) => ReachLimit {
                foot: k,
                front: self.params.reach_front,
                back: self.params.reach_back,
            }
            .values(x)
            .to_vec(),
            Err(_) => vec![f64::INFINITY; 2],
        }
    }

    fn healthy(&self, x: &Vector, mode: ModeId) -> bool {
        let Ok(k) = stance_of(mode) else {
            return false;
        };
        let h = x[P + 2] - x[FOOT[k] + 2];
        h >= self.params.min_height && h <= self.params.max_height
    }
}
