//! Desk-scale benchmark systems selectable by name.

use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;
use alloc::{format, vec};

use super::{
    scaled_identity, selection_input, FlowMap, GuardMap, HybridModel, IdentityReset, ModeId,
    ResetMap, TransitionId,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const BOUNCING_MASS: &str = "bouncing-mass";
pub const PLANAR_BIPED: &str = "planar-biped";
pub const DOUBLE_INTEGRATOR: &str = "double-integrator";

pub const NAMES: [&str; 3] = [BOUNCING_MASS, PLANAR_BIPED, DOUBLE_INTEGRATOR];

/// Looks up a built-in model with default parameters.
pub fn by_name(name: &str) -> Result<HybridModel> {
    match name {
        BOUNCING_MASS => bouncing_mass(&BouncingMassParams::default()),
        PLANAR_BIPED => biped(&BipedParams::default()),
        DOUBLE_INTEGRATOR => double_integrator(&DoubleIntegratorParams::default()),
        other => Err(Error::Model(format!("unknown built-in model '{other}'"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BouncingMassParams {
    pub gravity: f64,
    pub restitution: f64,
    pub guard_variance: f64,
    pub noise: f64,
}

impl Default for BouncingMassParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            restitution: 0.5,
            guard_variance: 1e-3,
            noise: 0.0,
        }
    }
}

struct FreeFall {
    gravity: f64,
}

impl FlowMap for FreeFall {
    fn eval(&self, _t: f64, x: &Vector, _u: &Vector) -> Vector {
        Vector::from_vec(vec![x[1], -self.gravity])
    }

    fn jacobians(&self, _t: f64, _x: &Vector, _u: &Vector) -> Option<(Matrix, Matrix)> {
        Some((
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            Matrix::zeros(2, 0),
        ))
    }
}

/// Height above a flat floor at zero.
struct Height;

impl GuardMap for Height {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: f64, x: &Vector) -> Vector {
        Vector::from_element(1, x[0])
    }

    fn jacobians(&self, _t: f64, x: &Vector) -> Option<(Matrix, Vector)> {
        let mut dx = Matrix::zeros(1, x.len());
        dx[(0, 0)] = 1.0;
        Some((dx, Vector::zeros(1)))
    }
}

struct Restitution {
    e: f64,
}

impl ResetMap for Restitution {
    fn eval(&self, _t: f64, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[0], -self.e * x[1]])
    }

    fn jacobians(&self, _t: f64, _x: &Vector) -> Option<(Matrix, Vector)> {
        Some((
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -self.e]),
            Vector::zeros(2),
        ))
    }
}

/// State `(z, v)`, no input, one mode with a self-transition at `z = 0`.
pub fn bouncing_mass(p: &BouncingMassParams) -> Result<HybridModel> {
    HybridModel::builder(BOUNCING_MASS, 2, 0)
        .flow(Arc::new(FreeFall { gravity: p.gravity }))
        .transition(
            ModeId(0),
            ModeId(0),
            Arc::new(Height),
            Arc::new(Restitution { e: p.restitution }),
            vec![p.guard_variance],
        )
        .flow_noise(selection_input(2, 1, 1), scaled_identity(1, p.noise))
        .jump_noise(selection_input(2, 1, 1), scaled_identity(1, p.noise))
        .state_names(["z", "v"])
        .build()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoubleIntegratorParams {
    /// Velocity at which the synthetic guard fires.
    pub switch_velocity: f64,
    pub guard_variance: f64,
    pub noise: f64,
}

impl Default for DoubleIntegratorParams {
    fn default() -> Self {
        Self {
            switch_velocity: 1.0,
            guard_variance: 1e-3,
            noise: 1e-6,
        }
    }
}

struct DoubleIntegratorFlow;

impl FlowMap for DoubleIntegratorFlow {
    fn eval(&self, _t: f64, x: &Vector, u: &Vector) -> Vector {
        Vector::from_vec(vec![x[1], u[0]])
    }

    fn jacobians(&self, _t: f64, _x: &Vector, _u: &Vector) -> Option<(Matrix, Matrix)> {
        Some((
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
        ))
    }
}

/// `g = v_switch − v`.
struct VelocityThreshold {
    v: f64,
}

impl GuardMap for VelocityThreshold {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: f64, x: &Vector) -> Vector {
        Vector::from_element(1, self.v - x[1])
    }

    fn jacobians(&self, _t: f64, _x: &Vector) -> Option<(Matrix, Vector)> {
        Some((Matrix::from_row_slice(1, 2, &[0.0, -1.0]), Vector::zeros(1)))
    }
}

/// State `(position, velocity)`, input acceleration, a synthetic
/// identity-reset transition when the velocity reaches a threshold.
pub fn double_integrator(p: &DoubleIntegratorParams) -> Result<HybridModel> {
    HybridModel::builder(DOUBLE_INTEGRATOR, 2, 1)
        .flow(Arc::new(DoubleIntegratorFlow))
        .transition(
            ModeId(0),
            ModeId(0),
            Arc::new(VelocityThreshold {
                v: p.switch_velocity,
            }),
            Arc::new(IdentityReset),
            vec![p.guard_variance],
        )
        .flow_noise(Matrix::identity(2, 2), scaled_identity(2, p.noise))
        .jump_noise(Matrix::identity(2, 2), scaled_identity(2, p.noise))
        .state_names(["position", "velocity"])
        .input_names(["acceleration"])
        .build()
}

/// Piecewise-flat ground profile along the forward axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Terrain {
    /// `(start_x, height)` sorted by `start_x`; the first segment extends to −∞.
    segments: Vec<(f64, f64)>,
}

impl Terrain {
    pub fn flat(height: f64) -> Self {
        Self {
            segments: vec![(f64::NEG_INFINITY, height)],
        }
    }

    pub fn new(mut segments: Vec<(f64, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Model("terrain needs at least one segment".to_string()));
        }
        if segments.iter().any(|(x, h)| x.is_nan() || !h.is_finite()) {
            return Err(Error::Model("terrain segments must be finite".to_string()));
        }
        segments.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { segments })
    }

    /// Equal-rise stairs: flat until `first_edge`, then `n_steps` steps of
    /// the given tread and rise.
    pub fn stairs(first_edge: f64, tread: f64, rise: f64, n_steps: usize) -> Self {
        let mut segments = vec![(f64::NEG_INFINITY, 0.0)];
        for k in 0..n_steps {
            segments.push((first_edge + k as f64 * tread, (k + 1) as f64 * rise));
        }
        Self { segments }
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn segment_index(&self, x: f64) -> usize {
        self.segments
            .iter()
            .rposition(|(start, _)| *start <= x)
            .unwrap_or(0)
    }

    pub fn height_at(&self, x: f64) -> f64 {
        self.segments[self.segment_index(x)].1
    }

    /// Copy with each segment height shifted by `offsets[k]`.
    pub fn with_offsets(&self, offsets: &[f64]) -> Result<Self> {
        if offsets.len() != self.segments.len() {
            return Err(Error::Dimension {
                what: "terrain offsets",
                expected: self.segments.len(),
                got: offsets.len(),
            });
        }
        let mut out = self.clone();
        for (seg, d) in out.segments.iter_mut().zip(offsets) {
            seg.1 += d;
        }
        Ok(out)
    }

    /// Copy with the segment containing `x` set to `height`.
    pub fn with_height_at(&self, x: f64, height: f64) -> Self {
        let mut out = self.clone();
        let k = out.segment_index(x);
        out.segments[k].1 = height;
        out
    }
}

/// State layout of the biped: body position, body velocity, left foot, right foot.
pub mod biped_index {
    pub const P: usize = 0;
    pub const V: usize = 3;
    pub const FOOT: [usize; 2] = [6, 9];
    pub const NX: usize = 12;
    /// Input layout: leg force per unit length, then foot velocities.
    pub const LAMBDA: [usize; 2] = [0, 1];
    pub const W: [usize; 2] = [2, 5];
    pub const NU: usize = 8;
}

pub mod biped_mode {
    use super::ModeId;
    pub const LEFT_STANCE: ModeId = ModeId(0);
    pub const RIGHT_STANCE: ModeId = ModeId(1);
    pub const FLIGHT: ModeId = ModeId(2);
    pub const DOUBLE_STANCE: ModeId = ModeId(3);
}

pub mod biped_transition {
    use super::TransitionId;
    /// Right touchdown with simultaneous left liftoff.
    pub const RIGHT_TOUCHDOWN: TransitionId = TransitionId(0);
    /// Left touchdown with simultaneous right liftoff.
    pub const LEFT_TOUCHDOWN: TransitionId = TransitionId(1);
    /// Both feet touch down from flight.
    pub const BOTH_TOUCHDOWN: TransitionId = TransitionId(2);
    /// Both legs reach rest length in double stance.
    pub const BOTH_LIFTOFF: TransitionId = TransitionId(3);
}

#[derive(Clone, Debug, PartialEq)]
pub struct BipedParams {
    pub gravity: f64,
    pub terrain: Terrain,
    /// Leg length at which the liftoff guard fires.
    pub rest_length: f64,
    pub guard_variance: f64,
    /// `W_i = σ·I` on the body velocity.
    pub flow_noise: f64,
    /// `W_j = σ_j·I` on body position and velocity (dynamics-only baseline).
    pub jump_noise: f64,
}

impl Default for BipedParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            terrain: Terrain::flat(0.0),
            rest_length: 1.0,
            guard_variance: 1e-3,
            flow_noise: 1e-6,
            jump_noise: 1e-6,
        }
    }
}

/// Point-mass body on two massless telescoping legs.
///
/// `v̇ = Σ_stance λ_k (p − f_k) − g e_z`; swing feet follow `ḟ_k = w_k`,
/// stance feet are fixed.
struct BipedFlow {
    stance: [bool; 2],
    gravity: f64,
}

impl FlowMap for BipedFlow {
    fn eval(&self, _t: f64, x: &Vector, u: &Vector) -> Vector {
        use biped_index::*;
        let mut f = Vector::zeros(NX);
        for a in 0..3 {
            f[P + a] = x[V + a];
        }
        f[V + 2] = -self.gravity;
        for k in 0..2 {
            if self.stance[k] {
                for a in 0..3 {
                    f[V + a] += u[LAMBDA[k]] * (x[P + a] - x[FOOT[k] + a]);
                }
            } else {
                for a in 0..3 {
                    f[FOOT[k] + a] = u[W[k] + a];
                }
            }
        }
        f
    }

    fn jacobians(&self, _t: f64, x: &Vector, u: &Vector) -> Option<(Matrix, Matrix)> {
        use biped_index::*;
        let mut a_c = Matrix::zeros(NX, NX);
        let mut b_c = Matrix::zeros(NX, NU);
        for a in 0..3 {
            a_c[(P + a, V + a)] = 1.0;
        }
        for k in 0..2 {
            if self.stance[k] {
                let lambda = u[LAMBDA[k]];
                for a in 0..3 {
                    a_c[(V + a, P + a)] += lambda;
                    a_c[(V + a, FOOT[k] + a)] = -lambda;
                    b_c[(V + a, LAMBDA[k])] = x[P + a] - x[FOOT[k] + a];
                }
            } else {
                for a in 0..3 {
                    b_c[(FOOT[k] + a, W[k] + a)] = 1.0;
                }
            }
        }
        Some((a_c, b_c))
    }
}

/// Signed height of each listed foot above the terrain below it.
pub struct FootClearance {
    pub feet: Vec<usize>,
    pub terrain: Terrain,
}

impl GuardMap for FootClearance {
    fn dim(&self) -> usize {
        self.feet.len()
    }

    fn eval(&self, _t: f64, x: &Vector) -> Vector {
        Vector::from_iterator(
            self.feet.len(),
            self.feet.iter().map(|&k| {
                let f = biped_index::FOOT[k];
                x[f + 2] - self.terrain.height_at(x[f])
            }),
        )
    }

    /// Piecewise-flat terrain has zero slope almost everywhere.
    fn jacobians(&self, _t: f64, x: &Vector) -> Option<(Matrix, Vector)> {
        let mut dx = Matrix::zeros(self.feet.len(), x.len());
        for (r, &k) in self.feet.iter().enumerate() {
            dx[(r, biped_index::FOOT[k] + 2)] = 1.0;
        }
        Some((dx, Vector::zeros(self.feet.len())))
    }
}

/// `L₀ − |p − f_k|` for each leg; fires when the leg reaches rest length.
struct LegExtension {
    rest_length: f64,
}

impl LegExtension {
    fn leg(x: &Vector, k: usize) -> [f64; 3] {
        let f = biped_index::FOOT[k];
        [x[0] - x[f], x[1] - x[f + 1], x[2] - x[f + 2]]
    }
}

impl GuardMap for LegExtension {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, x: &Vector) -> Vector {
        Vector::from_iterator(
            2,
            (0..2).map(|k| {
                let d = Self::leg(x, k);
                self.rest_length - libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            }),
        )
    }

    fn jacobians(&self, _t: f64, x: &Vector) -> Option<(Matrix, Vector)> {
        let mut dx = Matrix::zeros(2, x.len());
        for k in 0..2 {
            let d = Self::leg(x, k);
            let len = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            if len == 0.0 {
                return None;
            }
            let f = biped_index::FOOT[k];
            for a in 0..3 {
                dx[(k, a)] = -d[a] / len;
                dx[(k, f + a)] = d[a] / len;
            }
        }
        Some((dx, Vector::zeros(2)))
    }
}

fn touchdown_guard(feet: Vec<usize>, terrain: &Terrain) -> Arc<dyn GuardMap> {
    Arc::new(FootClearance {
        feet,
        terrain: terrain.clone(),
    })
}

/// Point-mass biped over piecewise-flat terrain with modes left stance,
/// right stance, flight and double stance.
pub fn biped(p: &BipedParams) -> Result<HybridModel> {
    use biped_index::*;
    use biped_mode::*;
    let flow = |stance: [bool; 2]| -> Arc<dyn FlowMap> {
        Arc::new(BipedFlow {
            stance,
            gravity: p.gravity,
        })
    };
    let reset: Arc<dyn ResetMap> = Arc::new(IdentityReset);
    let c = p.guard_variance;
    HybridModel::builder(PLANAR_BIPED, NX, NU)
        .flow(flow([true, false]))
        .flow(flow([false, true]))
        .flow(flow([false, false]))
        .flow(flow([true, true]))
        .transition(
            LEFT_STANCE,
            RIGHT_STANCE,
            touchdown_guard(vec![1], &p.terrain),
            reset.clone(),
            vec![c],
        )
        .transition(
            RIGHT_STANCE,
            LEFT_STANCE,
            touchdown_guard(vec![0], &p.terrain),
            reset.clone(),
            vec![c],
        )
        .transition(
            FLIGHT,
            DOUBLE_STANCE,
            touchdown_guard(vec![0, 1], &p.terrain),
            reset.clone(),
            vec![c, c],
        )
        .transition(
            DOUBLE_STANCE,
            FLIGHT,
            Arc::new(LegExtension {
                rest_length: p.rest_length,
            }),
            reset,
            vec![c, c],
        )
        .flow_noise(selection_input(NX, V, 3), scaled_identity(3, p.flow_noise))
        .jump_noise(selection_input(NX, P, 6), scaled_identity(6, p.jump_noise))
        .state_names([
            "px", "py", "pz", "vx", "vy", "vz", "lx", "ly", "lz", "rx", "ry", "rz",
        ])
        .input_names(["lambda_l", "lambda_r", "wlx", "wly", "wlz", "wrx", "wry", "wrz"])
        .build()
}

/// Replaces the terrain seen by every touchdown guard.
pub fn biped_with_terrain(model: HybridModel, terrain: &Terrain) -> Result<HybridModel> {
    use biped_transition::*;
    let reset: Arc<dyn ResetMap> = Arc::new(IdentityReset);
    model
        .with_transition_maps(RIGHT_TOUCHDOWN, touchdown_guard(vec![1], terrain), reset.clone())?
        .with_transition_maps(LEFT_TOUCHDOWN, touchdown_guard(vec![0], terrain), reset.clone())?
        .with_transition_maps(BOTH_TOUCHDOWN, touchdown_guard(vec![0, 1], terrain), reset)
}
