//! Belief covariance along flow nodes and through contact events, backoff
//! terms and the inverse normal CDF used for chance constraints.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::HybridModel;
use crate::saltation::{self, SaltationResult};
use crate::schedule::{ModeSchedule, NodeKind};

/// `(A + BK) P (A + BK)ᵀ + Γ W Γᵀ`, symmetrized.
pub fn propagate_flow(
    p: &Matrix,
    a: &Matrix,
    b: &Matrix,
    k: &Matrix,
    gamma: &Matrix,
    w: &Matrix,
) -> Result<Matrix> {
    linalg::check_psd(p)?;
    let nx = p.nrows();
    check_shape("A", a, nx, nx)?;
    check_shape("B", b, nx, k.nrows())?;
    check_shape("K", k, b.ncols(), nx)?;
    check_shape("Γ", gamma, nx, w.nrows())?;
    Ok(flow_step(p, &closed_loop(a, b, k), &linalg::sandwich(gamma, w)))
}

fn check_shape(what: &'static str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::Dimension {
            what,
            expected: rows,
            got: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::Dimension {
            what,
            expected: cols,
            got: m.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn closed_loop(a: &Matrix, b: &Matrix, k: &Matrix) -> Matrix {
    if b.ncols() == 0 {
        a.clone()
    } else {
        a + b * k
    }
}

pub(crate) fn flow_step(p: &Matrix, acl: &Matrix, noise: &Matrix) -> Matrix {
    let mut out = acl * p * acl.transpose() + noise;
    linalg::symmetrize_in_place(&mut out);
    out
}

/// `Σ_i Ξ_x⁽ⁱ⁾ P Ξ_x⁽ⁱ⁾ᵀ + Ξ_g⁽ⁱ⁾ C_g⁽ⁱ⁾ Ξ_g⁽ⁱ⁾ᵀ` over transversal components.
pub fn propagate_jump_apriori(p: &Matrix, salt: &SaltationResult, c_g: &[f64]) -> Result<Matrix> {
    if c_g.len() != salt.components.len() {
        return Err(Error::Dimension {
            what: "guard covariance",
            expected: salt.components.len(),
            got: c_g.len(),
        });
    }
    if c_g.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::Argument("guard variance must be non-negative".into()));
    }
    let nx = p.nrows();
    let mut out = Matrix::zeros(nx, nx);
    let mut any = false;
    for (comp, c) in salt.components.iter().zip(c_g) {
        let (Some(xi_x), Some(xi_g)) = (&comp.xi_x, &comp.xi_g) else {
            continue;
        };
        any = true;
        out += xi_x * p * xi_x.transpose();
        out += xi_g * xi_g.transpose() * *c;
    }
    if !any {
        return Err(Error::NoTransversalComponent);
    }
    linalg::symmetrize_in_place(&mut out);
    Ok(out)
}

/// Kalman-style contraction treating the guard as a measurement:
/// `L = P̂ Gᵀ (G P̂ Gᵀ + diag C_g)⁻¹`, `P = (I − L G) P̂ (I − L G)ᵀ + L diag C_g Lᵀ`.
pub fn posterior_update(p_hat: &Matrix, g: &Matrix, c_g: &[f64]) -> Result<(Matrix, Matrix)> {
    let nx = p_hat.nrows();
    check_shape("guard jacobian", g, c_g.len(), nx)?;
    let gp = g * p_hat;
    let mut s = &gp * g.transpose();
    for (i, c) in c_g.iter().enumerate() {
        s[(i, i)] += c;
    }
    linalg::symmetrize_in_place(&mut s);
    let s_inv = invert_innovation(&s)?;
    let l = gp.transpose() * s_inv;
    // Joseph form
    let i_lg = Matrix::identity(nx, nx) - &l * g;
    let mut p = &i_lg * p_hat * i_lg.transpose();
    for (j, c) in c_g.iter().enumerate() {
        let col = l.column(j);
        p += col * col.transpose() * *c;
    }
    linalg::symmetrize_in_place(&mut p);
    Ok((l, p))
}

fn invert_innovation(s: &Matrix) -> Result<Matrix> {
    let n = s.nrows();
    let sv = s.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond < 1e14) {
        return Err(Error::SingularInnovation(cond));
    }
    if let Some(ch) = s.clone().cholesky() {
        return Ok(ch.inverse());
    }
    s.clone()
        .lu()
        .try_inverse()
        .filter(|m| m.nrows() == n)
        .ok_or(Error::SingularInnovation(cond))
}

/// `∇xR P ∇xRᵀ + Γ_j W_j Γ_jᵀ`.
pub fn propagate_jump_baseline(
    p: &Matrix,
    dr_dx: &Matrix,
    gamma_j: &Matrix,
    w_j: &Matrix,
) -> Result<Matrix> {
    linalg::check_psd(p)?;
    let nx = p.nrows();
    check_shape("reset jacobian", dr_dx, nx, nx)?;
    check_shape("Γ_j", gamma_j, nx, w_j.nrows())?;
    let mut out = dr_dx * p * dr_dx.transpose() + gamma_j * w_j * gamma_j.transpose();
    linalg::symmetrize_in_place(&mut out);
    Ok(out)
}

/// Rule applied at jump nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum JumpMethod {
    /// Guard-saltation a priori update followed by the posterior contraction.
    #[default]
    SaltationPosterior,
    /// Guard-saltation a priori update only.
    SaltationApriori,
    /// Reset jacobian plus injected jump noise.
    DynamicsOnly,
}

impl JumpMethod {
    pub const ALL: [JumpMethod; 3] = [
        JumpMethod::SaltationPosterior,
        JumpMethod::SaltationApriori,
        JumpMethod::DynamicsOnly,
    ];

    /// One-letter label used in tables: `a`, `b`, `c`.
    pub fn label(&self) -> &'static str {
        match self {
            JumpMethod::SaltationPosterior => "a",
            JumpMethod::SaltationApriori => "b",
            JumpMethod::DynamicsOnly => "c",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == s)
    }
}

/// Optional linear measurement applied after every flow step.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMeasurement {
    pub g: Matrix,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceOptions {
    pub jump_method: JumpMethod,
    pub eps_transversal: f64,
    /// Falls back to `∇xR P ∇xRᵀ` when no guard component is transversal
    /// instead of failing.
    pub nontransversal_fallback: bool,
    pub flow_measurement: Option<FlowMeasurement>,
    /// Under-relaxation of the backoff update between iterations, in
    /// `(0, 1]`; 1 takes each new estimate as is.
    pub backoff_relaxation: f64,
}

impl Default for CovarianceOptions {
    fn default() -> Self {
        Self {
            jump_method: JumpMethod::SaltationPosterior,
            eps_transversal: saltation::EPS_TRANSVERSAL,
            nontransversal_fallback: true,
            flow_measurement: None,
            backoff_relaxation: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct JumpOutcome {
    pub p: Matrix,
    pub skipped_components: usize,
    pub fell_back: bool,
}

/// Covariance update from `P_j` to `P_{j+1}` at jump node `j`.
pub fn propagate_jump(
    p: &Matrix,
    model: &HybridModel,
    schedule: &ModeSchedule,
    xs: &[Vector],
    us: &[Vector],
    j: usize,
    options: &CovarianceOptions,
) -> Result<JumpOutcome> {
    linalg::check_psd(p)?;
    jump_unchecked(p, model, schedule, xs, us, j, options)
}

pub(crate) fn jump_unchecked(
    p: &Matrix,
    model: &HybridModel,
    schedule: &ModeSchedule,
    xs: &[Vector],
    us: &[Vector],
    j: usize,
    options: &CovarianceOptions,
) -> Result<JumpOutcome> {
    let NodeKind::Jump(tr) = schedule.kind(j) else {
        return Err(Error::Schedule(alloc::format!("node {j} is not a jump node")));
    };
    if options.jump_method == JumpMethod::DynamicsOnly {
        let reset = model.evaluate_reset(tr, schedule.time(j), &xs[j])?;
        let mut out = linalg::sandwich(&reset.dx, p)
            + linalg::sandwich(model.jump_noise_input(), model.jump_noise());
        linalg::symmetrize_in_place(&mut out);
        return Ok(JumpOutcome {
            p: out,
            ..Default::default()
        });
    }
    let lin = saltation::build_event_linearization(model, schedule, xs, us, j)?;
    let salt = saltation::saltation(&lin, options.eps_transversal);
    let skipped = salt.num_skipped();
    let c_g = &model.transition(tr)?.guard_covariance;
    let p_hat = match propagate_jump_apriori(p, &salt, c_g) {
        Ok(p_hat) => p_hat,
        Err(Error::NoTransversalComponent) if options.nontransversal_fallback => {
            return Ok(JumpOutcome {
                p: linalg::sandwich(&lin.dr_dx, p),
                skipped_components: skipped,
                fell_back: true,
            });
        }
        Err(e) => return Err(e),
    };
    let p_next = if options.jump_method == JumpMethod::SaltationPosterior {
        contract(&p_hat, &lin.dg_dx, c_g)?
    } else {
        p_hat
    };
    Ok(JumpOutcome {
        p: p_next,
        skipped_components: skipped,
        fell_back: false,
    })
}

/// Posterior update restricted to rows with a non-zero innovation variance.
pub(crate) fn contract(p_hat: &Matrix, g: &Matrix, c: &[f64]) -> Result<Matrix> {
    let keep: Vec<usize> = (0..g.nrows())
        .filter(|&i| {
            let gi = g.row(i);
            (gi * p_hat * gi.transpose())[0] + c[i] > 0.0
        })
        .collect();
    if keep.is_empty() {
        return Ok(p_hat.clone());
    }
    if keep.len() == g.nrows() {
        return Ok(posterior_update(p_hat, g, c)?.1);
    }
    let g_kept = g.select_rows(keep.iter());
    let c_kept: Vec<f64> = keep.iter().map(|&i| c[i]).collect();
    Ok(posterior_update(p_hat, &g_kept, &c_kept)?.1)
}

/// Per-node covariances of a trajectory plus event diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CovarianceTrajectory {
    pub ps: Vec<Matrix>,
    pub skipped_components: usize,
    pub fallbacks: usize,
}

/// Forward sweep from `P₀` using the supplied gains at flow nodes.
///
/// `ks[i]` is ignored at jump and terminal nodes.
pub fn propagate_trajectory(
    model: &HybridModel,
    schedule: &ModeSchedule,
    xs: &[Vector],
    us: &[Vector],
    ks: &[Matrix],
    p0: &Matrix,
    options: &CovarianceOptions,
) -> Result<CovarianceTrajectory> {
    let n = schedule.horizon_len();
    let nx = model.nx();
    if xs.len() != n + 1 || us.len() != n + 1 || ks.len() != n + 1 {
        return Err(Error::Dimension {
            what: "trajectory length",
            expected: n + 1,
            got: xs.len().min(us.len()).min(ks.len()),
        });
    }
    check_shape("P₀", p0, nx, nx)?;
    linalg::check_psd(p0)?;
    let flow_noise = linalg::sandwich(model.flow_noise_input(), model.flow_noise());
    let mut out = CovarianceTrajectory {
        ps: Vec::with_capacity(n + 1),
        ..Default::default()
    };
    out.ps.push(p0.clone());
    for i in 0..n {
        let p = &out.ps[i];
        let next = match schedule.kind(i) {
            NodeKind::Flow(mode) => {
                let d = model
                    .discretize_flow(mode, schedule.time(i), &xs[i], &us[i], schedule.dt(i))
                    .map_err(|e| e.at_node(i))?;
                let mut next = flow_step(p, &closed_loop(&d.a, &d.b, &ks[i]), &flow_noise);
                if let Some(meas) = &options.flow_measurement {
                    next = contract(&next, &meas.g, &meas.c).map_err(|e| e.at_node(i))?;
                }
                next
            }
            NodeKind::Jump(_) => {
                let j = jump_unchecked(p, model, schedule, xs, us, i, options)
                    .map_err(|e| e.at_node(i))?;
                out.skipped_components += j.skipped_components;
                out.fallbacks += usize::from(j.fell_back);
                j.p
            }
            NodeKind::Terminal => unreachable!(),
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("covariance").at_node(i + 1));
        }
        out.ps.push(next);
    }
    Ok(out)
}

/// Tightening of one constraint row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackoffSpec {
    pub gamma: f64,
    pub probability: Option<f64>,
    pub clip_max: f64,
}

impl BackoffSpec {
    pub fn robust(clip_max: f64) -> Self {
        Self {
            gamma: 1.0,
            probability: None,
            clip_max,
        }
    }

    pub fn from_probability(p: f64, clip_max: f64) -> Result<Self> {
        Ok(Self {
            gamma: gamma_from_probability(p)?,
            probability: Some(p),
            clip_max,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.clip_max >= 0.0) {
            return Err(Error::Argument("backoff gamma and clip must be non-negative".into()));
        }
        if let Some(p) = self.probability {
            let g = gamma_from_probability(p)?;
            if (g - self.gamma).abs() > 1e-6 {
                return Err(Error::Argument(alloc::format!(
                    "gamma {} inconsistent with probability {p}",
                    self.gamma
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Backoff {
    pub beta: f64,
    pub clipped: bool,
}

fn finish_backoff(gamma: f64, quad: f64, clip_max: f64) -> Backoff {
    let beta = gamma * libm::sqrt(quad.max(0.0));
    if beta > clip_max {
        Backoff {
            beta: clip_max,
            clipped: true,
        }
    } else {
        Backoff {
            beta,
            clipped: false,
        }
    }
}

/// `γ·sqrt(hᵀ P h)` with `h = ∇x h + Kᵀ ∇u h`, clipped at `clip_max`.
pub fn backoff_flow(
    p: &Matrix,
    k: &Matrix,
    grad_x: &Vector,
    grad_u: &Vector,
    gamma: f64,
    clip_max: f64,
) -> Backoff {
    let dir = if grad_u.is_empty() {
        grad_x.clone()
    } else {
        grad_x + k.transpose() * grad_u
    };
    finish_backoff(gamma, p.dot(&(&dir * dir.transpose())), clip_max)
}

/// `γ·sqrt(∇x hᵀ P ∇x h)`, clipped at `clip_max`.
pub fn backoff_jump(p: &Matrix, grad_x: &Vector, gamma: f64, clip_max: f64) -> Backoff {
    finish_backoff(gamma, (grad_x.transpose() * p * grad_x)[0], clip_max)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// `Φ⁻¹(p)` for `0.5 < p < 1` by safeguarded Newton iteration on `erfc`.
pub fn gamma_from_probability(p: f64) -> Result<f64> {
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::Argument(alloc::format!(
            "probability {p} must lie in (0.5, 1)"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    let mut x = 1.0;
    for _ in 0..200 {
        let r = normal_cdf(x) - p;
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
        let mut next = x - r / pdf;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo < 1e-15 {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
