//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

pub mod lq;
pub mod salt;

use contact_smpc_core::linalg::{Matrix, Vector};
use contact_smpc_core::model::{HybridModel, ModeId, TransitionId};

pub const FD_STEP: f64 = 1e-6;
const H: f64 = 1e-4;

fn rk4(model: &HybridModel, mode: ModeId, u: &Vector, x: &Vector, h: f64) -> Vector {
    let f = |x: &Vector| model.flow_value(mode, 0.0, x, u).unwrap();
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (0.5 * h)));
    let k3 = f(&(x + &k2 * (0.5 * h)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Pure flow over `duration` (negative integrates backwards).
pub fn flow(model: &HybridModel, mode: ModeId, u: &Vector, x: &Vector, duration: f64) -> Vector {
    let n = (duration.abs() / H).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    (0..n).fold(x.clone(), |x, _| rk4(model, mode, u, &x, h))
}

fn guard(model: &HybridModel, tr: TransitionId, x: &Vector) -> f64 {
    model.guard_value(tr, 0.0, x).unwrap()[0]
}

/// Flow in the source mode until `g(x) = delta`, reset, flow in the target
/// mode for the rest of `total`.
pub fn composition(model: &HybridModel, tr: TransitionId, u: &Vector, x0: &Vector, delta: f64, total: f64) -> Vector {
    let t = model.transition(tr).unwrap();
    let (from, to) = (t.from, t.to);
    let mut x = x0.clone();
    let mut elapsed = 0.0;
    loop {
        let next = rk4(model, from, u, &x, H);
        if guard(model, tr, &next) - delta <= 0.0 {
            let (mut lo, mut hi) = (0.0, H);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if guard(model, tr, &rk4(model, from, u, &x, mid)) - delta > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let tau = 0.5 * (lo + hi);
            let x_ev = rk4(model, from, u, &x, tau);
            let x_plus = model.evaluate_reset(tr, 0.0, &x_ev).unwrap().x_plus;
            return flow(model, to, u, &x_plus, total - elapsed - tau);
        }
        x = next;
        elapsed += H;
        assert!(elapsed < total, "no event within the window");
    }
}

fn central<F: Fn(f64) -> Vector>(f: F) -> Vector {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

fn jacobian<F: Fn(&Vector) -> Vector>(f: F, x: &Vector) -> Matrix {
    let n = x.len();
    let cols: Vec<Vector> = (0..n)
        .map(|j| {
            central(|e| {
                let mut xp = x.clone();
                xp[j] += e;
                f(&xp)
            })
        })
        .collect();
    Matrix::from_columns(&cols)
}

/// Finite-difference saltation matrices at the event state `x_event` of
/// `tr`: the flow–reset–flow composition over a window of `h` before and
/// after the event, with the pure-flow sensitivities divided out.
pub fn fd_saltation(model: &HybridModel, tr: TransitionId, u: &Vector, x_event: &Vector, h: f64) -> (Matrix, Vector) {
    let t = model.transition(tr).unwrap();
    let (from, to) = (t.from, t.to);
    let x0 = flow(model, from, u, x_event, -h);
    let x_plus = model.evaluate_reset(tr, 0.0, x_event).unwrap().x_plus;
    let d_x = jacobian(|x| composition(model, tr, u, x, 0.0, 2.0 * h), &x0);
    let d_g = central(|d| composition(model, tr, u, &x0, d, 2.0 * h));
    let s_minus = jacobian(|x| flow(model, from, u, x, h), &x0);
    let s_plus = jacobian(|x| flow(model, to, u, x, h), &x_plus);
    let s_plus_inv = s_plus.try_inverse().unwrap();
    let s_minus_inv = s_minus.try_inverse().unwrap();
    (&s_plus_inv * d_x * s_minus_inv, s_plus_inv * d_g)
}

/// `‖a − b‖ / max(‖b‖, 1)` in the Frobenius norm.
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Quantile of the standard normal by bisection on `½ erfc(−x/√2)`.
pub fn normal_quantile_bisection(p: f64) -> f64 {
    let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Random covariance-propagation instance drawn from `next` (values in
/// `[-1, 1]`).
pub struct CovInstance {
    pub p: Matrix,
    pub a: Matrix,
    pub b: Matrix,
    pub k: Matrix,
    pub gamma: Matrix,
    pub w: Matrix,
    pub lin: contact_smpc_core::saltation::EventLinearization,
    pub c_g: Vec<f64>,
}

pub fn cov_instance(nx: usize, nu: usize, ng: usize, next: &mut impl FnMut() -> f64) -> CovInstance {
    let mut mat = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| next());
    let l = mat(nx, nx);
    let p = &l * l.transpose();
    let a = mat(nx, nx);
    let b = mat(nx, nu);
    let k = mat(nu, nx);
    let gamma = mat(nx, 2);
    let lw = mat(2, 2);
    let w = &lw * lw.transpose();
    let dr_dx = mat(nx, nx) + Matrix::identity(nx, nx);
    let dg_dx = mat(ng, nx);
    let f_plus = mat(nx, 1).column(0).into_owned();
    let c_raw = mat(ng, 1);
    // f⁻ chosen so every component crosses with rate ≤ −0.2
    let g = dg_dx.clone();
    let target = Vector::from_fn(ng, |i, _| -0.2 - c_raw[(i, 0)].abs());
    let f_minus = g.transpose() * (&g * g.transpose()).try_inverse().unwrap() * target;
    let lin = contact_smpc_core::saltation::EventLinearization {
        t_minus: 0.0,
        t_plus: 0.0,
        x_minus: Vector::zeros(nx),
        x_plus: Vector::zeros(nx),
        f_minus,
        f_plus,
        dr_dx,
        dr_dt: Vector::zeros(nx),
        dg_dx,
        dg_dt: Vector::zeros(ng),
    };
    let c_g = (0..ng).map(|i| 1e-3 * (1.0 + c_raw[(i, 0)])).collect();
    CovInstance { p, a, b, k, gamma, w, lin, c_g }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(m: &Matrix) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Largest `|m − mᵀ|` entry.
pub fn asym(m: &Matrix) -> f64 {
    (m - m.transpose()).abs().max()
}

/// Uniform values in `[-1, 1)` from a xorshift stream.
pub fn xorshift(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed;
    move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

/// Single-guard jump covariance `Ξ_x P Ξ_xᵀ + C_g Ξ_g Ξ_gᵀ` written out
/// from the event linearization, symmetrized by averaging.
pub fn single_guard_jump(inst: &CovInstance) -> Matrix {
    let lin = &inst.lin;
    let nx = inst.p.nrows();
    let den = lin.dg_dt[0] + (lin.dg_dx.row(0) * &lin.f_minus)[0];
    let jump = &lin.f_plus - &lin.dr_dx * &lin.f_minus - &lin.dr_dt;
    let xi_x = &lin.dr_dx + (&jump / den) * lin.dg_dx.row(0);
    let xi_g = -&jump / den;
    let mut single = Matrix::zeros(nx, nx);
    single += &xi_x * &inst.p * xi_x.transpose();
    single += &xi_g * xi_g.transpose() * inst.c_g[0];
    for i in 0..nx {
        for j in (i + 1)..nx {
            let v = 0.5 * (single[(i, j)] + single[(j, i)]);
            single[(i, j)] = v;
            single[(j, i)] = v;
        }
    }
    single
}

pub fn bits(m: &Matrix) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}

/// Solves the walking problem with all noise, `C_g` and `P₀` zero under
/// every jump method and compares against the nominal solve; returns the
/// first difference found.
pub fn zero_uncertainty_mismatch() -> Option<String> {
    use contact_smpc_core::covariance::{CovarianceOptions, JumpMethod};
    use contact_smpc_core::ocp::{solve, SolverOptions, SolverState, Uncertainty};
    use contact_smpc_core::scenario::{BipedWalk, WalkParams};

    let p = WalkParams {
        guard_variance: 0.0,
        flow_noise: 0.0,
        jump_noise: 0.0,
        ..WalkParams::default()
    };
    let mut task = BipedWalk::new(p.clone(), 0.025, 0.7).unwrap();
    let problem = task.problem(0.0, &p.initial_state(), p.initial_mode()).unwrap();
    let nx = problem.model.nx();
    let opts = SolverOptions {
        max_iterations: 15,
        ..SolverOptions::default()
    };
    let start = || Some(SolverState::from_reference(&problem, &opts));
    let nominal = solve(&problem, &Uncertainty::Nominal, &opts, start()).unwrap();
    for method in JumpMethod::ALL {
        let unc = Uncertainty::Covariance {
            options: CovarianceOptions {
                jump_method: method,
                ..CovarianceOptions::default()
            },
            p0: Matrix::zeros(nx, nx),
        };
        let stoch = solve(&problem, &unc, &opts, start()).unwrap();
        if stoch.log.len() != nominal.log.len() {
            return Some(format!("{method:?}: iteration count differs"));
        }
        if stoch.trajectory.xs != nominal.trajectory.xs || stoch.trajectory.us != nominal.trajectory.us {
            return Some(format!("{method:?}: primal iterates differ"));
        }
        if stoch.trajectory.backoffs.iter().any(|b| b.iter().any(|v| *v != 0.0)) {
            return Some(format!("{method:?}: nonzero backoff"));
        }
    }
    None
}

/// Worst values seen over random flow, prior and posterior propagations.
#[derive(Debug, Default)]
pub struct CovStats {
    pub instances: usize,
    pub max_asym: f64,
    pub min_eig: f64,
    pub trace_increases: usize,
}

pub fn cov_invariants(instances: usize, seed: u64) -> CovStats {
    use contact_smpc_core::covariance::{posterior_update, propagate_flow, propagate_jump_apriori};
    use contact_smpc_core::saltation::{saltation, EPS_TRANSVERSAL};

    let mut next = xorshift(seed);
    let mut stats = CovStats {
        instances,
        min_eig: f64::INFINITY,
        ..CovStats::default()
    };
    for i in 0..instances {
        let nx = 2 + i % 5;
        let nu = 1 + i % 2;
        let ng = (1 + i % 3).min(nx);
        let inst = cov_instance(nx, nu, ng, &mut next);
        let flowed = propagate_flow(&inst.p, &inst.a, &inst.b, &inst.k, &inst.gamma, &inst.w).unwrap();
        let salt = saltation(&inst.lin, EPS_TRANSVERSAL);
        let prior = propagate_jump_apriori(&flowed, &salt, &inst.c_g).unwrap();
        let (_, post) = posterior_update(&prior, &inst.lin.dg_dx, &inst.c_g).unwrap();
        for m in [&flowed, &prior, &post] {
            stats.max_asym = stats.max_asym.max(asym(m));
            stats.min_eig = stats.min_eig.min(min_eig(m));
        }
        if post.trace() > prior.trace() * (1.0 + 1e-12) {
            stats.trace_increases += 1;
        }
    }
    stats
}
