//! Zero-order SQP with a primal-dual interior point treatment of hard rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::covariance::{self, backoff_flow, backoff_jump};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::schedule::NodeKind;

use super::barrier::{fraction_to_boundary, primal_dual_row, relaxed_log_barrier, slack_dual_step};
use super::problem::{OcpProblem, Softness, Uncertainty};
use super::riccati::{riccati_recursion, QuadraticSubproblem, RiccatiOptions, Stage};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BarrierSchedule {
    /// `μ` held constant.
    Fixed,
    /// `μ ← μ/10` whenever the KKT residual drops below `10 μ`.
    Monotone { mu_min: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub mu_init: f64,
    pub barrier: BarrierSchedule,
    pub soft_mu: f64,
    pub soft_delta: f64,
    pub slack_min: f64,
    pub tau: f64,
    pub line_search: bool,
    pub alpha_min: f64,
    pub riccati: RiccatiOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-6,
            mu_init: 1e-3,
            barrier: BarrierSchedule::Fixed,
            soft_mu: 1e-3,
            soft_delta: 1e-4,
            slack_min: 1e-4,
            tau: 0.995,
            line_search: true,
            alpha_min: 1e-8,
            riccati: RiccatiOptions::default(),
        }
    }
}

impl SolverOptions {
    /// One full step per call, no globalization.
    pub fn real_time() -> Self {
        Self {
            max_iterations: 1,
            line_search: false,
            ..Self::default()
        }
    }
}

/// Components of the first-order optimality residual, infinity norms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub dynamics: f64,
    pub switching: f64,
    pub inequality: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.dynamics)
            .max(self.switching)
            .max(self.inequality)
            .max(self.complementarity)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Residual at the iterate the step was taken from.
    pub kkt: KktResiduals,
    pub cost: f64,
    pub mu: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub accepted: bool,
    pub regularization: f64,
    pub skipped_components: usize,
    pub covariance_fallbacks: usize,
    pub clipped_backoffs: usize,
    pub max_backoff: f64,
}

/// Row layout of one constraint at one node, used to match iterates across
/// schedules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowBlock {
    pub name: alloc::string::String,
    pub dim: usize,
    pub hard: bool,
}

/// Primal-dual iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub times: Vec<f64>,
    pub kinds: Vec<NodeKind>,
    pub xs: Vec<Vector>,
    /// Empty at jump and terminal nodes.
    pub us: Vec<Vector>,
    /// Feedback gains of the last Newton step, `nu × nx` at flow nodes.
    pub gains: Vec<Matrix>,
    /// One entry per constraint row; unused at soft rows.
    pub slacks: Vec<Vector>,
    pub duals: Vec<Vector>,
    pub layout: Vec<Vec<RowBlock>>,
    /// Slacks and duals at node `i` still need initialization.
    pub fresh: Vec<bool>,
    pub mu: f64,
    /// Covariances and backoffs of the last evaluation.
    pub covariances: Vec<Matrix>,
    pub backoffs: Vec<Vector>,
    /// `backoffs[i]` holds a previous estimate that relaxation may start from.
    pub backoff_seeded: Vec<bool>,
    pub iterations: usize,
}

impl SolverState {
    /// Primal guess from the cost references, zero gains.
    pub fn from_reference(problem: &OcpProblem, options: &SolverOptions) -> Self {
        let n = problem.num_nodes();
        let xs = (0..n)
            .map(|i| if i == 0 { problem.x0.clone() } else { problem.costs[i].x_ref.clone() })
            .collect();
        let us = (0..n)
            .map(|i| {
                if problem.input_dim(i) > 0 {
                    problem.costs[i].u_ref.clone()
                } else {
                    Vector::zeros(0)
                }
            })
            .collect();
        Self::with_primal(problem, options, xs, us)
    }

    /// Primal guess by simulating the schedule from `x0` under the reference
    /// inputs.
    pub fn from_rollout(problem: &OcpProblem, options: &SolverOptions) -> Result<Self> {
        let mut st = Self::from_reference(problem, options);
        let sched = &problem.schedule;
        for i in 0..problem.num_nodes() - 1 {
            let next = match sched.kind(i) {
                NodeKind::Flow(mode) => problem
                    .model
                    .step_value(mode, sched.time(i), &st.xs[i], &st.us[i], sched.dt(i))?,
                NodeKind::Jump(tr) => problem.model.evaluate_reset(tr, sched.time(i), &st.xs[i])?.x_plus,
                NodeKind::Terminal => unreachable!(),
            };
            st.xs[i + 1] = next;
        }
        Ok(st)
    }

    pub fn with_primal(problem: &OcpProblem, options: &SolverOptions, xs: Vec<Vector>, us: Vec<Vector>) -> Self {
        let n = problem.num_nodes();
        let nx = problem.model.nx();
        let gains = (0..n)
            .map(|i| Matrix::zeros(problem.input_dim(i), nx))
            .collect();
        let layout = row_layout(problem);
        let rows: Vec<usize> = layout.iter().map(|b| b.iter().map(|r| r.dim).sum()).collect();
        Self {
            times: problem.schedule.times().to_vec(),
            kinds: problem.schedule.kinds().to_vec(),
            xs,
            us,
            gains,
            slacks: rows.iter().map(|&m| Vector::from_element(m, 1.0)).collect(),
            duals: rows.iter().map(|&m| Vector::from_element(m, options.mu_init)).collect(),
            layout,
            fresh: vec![true; n],
            mu: options.mu_init,
            covariances: Vec::new(),
            backoffs: rows.iter().map(|&m| Vector::zeros(m)).collect(),
            backoff_seeded: vec![false; n],
            iterations: 0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.xs.len()
    }

    /// Checks that the iterate fits `problem`.
    pub fn check(&self, problem: &OcpProblem) -> Result<()> {
        let n = problem.num_nodes();
        let nx = problem.model.nx();
        let ok = self.xs.len() == n
            && self.us.len() == n
            && self.gains.len() == n
            && self.slacks.len() == n
            && self.duals.len() == n
            && self.fresh.len() == n
            && self.backoff_seeded.len() == n
            && self.layout == row_layout(problem)
            && self.xs.iter().all(|x| x.len() == nx)
            && (0..n).all(|i| self.us[i].len() == problem.input_dim(i))
            && (0..n).all(|i| self.gains[i].nrows() == problem.input_dim(i) && self.gains[i].ncols() == nx);
        if ok {
            Ok(())
        } else {
            Err(Error::Problem("iterate does not match the problem layout".into()))
        }
    }
}

pub(crate) fn row_layout(problem: &OcpProblem) -> Vec<Vec<RowBlock>> {
    problem
        .constraints
        .iter()
        .map(|specs| {
            specs
                .iter()
                .map(|s| RowBlock {
                    name: s.constraint.name().into(),
                    dim: s.constraint.dim(),
                    hard: s.softness == Softness::Hard,
                })
                .collect()
        })
        .collect()
}

/// Solved trajectory together with its belief.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefTrajectory {
    pub times: Vec<f64>,
    pub kinds: Vec<NodeKind>,
    pub xs: Vec<Vector>,
    pub us: Vec<Vector>,
    pub gains: Vec<Matrix>,
    /// Empty unless the uncertainty source propagates covariances.
    pub covariances: Vec<Matrix>,
    pub backoffs: Vec<Vector>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutput {
    pub trajectory: BeliefTrajectory,
    pub state: SolverState,
    pub log: Vec<IterationLog>,
    pub kkt: KktResiduals,
    pub cost: f64,
    pub converged: bool,
}

/// Linearization and residuals of one iterate.
#[derive(Clone, Debug)]
pub struct Evaluation {
    nodes: Vec<NodeData>,
    pub kkt: KktResiduals,
    pub cost: f64,
    pub skipped_components: usize,
    pub covariance_fallbacks: usize,
    pub clipped_backoffs: usize,
    pub max_backoff: f64,
    /// Largest multiplier magnitude, used as exact-penalty weight.
    multiplier_norm: f64,
}

#[derive(Clone, Debug)]
struct NodeData {
    a: Matrix,
    b: Matrix,
    d: Vector,
    g: Vector,
    gx: Matrix,
    /// Tightened constraint values `h − β`.
    c: Vector,
    hx: Matrix,
    hu: Matrix,
    hard: Vec<bool>,
}

fn hard_mask(problem: &OcpProblem, i: usize) -> Vec<bool> {
    let mut out = Vec::new();
    for s in &problem.constraints[i] {
        out.extend(core::iter::repeat(s.softness == Softness::Hard).take(s.constraint.dim()));
    }
    out
}

fn constraint_values(problem: &OcpProblem, i: usize, x: &Vector, u: &Vector) -> Vector {
    let t = problem.schedule.time(i);
    let mut vals = Vec::new();
    for s in &problem.constraints[i] {
        vals.extend(s.constraint.eval(t, x, u).iter().copied());
    }
    Vector::from_vec(vals)
}

fn constraint_jacobians(problem: &OcpProblem, i: usize, x: &Vector, u: &Vector) -> (Matrix, Matrix) {
    let t = problem.schedule.time(i);
    let nx = x.len();
    let nu = u.len();
    let m: usize = problem.constraints[i].iter().map(|s| s.constraint.dim()).sum();
    let mut hx = Matrix::zeros(m, nx);
    let mut hu = Matrix::zeros(m, nu);
    let mut r = 0;
    for s in &problem.constraints[i] {
        let dim = s.constraint.dim();
        let (jx, ju) = s.constraint.jacobians(t, x, u);
        hx.rows_mut(r, dim).copy_from(&jx);
        if nu > 0 {
            hu.rows_mut(r, dim).copy_from(&ju);
        }
        r += dim;
    }
    (hx, hu)
}

/// Backoffs for every row of node `i` given its covariance.
fn node_backoffs(
    problem: &OcpProblem,
    i: usize,
    p: &Matrix,
    k: &Matrix,
    hx: &Matrix,
    hu: &Matrix,
    clipped: &mut usize,
) -> Vector {
    let m = hx.nrows();
    let mut beta = Vector::zeros(m);
    let flow = problem.schedule.kind(i).is_flow();
    let mut r = 0;
    for s in &problem.constraints[i] {
        let dim = s.constraint.dim();
        if let Some(spec) = &s.backoff {
            for row in r..r + dim {
                let gx: Vector = hx.row(row).transpose();
                let b = if flow {
                    let gu: Vector = hu.row(row).transpose();
                    backoff_flow(p, k, &gx, &gu, spec.gamma, spec.clip_max)
                } else {
                    backoff_jump(p, &gx, spec.gamma, spec.clip_max)
                };
                *clipped += usize::from(b.clipped);
                beta[row] = b.beta;
            }
        }
        r += dim;
    }
    beta
}

fn margin_backoffs(problem: &OcpProblem, i: usize, margins: &alloc::collections::BTreeMap<alloc::string::String, f64>) -> Vector {
    let mut out = Vec::new();
    for s in &problem.constraints[i] {
        let v = match (&s.backoff, margins.get(s.constraint.name())) {
            (Some(_), Some(b)) => *b,
            _ => 0.0,
        };
        out.extend(core::iter::repeat(v).take(s.constraint.dim()));
    }
    Vector::from_vec(out)
}

/// Linearizes the problem at `state`, propagates the belief and computes
/// residuals. Initializes slacks and duals where needed.
pub fn evaluate(
    problem: &OcpProblem,
    uncertainty: &Uncertainty,
    options: &SolverOptions,
    state: &mut SolverState,
) -> Result<Evaluation> {
    let model = &problem.model;
    let sched = &problem.schedule;
    let n_nodes = problem.num_nodes();
    let n = n_nodes - 1;
    let nx = model.nx();
    state.xs[0] = problem.x0.clone();

    let mut nodes = Vec::with_capacity(n_nodes);
    let mut dyn_res = 0.0f64;
    let mut sw_res = 0.0f64;
    for i in 0..n_nodes {
        let x = &state.xs[i];
        let u = &state.us[i];
        let t = sched.time(i);
        let (a, b, d, g, gx) = match sched.kind(i) {
            NodeKind::Flow(mode) => {
                let dis = model.discretize_flow(mode, t, x, u, sched.dt(i)).map_err(|e| e.at_node(i))?;
                let d = dis.x_next - &state.xs[i + 1];
                (dis.a, dis.b, d, Vector::zeros(0), Matrix::zeros(0, nx))
            }
            NodeKind::Jump(tr) => {
                let r = model.evaluate_reset(tr, t, x).map_err(|e| e.at_node(i))?;
                let gv = model.evaluate_guard(tr, t, x).map_err(|e| e.at_node(i))?;
                let d = r.x_plus - &state.xs[i + 1];
                (r.dx, Matrix::zeros(nx, 0), d, gv.g, gv.dx)
            }
            NodeKind::Terminal => (
                Matrix::zeros(nx, nx),
                Matrix::zeros(nx, 0),
                Vector::zeros(nx),
                Vector::zeros(0),
                Matrix::zeros(0, nx),
            ),
        };
        if !linalg::all_finite(&d) || !linalg::all_finite(&g) {
            return Err(Error::Evaluation("dynamics").at_node(i));
        }
        dyn_res = dyn_res.max(linalg::inf_norm(&d));
        sw_res = sw_res.max(linalg::inf_norm(&g));
        let h = constraint_values(problem, i, x, u);
        let (hx, hu) = constraint_jacobians(problem, i, x, u);
        nodes.push(NodeData {
            a,
            b,
            d,
            g,
            gx,
            c: h,
            hx,
            hu,
            hard: hard_mask(problem, i),
        });
    }

    // belief and backoffs
    let mut skipped = 0;
    let mut fallbacks = 0;
    let mut clipped = 0;
    state.covariances.clear();
    match uncertainty {
        Uncertainty::Nominal => {
            for (i, node) in nodes.iter().enumerate() {
                state.backoffs[i] = Vector::zeros(node.c.len());
            }
        }
        Uncertainty::Margins(margins) => {
            for i in 0..n_nodes {
                state.backoffs[i] = margin_backoffs(problem, i, margins);
            }
        }
        Uncertainty::Covariance { options: cov, p0 } => {
            if p0.nrows() != nx || p0.ncols() != nx {
                return Err(Error::Dimension {
                    what: "P₀",
                    expected: nx,
                    got: p0.nrows(),
                });
            }
            linalg::check_psd(p0)?;
            if !(cov.backoff_relaxation > 0.0 && cov.backoff_relaxation <= 1.0) {
                return Err(Error::Argument("backoff relaxation must lie in (0, 1]".into()));
            }
            let flow_noise = linalg::sandwich(model.flow_noise_input(), model.flow_noise());
            let mut ps = Vec::with_capacity(n_nodes);
            ps.push(p0.clone());
            for i in 0..n {
                let p = &ps[i];
                let next = match sched.kind(i) {
                    NodeKind::Flow(_) => {
                        let acl = covariance::closed_loop(&nodes[i].a, &nodes[i].b, &state.gains[i]);
                        let mut next = covariance::flow_step(p, &acl, &flow_noise);
                        if let Some(meas) = &cov.flow_measurement {
                            next = covariance::contract(&next, &meas.g, &meas.c).map_err(|e| e.at_node(i))?;
                        }
                        next
                    }
                    NodeKind::Jump(_) => {
                        let out = covariance::jump_unchecked(p, model, sched, &state.xs, &state.us, i, cov)
                            .map_err(|e| e.at_node(i))?;
                        skipped += out.skipped_components;
                        fallbacks += usize::from(out.fell_back);
                        out.p
                    }
                    NodeKind::Terminal => unreachable!(),
                };
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Evaluation("covariance").at_node(i + 1));
                }
                ps.push(next);
            }
            let theta = cov.backoff_relaxation;
            for i in 0..n_nodes {
                let fresh = node_backoffs(
                    problem,
                    i,
                    &ps[i],
                    &state.gains[i],
                    &nodes[i].hx,
                    &nodes[i].hu,
                    &mut clipped,
                );
                let prev = &state.backoffs[i];
                state.backoffs[i] = if theta < 1.0 && state.backoff_seeded[i] && prev.len() == fresh.len() {
                    prev + (fresh - prev) * theta
                } else {
                    fresh
                };
                state.backoff_seeded[i] = true;
            }
            state.covariances = ps;
        }
    }
    let mut max_backoff = 0.0f64;
    for (node, beta) in nodes.iter_mut().zip(&state.backoffs) {
        node.c -= beta;
        max_backoff = max_backoff.max(beta.amax());
    }

    // interior point initialization
    let mu = state.mu;
    for i in 0..n_nodes {
        if !state.fresh[i] {
            continue;
        }
        let node = &nodes[i];
        for r in 0..node.c.len() {
            let s = node.c[r].max(options.slack_min);
            state.slacks[i][r] = s;
            state.duals[i][r] = mu / s;
        }
        state.fresh[i] = false;
    }

    let mut cost = 0.0;
    let mut ineq = 0.0f64;
    let mut compl = 0.0f64;
    for i in 0..n_nodes {
        cost += problem.costs[i].value(&state.xs[i], &state.us[i]);
        let node = &nodes[i];
        for r in 0..node.c.len() {
            if node.hard[r] {
                let (s, z) = (state.slacks[i][r], state.duals[i][r]);
                ineq = ineq.max((node.c[r] - s).abs());
                compl = compl.max((s * z - mu).abs());
            }
        }
    }

    let (stationarity, multiplier_norm) = stationarity(problem, options, state, &nodes)?;
    let mut zmax = 0.0f64;
    for z in &state.duals {
        zmax = zmax.max(z.amax());
    }
    Ok(Evaluation {
        nodes,
        kkt: KktResiduals {
            stationarity,
            dynamics: dyn_res,
            switching: sw_res,
            inequality: ineq,
            complementarity: compl,
        },
        cost,
        skipped_components: skipped,
        covariance_fallbacks: fallbacks,
        clipped_backoffs: clipped,
        max_backoff,
        multiplier_norm: multiplier_norm.max(zmax),
    })
}

/// Lagrangian gradients `(∇x, ∇u)` of cost and inequality terms at node `i`.
fn local_gradients(
    problem: &OcpProblem,
    options: &SolverOptions,
    state: &SolverState,
    node: &NodeData,
    i: usize,
) -> (Vector, Vector) {
    let cost = &problem.costs[i];
    let x = &state.xs[i];
    let u = &state.us[i];
    let mut gx = &cost.q * (x - &cost.x_ref);
    let mut gu = if u.is_empty() {
        Vector::zeros(0)
    } else {
        &cost.r * (u - &cost.u_ref)
    };
    for r in 0..node.c.len() {
        let w = if node.hard[r] {
            -state.duals[i][r]
        } else {
            relaxed_log_barrier(node.c[r], options.soft_mu, options.soft_delta).1
        };
        if w == 0.0 {
            continue;
        }
        gx += node.hx.row(r).transpose() * w;
        if !u.is_empty() {
            gu += node.hu.row(r).transpose() * w;
        }
    }
    (gx, gu)
}

/// Input stationarity with state multipliers from the adjoint recursion and
/// switching multipliers fitted in the least-squares sense.
fn stationarity(
    problem: &OcpProblem,
    options: &SolverOptions,
    state: &SolverState,
    nodes: &[NodeData],
) -> Result<(f64, f64)> {
    let n_nodes = nodes.len();
    let n = n_nodes - 1;
    let grads: Vec<(Vector, Vector)> = (0..n_nodes)
        .map(|i| local_gradients(problem, options, state, &nodes[i], i))
        .collect();
    // row offsets of the stacked u-stationarity vector
    let mut offsets = vec![0usize; n_nodes + 1];
    for i in 0..n_nodes {
        offsets[i + 1] = offsets[i] + grads[i].1.len();
    }
    let m = offsets[n_nodes];
    if m == 0 {
        return Ok((0.0, 0.0));
    }

    let mut lam = grads[n].0.clone();
    let mut r0 = Vector::zeros(m);
    let mut lam_max = lam.amax();
    for k in (0..n).rev() {
        let node = &nodes[k];
        if node.b.ncols() > 0 {
            let r = &grads[k].1 + node.b.transpose() * &lam;
            r0.rows_mut(offsets[k], r.len()).copy_from(&r);
        }
        lam = &grads[k].0 + node.a.transpose() * &lam;
        lam_max = lam_max.max(lam.amax());
    }

    // one column per guard row
    let mut cols: Vec<Vector> = Vec::new();
    for (j, node) in nodes.iter().enumerate() {
        for row in 0..node.g.len() {
            let mut col = Vector::zeros(m);
            let mut c: Vector = node.gx.row(row).transpose();
            for k in (0..j).rev() {
                let nk = &nodes[k];
                if nk.b.ncols() > 0 {
                    let r = nk.b.transpose() * &c;
                    col.rows_mut(offsets[k], r.len()).copy_from(&r);
                }
                c = nk.a.transpose() * &c;
            }
            cols.push(col);
        }
    }
    if cols.is_empty() {
        return Ok((r0.amax(), lam_max));
    }
    let mmat = Matrix::from_columns(&cols);
    let svd = mmat.clone().svd(true, true);
    let nu = svd
        .solve(&(-&r0), 1e-12 * svd.singular_values.amax().max(1e-300))
        .map_err(|_| Error::Internal("least-squares multipliers".into()))?;
    let res = &r0 + &mmat * &nu;
    Ok((res.amax(), lam_max.max(nu.amax())))
}

fn build_subproblem(
    problem: &OcpProblem,
    options: &SolverOptions,
    state: &SolverState,
    eval: &Evaluation,
) -> QuadraticSubproblem {
    let n_nodes = eval.nodes.len();
    let nx = problem.model.nx();
    let mu = state.mu;
    let mut stages = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let node = &eval.nodes[i];
        let cost = &problem.costs[i];
        let nu = state.us[i].len();
        let x = &state.xs[i];
        let mut st = Stage::zeros(nx, nu);
        st.a = node.a.clone();
        st.b = node.b.clone();
        st.d = node.d.clone();
        st.qxx = cost.q.clone();
        st.qx = &cost.q * (x - &cost.x_ref);
        if nu > 0 {
            st.quu = cost.r.clone();
            st.qu = &cost.r * (&state.us[i] - &cost.u_ref);
        }
        for r in 0..node.c.len() {
            let (w, gw) = if node.hard[r] {
                primal_dual_row(node.c[r], state.slacks[i][r], state.duals[i][r], mu)
            } else {
                let (_, slope, curv) = relaxed_log_barrier(node.c[r], options.soft_mu, options.soft_delta);
                (curv, slope)
            };
            let hx: Vector = node.hx.row(r).transpose();
            st.qxx += &hx * hx.transpose() * w;
            st.qx += &hx * gw;
            if nu > 0 {
                let hu: Vector = node.hu.row(r).transpose();
                st.quu += &hu * hu.transpose() * w;
                st.qxu += &hx * hu.transpose() * w;
                st.qu += &hu * gw;
            }
        }
        if !node.g.is_empty() {
            st.cx = node.gx.clone();
            st.e = node.g.clone();
        }
        stages.push(st);
    }
    QuadraticSubproblem {
        stages,
        dx0: Vector::zeros(nx),
    }
}

/// Merit `cost + soft penalties − μ Σ ln s + ρ ‖infeasibility‖₁` at a trial
/// point.
#[allow(clippy::too_many_arguments)]
fn merit(
    problem: &OcpProblem,
    options: &SolverOptions,
    xs: &[Vector],
    us: &[Vector],
    slacks: &[Vector],
    backoffs: &[Vector],
    mu: f64,
    rho: f64,
) -> Result<f64> {
    let model = &problem.model;
    let sched = &problem.schedule;
    let n_nodes = xs.len();
    let mut phi = 0.0;
    let mut infeas = 0.0;
    for i in 0..n_nodes {
        let t = sched.time(i);
        phi += problem.costs[i].value(&xs[i], &us[i]);
        match sched.kind(i) {
            NodeKind::Flow(mode) => {
                let next = model.step_value(mode, t, &xs[i], &us[i], sched.dt(i))?;
                infeas += (next - &xs[i + 1]).lp_norm(1);
            }
            NodeKind::Jump(tr) => {
                let next = model.evaluate_reset(tr, t, &xs[i])?.x_plus;
                infeas += (next - &xs[i + 1]).lp_norm(1);
                infeas += model.guard_value(tr, t, &xs[i])?.lp_norm(1);
            }
            NodeKind::Terminal => {}
        }
        let c = constraint_values(problem, i, &xs[i], &us[i]) - &backoffs[i];
        let hard = hard_mask(problem, i);
        for r in 0..c.len() {
            if hard[r] {
                let s = slacks[i][r];
                phi -= mu * libm::log(s);
                infeas += (c[r] - s).abs();
            } else {
                phi += relaxed_log_barrier(c[r], options.soft_mu, options.soft_delta).0;
            }
        }
    }
    let out = phi + rho * infeas;
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::Evaluation("merit"))
    }
}

/// Newton direction of the primal-dual iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonStep {
    pub dx: Vec<Vector>,
    pub du: Vec<Vector>,
    pub ds: Vec<Vector>,
    pub dz: Vec<Vector>,
    pub gains: Vec<Matrix>,
    pub regularization: f64,
    /// Fraction-to-boundary limits for primal and dual variables.
    pub alpha_primal: f64,
    pub alpha_dual: f64,
}

/// Condenses the inequality rows, runs the Riccati recursion and recovers
/// slack and dual directions.
pub fn newton_step(
    problem: &OcpProblem,
    options: &SolverOptions,
    state: &SolverState,
    eval: &Evaluation,
) -> Result<NewtonStep> {
    let n_nodes = eval.nodes.len();
    for i in 0..n_nodes {
        for r in 0..eval.nodes[i].c.len() {
            if eval.nodes[i].hard[r] && !(state.slacks[i][r] > 0.0 && state.duals[i][r] > 0.0) {
                return Err(Error::Internal(alloc::format!(
                    "non-positive slack or dual at node {i}, row {r}"
                )));
            }
        }
    }
    let sub = build_subproblem(problem, options, state, eval);
    let sol = riccati_recursion(&sub, &options.riccati)?;
    let mu = state.mu;

    let mut ds = Vec::with_capacity(n_nodes);
    let mut dz = Vec::with_capacity(n_nodes);
    let mut alpha_p = 1.0f64;
    let mut alpha_d = 1.0f64;
    for i in 0..n_nodes {
        let node = &eval.nodes[i];
        let m = node.c.len();
        let mut dsi = Vector::zeros(m);
        let mut dzi = Vector::zeros(m);
        if m > 0 {
            let mut dc = &node.hx * &sol.dx[i];
            if node.hu.ncols() > 0 {
                dc += &node.hu * &sol.du[i];
            }
            for r in 0..m {
                if node.hard[r] {
                    let (s, z) = (state.slacks[i][r], state.duals[i][r]);
                    let (a, b) = slack_dual_step(node.c[r], s, z, mu, dc[r]);
                    dsi[r] = a;
                    dzi[r] = b;
                }
            }
            alpha_p = alpha_p.min(fraction_to_boundary(
                state.slacks[i].as_slice(),
                dsi.as_slice(),
                options.tau,
            ));
            alpha_d = alpha_d.min(fraction_to_boundary(state.duals[i].as_slice(), dzi.as_slice(), options.tau));
        }
        ds.push(dsi);
        dz.push(dzi);
    }
    Ok(NewtonStep {
        dx: sol.dx,
        du: sol.du,
        ds,
        dz,
        gains: sol.gains,
        regularization: sol.regularization,
        alpha_primal: alpha_p,
        alpha_dual: alpha_d,
    })
}

/// Takes one Newton step from the evaluated iterate.
pub fn step(
    problem: &OcpProblem,
    options: &SolverOptions,
    state: &mut SolverState,
    eval: &Evaluation,
) -> Result<IterationLog> {
    let n_nodes = eval.nodes.len();
    let mu = state.mu;
    let sol = newton_step(problem, options, state, eval)?;
    let (ds, dz) = (&sol.ds, &sol.dz);
    let mut alpha_p = sol.alpha_primal;
    let alpha_d = sol.alpha_dual;

    let trial = |alpha: f64| -> (Vec<Vector>, Vec<Vector>, Vec<Vector>) {
        let xs = state.xs.iter().zip(&sol.dx).map(|(x, d)| x + d * alpha).collect();
        let us = state.us.iter().zip(&sol.du).map(|(u, d)| u + d * alpha).collect();
        let ss = state.slacks.iter().zip(ds).map(|(s, d)| s + d * alpha).collect();
        (xs, us, ss)
    };

    let mut accepted = true;
    if options.line_search {
        let rho = 2.0 * eval.multiplier_norm + 1.0;
        let phi0 = merit(problem, options, &state.xs, &state.us, &state.slacks, &state.backoffs, mu, rho)?;
        // directional derivative of the smooth part plus the exact-penalty drop
        let mut slope = 0.0;
        let mut infeas0 = 0.0;
        for i in 0..n_nodes {
            let node = &eval.nodes[i];
            let (gx, gu) = local_cost_gradients(problem, options, state, node, i);
            slope += gx.dot(&sol.dx[i]);
            if !gu.is_empty() {
                slope += gu.dot(&sol.du[i]);
            }
            infeas0 += node.d.lp_norm(1) + node.g.lp_norm(1);
            for r in 0..node.c.len() {
                if node.hard[r] {
                    slope -= mu * ds[i][r] / state.slacks[i][r];
                    infeas0 += (node.c[r] - state.slacks[i][r]).abs();
                }
            }
        }
        slope -= rho * infeas0;
        // merit changes below round-off count as no increase
        let noise = 10.0 * f64::EPSILON * phi0.abs();
        let mut alpha = alpha_p;
        loop {
            let (xs, us, ss) = trial(alpha);
            let ok = match merit(problem, options, &xs, &us, &ss, &state.backoffs, mu, rho) {
                Ok(phi) => phi <= phi0 + 1e-4 * alpha * slope.min(0.0) + noise || slope >= 0.0 && phi <= phi0 + noise,
                Err(_) => false,
            };
            if ok {
                alpha_p = alpha;
                break;
            }
            alpha *= 0.5;
            if alpha < options.alpha_min {
                accepted = false;
                break;
            }
        }
    }

    let mut log = IterationLog {
        iteration: state.iterations,
        kkt: eval.kkt,
        cost: eval.cost,
        mu,
        alpha_primal: if accepted { alpha_p } else { 0.0 },
        alpha_dual: if accepted { alpha_d } else { 0.0 },
        accepted,
        regularization: sol.regularization,
        skipped_components: eval.skipped_components,
        covariance_fallbacks: eval.covariance_fallbacks,
        clipped_backoffs: eval.clipped_backoffs,
        max_backoff: eval.max_backoff,
    };
    state.iterations += 1;
    if !accepted {
        return Ok(log);
    }
    let (xs, us, ss) = trial(alpha_p);
    state.xs = xs;
    state.us = us;
    state.slacks = ss;
    for (z, d) in state.duals.iter_mut().zip(dz) {
        *z += d * alpha_d;
    }
    let nx = problem.model.nx();
    for (i, (g, new)) in state.gains.iter_mut().zip(&sol.gains).enumerate() {
        if new.nrows() != problem.input_dim(i) {
            *g = Matrix::zeros(problem.input_dim(i), nx);
        } else {
            *g += (new - &*g) * alpha_p;
        }
    }
    if let BarrierSchedule::Monotone { mu_min } = options.barrier {
        if eval.kkt.max() < 10.0 * mu && mu > mu_min {
            state.mu = (mu / 10.0).max(mu_min);
        }
    }
    log.mu = state.mu;
    Ok(log)
}

/// Gradient of cost, soft penalties and `−μ ln s` through `c` only: the
/// smooth part of the merit in `(x, u)`.
fn local_cost_gradients(
    problem: &OcpProblem,
    options: &SolverOptions,
    state: &SolverState,
    node: &NodeData,
    i: usize,
) -> (Vector, Vector) {
    let cost = &problem.costs[i];
    let x = &state.xs[i];
    let u = &state.us[i];
    let mut gx = &cost.q * (x - &cost.x_ref);
    let mut gu = if u.is_empty() {
        Vector::zeros(0)
    } else {
        &cost.r * (u - &cost.u_ref)
    };
    for r in 0..node.c.len() {
        if node.hard[r] {
            continue;
        }
        let w = relaxed_log_barrier(node.c[r], options.soft_mu, options.soft_delta).1;
        gx += node.hx.row(r).transpose() * w;
        if !u.is_empty() {
            gu += node.hu.row(r).transpose() * w;
        }
    }
    (gx, gu)
}

fn converged(options: &SolverOptions, state: &SolverState, kkt: &KktResiduals) -> bool {
    let mu_done = match options.barrier {
        BarrierSchedule::Fixed => true,
        BarrierSchedule::Monotone { mu_min } => state.mu <= mu_min * (1.0 + 1e-12),
    };
    mu_done && kkt.max() <= options.tolerance
}

/// Iterates until the KKT residual meets the tolerance, a step is rejected
/// or the iteration budget runs out. Starts from `warm` when given.
pub fn solve(
    problem: &OcpProblem,
    uncertainty: &Uncertainty,
    options: &SolverOptions,
    warm: Option<SolverState>,
) -> Result<SolveOutput> {
    problem.validate()?;
    let mut state = match warm {
        Some(s) => {
            s.check(problem)?;
            s
        }
        None => SolverState::from_rollout(problem, options)?,
    };
    let mut log = Vec::new();
    let mut conv = false;
    let mut last = None;
    for _ in 0..options.max_iterations {
        let eval = evaluate(problem, uncertainty, options, &mut state)?;
        if converged(options, &state, &eval.kkt) {
            conv = true;
            last = Some(eval);
            break;
        }
        let entry = step(problem, options, &mut state, &eval)?;
        let ok = entry.accepted;
        log.push(entry);
        if !ok {
            last = Some(eval);
            break;
        }
    }
    let eval = match last {
        Some(e) => e,
        None => {
            let e = evaluate(problem, uncertainty, options, &mut state)?;
            conv = converged(options, &state, &e.kkt);
            e
        }
    };
    Ok(SolveOutput {
        trajectory: BeliefTrajectory {
            times: state.times.clone(),
            kinds: state.kinds.clone(),
            xs: state.xs.clone(),
            us: state.us.clone(),
            gains: state.gains.clone(),
            covariances: state.covariances.clone(),
            backoffs: state.backoffs.clone(),
        },
        kkt: eval.kkt,
        cost: eval.cost,
        converged: conv,
        state,
        log,
    })
}
