//! Stage-wise Newton step of the condensed subproblem.
//!
//! Equality rows (switching constraints) are carried backward as a
//! constraint-to-go `H Δx + h = 0` until some input can satisfy them, so
//! guards of any relative degree are handled without special cases.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Quadratic model of one node.
///
/// Flow nodes map `Δx_{k+1} = A Δx_k + B Δu_k + d`; jump nodes have an
/// empty `B`; the terminal node ignores `a`, `b`, `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub a: Matrix,
    pub b: Matrix,
    pub d: Vector,
    pub qxx: Matrix,
    pub qxu: Matrix,
    pub quu: Matrix,
    pub qx: Vector,
    pub qu: Vector,
    /// Own equality rows `C_x Δx + C_u Δu + e = 0`.
    pub cx: Matrix,
    pub cu: Matrix,
    pub e: Vector,
}

impl Stage {
    pub fn nu(&self) -> usize {
        self.quu.nrows()
    }

    pub fn nx(&self) -> usize {
        self.qxx.nrows()
    }

    /// Stage with zero cost, no constraints and the given dynamics.
    pub fn zeros(nx: usize, nu: usize) -> Self {
        Self {
            a: Matrix::zeros(nx, nx),
            b: Matrix::zeros(nx, nu),
            d: Vector::zeros(nx),
            qxx: Matrix::zeros(nx, nx),
            qxu: Matrix::zeros(nx, nu),
            quu: Matrix::zeros(nu, nu),
            qx: Vector::zeros(nx),
            qu: Vector::zeros(nu),
            cx: Matrix::zeros(0, nx),
            cu: Matrix::zeros(0, nu),
            e: Vector::zeros(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSubproblem {
    pub stages: Vec<Stage>,
    pub dx0: Vector,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RiccatiSolution {
    pub dx: Vec<Vector>,
    pub du: Vec<Vector>,
    /// `Δu_k = K_k Δx_k + k_k`; `0 × nx` at nodes without input.
    pub gains: Vec<Matrix>,
    pub feedforward: Vec<Vector>,
    pub value_hessian: Vec<Matrix>,
    pub value_gradient: Vec<Vector>,
    /// Largest Levenberg shift used on an input block.
    pub regularization: f64,
    /// Equality rows still unsatisfiable at node 0.
    pub unresolved_rows: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiccatiOptions {
    pub levenberg_init: f64,
    pub levenberg_max: f64,
    pub rank_tol: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            levenberg_init: 1e-8,
            levenberg_max: 1e8,
            rank_tol: 1e-9,
        }
    }
}

/// Cholesky of `m`, adding `λI` with `λ` doubling from `levenberg_init`
/// when the factorization fails.
fn regularized_cholesky(
    m: &Matrix,
    opts: &RiccatiOptions,
    node: usize,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    let n = m.nrows();
    let mut lambda = opts.levenberg_init;
    while lambda <= opts.levenberg_max {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += lambda;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok((ch, lambda));
        }
        lambda *= 2.0;
    }
    Err(Error::IndefiniteHessian(node))
}

/// Pseudo-inverse, null-space basis and range projector of `n_u`.
struct ConstraintSplit {
    pinv: Matrix,
    null: Matrix,
    range_projector: Matrix,
}

fn split_constraints(n_u: &Matrix, tol: f64) -> ConstraintSplit {
    let nu = n_u.ncols();
    let m = n_u.nrows();
    let gram = n_u.transpose() * n_u;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let cutoff = (tol * tol * max).max(1e-24);
    let mut pinv_core = Matrix::zeros(nu, nu);
    let mut null_cols = Vec::new();
    for i in 0..nu {
        let v = eig.eigenvectors.column(i);
        let l = eig.eigenvalues[i];
        if l > cutoff {
            pinv_core += (v * v.transpose()) / l;
        } else {
            null_cols.push(v.into_owned());
        }
    }
    let pinv = pinv_core * n_u.transpose();
    let null = if null_cols.is_empty() {
        Matrix::zeros(nu, 0)
    } else {
        Matrix::from_columns(&null_cols)
    };
    let range_projector = if m == 0 {
        Matrix::zeros(0, 0)
    } else {
        n_u * &pinv
    };
    ConstraintSplit {
        pinv,
        null,
        range_projector,
    }
}

/// Keeps an independent set of rows of `[H h]`; rows whose state part
/// vanishes are dropped.
fn compress_rows(h: Matrix, v: Vector, tol: f64) -> (Matrix, Vector) {
    let m = h.nrows();
    if m == 0 {
        return (h, v);
    }
    let nx = h.ncols();
    let svd = h.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let sv = &svd.singular_values;
    let max = sv.iter().copied().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..sv.len())
        .filter(|&i| sv[i] > tol * max.max(1.0) && sv[i] > 1e-14)
        .collect();
    let mut hc = Matrix::zeros(keep.len(), nx);
    let mut vc = Vector::zeros(keep.len());
    for (r, &i) in keep.iter().enumerate() {
        let ui = u.column(i);
        hc.set_row(r, &(ui.transpose() * &h));
        vc[r] = ui.dot(&v);
    }
    (hc, vc)
}

/// Backward Riccati sweep with constraint-to-go followed by a forward
/// rollout of the directions.
pub fn riccati_recursion(sub: &QuadraticSubproblem, opts: &RiccatiOptions) -> Result<RiccatiSolution> {
    let n_nodes = sub.stages.len();
    if n_nodes < 2 {
        return Err(Error::Problem("subproblem needs at least two nodes".into()));
    }
    let n = n_nodes - 1;
    let nx = sub.stages[0].nx();
    if sub.dx0.len() != nx {
        return Err(Error::Dimension {
            what: "initial step",
            expected: nx,
            got: sub.dx0.len(),
        });
    }
    let mut gains = alloc::vec![Matrix::zeros(0, nx); n_nodes];
    let mut ff = alloc::vec![Vector::zeros(0); n_nodes];
    let mut hess = alloc::vec![Matrix::zeros(nx, nx); n_nodes];
    let mut grad = alloc::vec![Vector::zeros(nx); n_nodes];
    let mut regularization = 0.0f64;

    let term = &sub.stages[n];
    hess[n] = term.qxx.clone();
    grad[n] = term.qx.clone();
    let (mut h_go, mut e_go) = compress_rows(term.cx.clone(), term.e.clone(), opts.rank_tol);

    for k in (0..n).rev() {
        let st = &sub.stages[k];
        let nu = st.nu();
        let p_next = &hess[k + 1];
        let pa = p_next * &st.a;
        let pd_p = p_next * &st.d + &grad[k + 1];
        let mut qxx = &st.qxx + st.a.transpose() * &pa;
        let qx = &st.qx + st.a.transpose() * &pd_p;

        // stacked equality rows on (Δx_k, Δu_k)
        let m_own = st.e.len();
        let m_go = e_go.len();
        let m = m_own + m_go;
        let mut n_x = Matrix::zeros(m, nx);
        let mut n_u = Matrix::zeros(m, nu);
        let mut n_e = Vector::zeros(m);
        if m_own > 0 {
            n_x.rows_mut(0, m_own).copy_from(&st.cx);
            if nu > 0 {
                n_u.rows_mut(0, m_own).copy_from(&st.cu);
            }
            n_e.rows_mut(0, m_own).copy_from(&st.e);
        }
        if m_go > 0 {
            n_x.rows_mut(m_own, m_go).copy_from(&(&h_go * &st.a));
            if nu > 0 {
                n_u.rows_mut(m_own, m_go).copy_from(&(&h_go * &st.b));
            }
            n_e.rows_mut(m_own, m_go).copy_from(&(&h_go * &st.d + &e_go));
        }

        if nu == 0 {
            linalg::symmetrize_in_place(&mut qxx);
            hess[k] = qxx;
            grad[k] = qx;
            let (h, e) = compress_rows(n_x, n_e, opts.rank_tol);
            h_go = h;
            e_go = e;
            continue;
        }

        let qux = st.qxu.transpose() + st.b.transpose() * &pa;
        let quu = &st.quu + st.b.transpose() * p_next * &st.b;
        let qu = &st.qu + st.b.transpose() * &pd_p;

        let (k_gain, k_ff) = if m == 0 {
            let (ch, reg) = regularized_cholesky(&quu, opts, k)?;
            regularization = regularization.max(reg);
            let k_gain = -ch.solve(&qux);
            let k_ff = -ch.solve(&qu);
            h_go = Matrix::zeros(0, nx);
            e_go = Vector::zeros(0);
            (k_gain, k_ff)
        } else {
            let split = split_constraints(&n_u, opts.rank_tol);
            let kp = -&split.pinv * &n_x;
            let kpf = -&split.pinv * &n_e;
            let (k_gain, k_ff) = if split.null.ncols() > 0 {
                let z = &split.null;
                let qzz = z.transpose() * &quu * z;
                let (ch, reg) = regularized_cholesky(&qzz, opts, k)?;
                regularization = regularization.max(reg);
                let rhs_k = z.transpose() * (&quu * &kp + &qux);
                let rhs_f = z.transpose() * (&quu * &kpf + &qu);
                (&kp - z * ch.solve(&rhs_k), &kpf - z * ch.solve(&rhs_f))
            } else {
                (kp, kpf)
            };
            // rows outside the range of N_u stay as constraint-to-go
            let perp = Matrix::identity(m, m) - &split.range_projector;
            let (h, e) = compress_rows(&perp * &n_x, &perp * &n_e, opts.rank_tol);
            h_go = h;
            e_go = e;
            (k_gain, k_ff)
        };

        let quu_k = &quu * &k_gain;
        let mut p_k = &qxx + k_gain.transpose() * &quu_k + qux.transpose() * &k_gain + k_gain.transpose() * &qux;
        linalg::symmetrize_in_place(&mut p_k);
        let p_vec = &qx + k_gain.transpose() * (&quu * &k_ff) + qux.transpose() * &k_ff + k_gain.transpose() * &qu;
        hess[k] = p_k;
        grad[k] = p_vec;
        gains[k] = k_gain;
        ff[k] = k_ff;
    }

    let mut dx = Vec::with_capacity(n_nodes);
    let mut du = Vec::with_capacity(n_nodes);
    dx.push(sub.dx0.clone());
    for k in 0..n {
        let st = &sub.stages[k];
        let u = if st.nu() > 0 {
            &gains[k] * &dx[k] + &ff[k]
        } else {
            Vector::zeros(0)
        };
        let mut next = &st.a * &dx[k] + &st.d;
        if st.nu() > 0 {
            next += &st.b * &u;
        }
        du.push(u);
        dx.push(next);
    }
    du.push(Vector::zeros(0));
    Ok(RiccatiSolution {
        dx,
        du,
        gains,
        feedforward: ff,
        value_hessian: hess,
        value_gradient: grad,
        regularization,
        unresolved_rows: e_go.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn one_step_scalar_by_hand() {
        // min ½x₁² + ½u₀² with x₁ = x₀ + u₀, x₀ = 1
        let mut s0 = Stage::zeros(1, 1);
        s0.a[(0, 0)] = 1.0;
        s0.b[(0, 0)] = 1.0;
        s0.quu[(0, 0)] = 1.0;
        let mut s1 = Stage::zeros(1, 0);
        s1.qxx[(0, 0)] = 1.0;
        let sol = riccati_recursion(
            &QuadraticSubproblem {
                stages: vec![s0, s1],
                dx0: Vector::from_element(1, 1.0),
            },
            &RiccatiOptions::default(),
        )
        .unwrap();
        // K = −(1 + 1)⁻¹·1·1
        assert!((sol.gains[0][(0, 0)] + 0.5).abs() < 1e-15);
        assert!((sol.du[0][0] + 0.5).abs() < 1e-15);
        assert!((sol.dx[1][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn terminal_equality_pulled_back_two_stages() {
        // double integrator, reach position 1 with zero velocity unconstrained;
        // terminal row fixes position only; relative degree two
        let dt = 0.1;
        let mut stages = Vec::new();
        for _ in 0..3 {
            let mut s = Stage::zeros(2, 1);
            s.a = Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
            s.b = Matrix::from_row_slice(2, 1, &[0.0, dt]);
            s.quu[(0, 0)] = 1.0;
            stages.push(s);
        }
        let mut term = Stage::zeros(2, 0);
        term.cx = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        term.e = Vector::from_element(1, -1.0);
        stages.push(term);
        let sol = riccati_recursion(
            &QuadraticSubproblem {
                stages,
                dx0: Vector::zeros(2),
            },
            &RiccatiOptions::default(),
        )
        .unwrap();
        assert!((sol.dx[3][0] - 1.0).abs() < 1e-10);
        assert_eq!(sol.unresolved_rows, 0);
    }

    #[test]
    fn indefinite_input_block_regularized() {
        let mut s0 = Stage::zeros(1, 1);
        s0.a[(0, 0)] = 1.0;
        s0.b[(0, 0)] = 1.0;
        s0.quu[(0, 0)] = -1e-9;
        let s1 = Stage::zeros(1, 0);
        let sol = riccati_recursion(
            &QuadraticSubproblem {
                stages: vec![s0, s1],
                dx0: Vector::zeros(1),
            },
            &RiccatiOptions::default(),
        )
        .unwrap();
        assert!(sol.regularization > 0.0);
        let mut bad = Stage::zeros(1, 1);
        bad.quu[(0, 0)] = -1e9;
        let r = riccati_recursion(
            &QuadraticSubproblem {
                stages: vec![bad, Stage::zeros(1, 0)],
                dx0: Vector::zeros(1),
            },
            &RiccatiOptions::default(),
        );
        assert_eq!(r.unwrap_err(), Error::IndefiniteHessian(0));
    }
}
