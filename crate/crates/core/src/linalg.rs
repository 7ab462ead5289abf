//! Small dense helpers shared by the model, covariance and solver modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative step used by every central-difference fallback.
pub const FD_STEP: f64 = 1e-6;

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    symmetrize_in_place(&mut out);
    out
}

pub fn symmetrize_in_place(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Tolerance below zero accepted for the smallest eigenvalue of a covariance.
pub const PSD_TOL: f64 = 1e-10;

/// Cheap PSD test: Cholesky of `m + tol·I` where `tol` scales with the trace.
pub fn check_psd(m: &Matrix) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("covariance"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(());
    }
    let shift = PSD_TOL + 1e-12 * m.trace().abs();
    let mut shifted = symmetrize(m);
    for i in 0..n {
        shifted[(i, i)] += shift;
    }
    if shifted.cholesky().is_some() {
        Ok(())
    } else {
        Err(Error::NotPsd(min_eigenvalue(m)))
    }
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Central-difference step for a point with infinity norm `scale`.
pub fn fd_step(scale: f64) -> f64 {
    FD_STEP * (1.0 + scale)
}

/// Central-difference jacobian of `f` at `x`.
pub fn fd_jacobian<F>(f: F, x: &Vector) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let h = fd_step(inf_norm(x));
    let n = x.len();
    let mut probe = x.clone();
    let mut cols: Option<Matrix> = None;
    for j in 0..n {
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        let jac = cols.get_or_insert_with(|| Matrix::zeros(plus.len(), n));
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    cols.unwrap_or_else(|| Matrix::zeros(f(x).len(), 0))
}

/// Central-difference derivative of a vector-valued function of one scalar.
pub fn fd_derivative<F>(f: F, t: f64) -> Vector
where
    F: Fn(f64) -> Vector,
{
    let h = fd_step(t.abs());
    (f(t + h) - f(t - h)) / (2.0 * h)
}

/// `a · b · aᵀ`, symmetrized.
pub fn sandwich(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a * b * a.transpose();
    symmetrize_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_jacobian_of_linear_map_is_exact_to_rounding() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let x = Vector::from_vec(alloc::vec![0.3, -0.2, 1.5]);
        let jac = fd_jacobian(|x| &a * x, &x);
        assert!((jac - a).abs().max() < 1e-9);
    }

    #[test]
    fn psd_check_rejects_negative_eigenvalue() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
        assert!(matches!(check_psd(&m), Err(Error::NotPsd(_))));
        let ok = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        assert!(check_psd(&ok).is_ok());
    }
}
