//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative floor below which an eigenvalue counts as zero:
/// `λ_min < SINGULAR_FLOOR · max(1, λ_max)`.
pub const SINGULAR_FLOOR: f64 = 1e-12;

pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(mut m: Matrix) -> Matrix {
    symmetrize(&mut m);
    m
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &Matrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vec(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// (min, max) eigenvalue of the symmetric part of `m`.
pub fn eigen_range(m: &Matrix) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = symmetrized(m.clone()).symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn is_numerically_singular(m: &Matrix) -> bool {
    let (min, max) = eigen_range(m);
    !(min >= SINGULAR_FLOOR * max.max(1.0))
}

/// Solves `m x = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &Matrix, rhs: &Matrix) -> Option<Matrix> {
    let chol = m.clone().cholesky()?;
    Some(chol.solve(rhs))
}

pub fn spd_solve_vec(m: &Matrix, rhs: &Vector) -> Option<Vector> {
    let chol = m.clone().cholesky()?;
    Some(chol.solve(rhs))
}

pub fn spd_inverse(m: &Matrix) -> Option<Matrix> {
    let chol = m.clone().cholesky()?;
    Some(symmetrized(chol.inverse()))
}

pub fn log_det_spd(m: &Matrix) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Numerical rank with the relative tolerance used throughout.
pub fn rank(m: &Matrix) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0f64, f64::max);
    sv.iter().filter(|s| **s > SINGULAR_FLOOR * max.max(1.0)).count()
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix together with the
/// orthogonal projector onto its null space.
pub fn psd_pseudo_inverse(m: &Matrix) -> (Matrix, Matrix) {
    let n = m.nrows();
    let eig = symmetrized(m.clone()).symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let mut pinv = Matrix::zeros(n, n);
    let mut null = Matrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(k);
        if lambda > SINGULAR_FLOOR * max.max(1.0) {
            pinv += (u * u.transpose()) / lambda;
        } else {
            null += u * u.transpose();
        }
    }
    (symmetrized(pinv), symmetrized(null))
}

/// Cheap 1-norm condition estimate `‖m‖₁ ‖m⁻¹‖₁` via an LU solve.
pub fn condition_estimate(m: &Matrix) -> f64 {
    let n = m.nrows();
    match m.clone().lu().solve(&Matrix::identity(n, n)) {
        Some(inv) => one_norm(m) * one_norm(&inv),
        None => f64::INFINITY,
    }
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).iter().map(|v| v.abs()).fold(0.0, f64::max)
}

pub fn max_abs_diff_vec(a: &Vector, b: &Vector) -> f64 {
    (a - b).iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_inverse_of_rank_deficient_diffusion() {
        let q = Matrix::from_diagonal(&Vector::from_vec(vec![0.0, 0.0, 4.0, 4.0]));
        let (pinv, null) = psd_pseudo_inverse(&q);
        assert!((pinv[(2, 2)] - 0.25).abs() < 1e-15);
        assert!(pinv[(0, 0)].abs() < 1e-15);
        assert!((null[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(null[(3, 3)].abs() < 1e-15);
        assert_eq!(rank(&q), 2);
    }

    #[test]
    fn singular_floor_is_relative() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1e6, 1e-7]));
        assert!(is_numerically_singular(&m));
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1e-11]));
        assert!(!is_numerically_singular(&m));
    }

    #[test]
    fn log_det_matches_product_of_diagonal() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 3.0, 0.5]));
        assert!((log_det_spd(&m).unwrap() - 3.0f64.ln()).abs() < 1e-14);
    }
}
