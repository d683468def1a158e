//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub fn frobenius_sq(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Spectral norm of a symmetric matrix via its eigenvalues.
pub fn sym_spectral_norm(m: &Matrix) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// `‖I − H/L‖₂` for a symmetric `H`.
pub fn neumann_contraction(h: &Matrix, l_g: f64) -> f64 {
    let n = h.nrows();
    let a = Matrix::identity(n, n) - h / l_g;
    sym_spectral_norm(&a)
}

/// Clip the spectrum of a symmetric matrix into `[lo, hi]`.
pub fn clip_spectrum(m: &Matrix, lo: f64, hi: f64) -> Matrix {
    let eig = SymmetricEigen::new(m.clone());
    let clipped = eig.eigenvalues.map(|v| v.clamp(lo, hi));
    let q = &eig.eigenvectors;
    q * Matrix::from_diagonal(&clipped) * q.transpose()
}

/// Solve `A x = b` for symmetric positive definite `A`.
pub fn spd_solve(a: &Matrix, b: &Vector) -> Option<Vector> {
    a.clone().cholesky().map(|c| c.solve(b))
}

pub fn all_finite_vec(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn all_finite_mat(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}
