//! Small dense linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

/// Spectral (operator 2-) norm.
///
/// Closed forms for 1×1 and 2×2; larger matrices go through the SVD.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    match (m.nrows(), m.ncols()) {
        (0, _) | (_, 0) => 0.0,
        (1, 1) => m[(0, 0)].abs(),
        (2, 2) => {
            let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let s = a * a + b * b + c * c + d * d;
            let det = a * d - b * c;
            let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
            ((s + disc) / 2.0).max(0.0).sqrt()
        }
        _ => m.singular_values().max(),
    }
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Matrix exponential; exact for diagonal input.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    if is_diagonal(m) {
        DMatrix::from_diagonal(&m.diagonal().map(f64::exp))
    } else {
        m.clone().exp()
    }
}

/// Numerical rank from singular values relative to the largest one.
pub fn rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn sup_norm(vs: &[DVector<f64>]) -> f64 {
    vs.iter().fold(0.0_f64, |acc, v| acc.max(v.norm()))
}
