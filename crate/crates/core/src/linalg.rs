//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, Matrix4, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat4 = Matrix4<f64>;

/// Largest condition number accepted before a matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// 2-norm condition number of a symmetric matrix, from its eigenvalues.
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    let abs = eig.eigenvalues.map(f64::abs);
    let (lo, hi) = (abs.min(), abs.max());
    if !lo.is_finite() || !hi.is_finite() || lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a symmetric matrix, refusing ill-conditioned input.
pub fn symmetric_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition_number = symmetric_condition(m);
    if !(condition_number <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition_number });
    }
    let inv = m.clone().try_inverse().ok_or(Error::IllConditioned { condition_number })?;
    Ok(symmetrize(&inv))
}

pub fn to_dynamic(m: &Mat4) -> DMatrix<f64> {
    DMatrix::from_iterator(4, 4, m.iter().copied())
}

pub fn to_fixed(m: &DMatrix<f64>) -> Mat4 {
    Mat4::from_iterator(m.iter().copied())
}

/// Numerical rank from singular values, relative tolerance `1e-10`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * top).count()
}
