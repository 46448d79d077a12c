#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative eigenvalue cutoff for [`pinv_sym`].
pub const DEFAULT_RANK_TOL: f64 = 1e-12;
/// Largest condition number accepted by [`guarded_inverse`].
pub const MAX_CONDITION: f64 = 1e12;

const SYMMETRY_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖M − Mᵀ‖_F / max(‖M‖_F, tiny)`
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

fn check_square(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            what,
            expected: (m.nrows(), m.nrows()),
            found: (m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

fn symmetric_eigen(m: &DMatrix<f64>, what: &'static str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_square(m, what)?;
    let asym = relative_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            what,
            asymmetry: asym,
        });
    }
    Ok(SymmetricEigen::new(symmetrize(m)))
}

fn from_eigen(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = f(*lambda);
        scaled.column_mut(j).scale_mut(s);
    }
    symmetrize(&(scaled * v.transpose()))
}

fn spd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let eig = symmetric_eigen(m, "matrix")?;
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite {
            what: "matrix",
            eigenvalue: min,
        });
    }
    Ok(eig)
}

/// Principal square root of a symmetric positive-definite matrix.
pub fn sqrtm_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = spd_eigen(m)?;
    Ok(from_eigen(&eig, |l| l.sqrt()))
}

/// Inverse principal square root `M^{-1/2}`.
pub fn inv_sqrtm_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = spd_eigen(m)?;
    Ok(from_eigen(&eig, |l| 1.0 / l.sqrt()))
}

/// Moore–Penrose pseudo-inverse of a symmetric positive-semidefinite matrix.
/// Eigenvalues below `rank_tol * λ_max` are treated as zero.
pub fn pinv_sym(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(m, "matrix")?;
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    if max_abs == 0.0 {
        return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
    }
    let cutoff = rank_tol.max(f64::EPSILON * m.nrows() as f64) * max_abs;
    if let Some(neg) = eig.eigenvalues.iter().copied().find(|l| *l < -cutoff) {
        return Err(Error::NotPositiveDefinite {
            what: "semidefinite matrix",
            eigenvalue: neg,
        });
    }
    Ok(from_eigen(&eig, |l| if l > cutoff { 1.0 / l } else { 0.0 }))
}

/// Inverse of a symmetric positive-definite matrix by Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    check_square(m, what)?;
    match m.clone().cholesky() {
        Some(c) => Ok(symmetrize(&c.inverse())),
        None => {
            let min = SymmetricEigen::new(symmetrize(m))
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            Err(Error::NotPositiveDefinite {
                what,
                eigenvalue: min,
            })
        }
    }
}

/// 2-norm condition number via singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// LU inverse, refused when the condition number exceeds [`MAX_CONDITION`].
pub fn guarded_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    check_square(m, what)?;
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { what, condition });
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or(Error::IllConditioned { what, condition })
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
