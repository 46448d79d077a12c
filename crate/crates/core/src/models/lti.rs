use alloc::boxed::Box;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Dynamics, NonlinearModel, QuadraticCost};
use crate::error::{Error, Result};
use crate::numerics::{integrate_dense, linalg::min_eigenvalue, symmetrize, Direction, TimeGrid};

/// `f(t, x) = A x` with a constant input matrix.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn drift(&self, _t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x)
    }

    fn drift_jacobian(&self, _t: f64, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }

    fn input_matrix(&self, _t: f64, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.b.clone())
    }
}

/// `W = ∫ e^{Aτ} B Bᵀ e^{Aᵀτ} dτ` over the grid's horizon, from
/// `Ẇ = A W + W Aᵀ + B Bᵀ`, `W(t0) = 0`.
pub fn controllability_gramian(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let bbt = b * b.transpose();
    let w = integrate_dense(grid, DMatrix::zeros(n, n), Direction::Forward, |_, _, w| {
        a * w + w * a.transpose() + &bbt
    })?;
    Ok(symmetrize(w.last()))
}

/// Linear drift `A x`, input `B`, cost `½ xᵀ Q x`. Rejects pairs whose
/// controllability Gramian over `horizon` is rank deficient.
pub fn lti_test_model(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    eps: f64,
    horizon: &TimeGrid,
) -> Result<NonlinearModel> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "A",
            expected: (n, n),
            found: a.shape(),
        });
    }
    if b.nrows() != n || b.ncols() == 0 {
        return Err(Error::DimensionMismatch {
            what: "B",
            expected: (n, b.ncols().max(1)),
            found: b.shape(),
        });
    }
    if q.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            what: "Q",
            expected: (n, n),
            found: q.shape(),
        });
    }
    let q = symmetrize(&q);
    let q_min = min_eigenvalue(&q);
    if q_min < -1e-12 * q.norm().max(1.0) {
        return Err(Error::NotPositiveDefinite {
            what: "state cost Q",
            eigenvalue: q_min,
        });
    }
    let gramian = controllability_gramian(&a, &b, horizon)?;
    let eig = SymmetricEigen::new(gramian).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rank = eig.iter().filter(|v| **v > 1e-10 * max).count();
    if rank < n {
        return Err(Error::Uncontrollable {
            gramian_rank: rank,
            state_dim: n,
        });
    }
    NonlinearModel::new(
        Box::new(LinearDynamics { a, b }),
        Box::new(QuadraticCost::centered(q)),
        eps,
    )
}
