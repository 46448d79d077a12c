//! Gaussian Markov processes `dX = A(t)X dt + a(t) dt + √ε B(t) dW` and
//! their first two moments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::GaussianMarginal;
use crate::numerics::linalg::min_eigenvalue;
use crate::numerics::{
    integrate_dense, symmetrize, Direction, TimeGrid, TimeIndexedMatrix, TimeIndexedVector,
    TimeSeries,
};

/// Time-varying affine drift `A(t)x + a(t)` with the matrix `B(t)` through
/// which noise enters.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineDynamics {
    pub a: TimeIndexedMatrix,
    pub offset: TimeIndexedVector,
    pub input: TimeIndexedMatrix,
}

impl AffineDynamics {
    pub fn new(
        a: TimeIndexedMatrix,
        offset: TimeIndexedVector,
        input: TimeIndexedMatrix,
    ) -> Result<Self> {
        let n = a.first().nrows();
        let shapes_ok = a.samples().iter().all(|m| m.shape() == (n, n))
            && offset.samples().iter().all(|v| v.len() == n)
            && input.samples().iter().all(|m| m.nrows() == n);
        if !shapes_ok || a.grid() != offset.grid() || a.grid() != input.grid() {
            return Err(Error::DimensionMismatch {
                what: "affine dynamics",
                expected: (n, n),
                found: a.first().shape(),
            });
        }
        let finite = a.samples().iter().all(|m| m.iter().all(|v| v.is_finite()))
            && offset.samples().iter().all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NonFiniteEvaluation {
                at: alloc::vec::Vec::new(),
            });
        }
        Ok(Self { a, offset, input })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.a.grid()
    }

    pub fn state_dim(&self) -> usize {
        self.a.first().nrows()
    }
}

/// Mean and covariance paths of a Gaussian Markov process.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub mean: TimeIndexedVector,
    pub cov: TimeIndexedMatrix,
}

impl MomentTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        self.mean.grid()
    }

    /// Relative terminal residuals `(‖z(t1) − m‖ / (1 + ‖m‖), ‖Σ(t1) − S‖_F / ‖S‖_F)`.
    pub fn terminal_residuals(&self, target: &GaussianMarginal) -> (f64, f64) {
        let mean_res = (self.mean.last() - target.mean()).norm() / (1.0 + target.mean().norm());
        let cov_res = (self.cov.last() - target.cov()).norm() / target.cov().norm();
        (mean_res, cov_res)
    }
}

/// Integrates `ż = A z + a`, `Σ̇ = A Σ + Σ Aᵀ + ε B Bᵀ` from `initial`.
pub fn propagate_moments(
    dynamics: &AffineDynamics,
    eps: f64,
    initial: &GaussianMarginal,
) -> Result<MomentTrajectory> {
    let n = dynamics.state_dim();
    if initial.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "initial marginal",
            expected: (n, n),
            found: (initial.dim(), initial.dim()),
        });
    }
    let grid = *dynamics.grid();
    let diffusion = dynamics.input.map(|_, b| b * b.transpose() * eps);
    let a = &dynamics.a;
    let offset = &dynamics.offset;
    let traj = integrate_dense(
        &grid,
        (initial.mean().clone(), initial.cov().clone()),
        Direction::Forward,
        |k, _, (z, s): &(DVector<f64>, DMatrix<f64>)| {
            let ak = a.sample(k);
            let as_ = ak * s;
            (
                ak * z + offset.sample(k),
                &as_ + as_.transpose() + diffusion.sample(k),
            )
        },
    )?;
    let (mean, cov): (alloc::vec::Vec<_>, alloc::vec::Vec<_>) = traj
        .into_samples()
        .into_iter()
        .map(|(z, s)| (z, symmetrize(&s)))
        .unzip();
    for (i, s) in cov.iter().enumerate().step_by(2) {
        if s.clone().cholesky().is_none() {
            let eigenvalue = min_eigenvalue(s);
            if eigenvalue < -1e-10 {
                return Err(Error::LossOfDefiniteness {
                    node: i / 2,
                    eigenvalue,
                });
            }
        }
    }
    Ok(MomentTrajectory {
        mean: TimeSeries::from_samples(grid, mean)?,
        cov: TimeSeries::from_samples(grid, cov)?,
    })
}
