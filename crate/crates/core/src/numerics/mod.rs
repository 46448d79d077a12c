//! Shared numerical kernels: the time grid, RK4 integration, SPD matrix
//! functions and finite differences.

pub mod fd;
pub mod grid;
pub mod linalg;
pub mod ode;

pub use fd::{default_fd_step, fd_gradient, fd_gradient4, fd_jacobian};
pub use grid::{
    integrate_series, TimeGrid, TimeIndexedMatrix, TimeIndexedVector, TimeSeries, VectorSpace,
};
pub use linalg::{guarded_inverse, inv_sqrtm_spd, pinv_sym, spd_inverse, sqrtm_spd, symmetrize};
pub use ode::{integrate_dense, integrate_ode, Direction};
