//! Control-affine stochastic models `dX = f(t,X)dt + g(t,X)(u dt + √ε dW)`
//! with a state cost `V`, plus the bundled example systems.

mod costs;
mod double_integrator;
mod lti;
mod manipulator;

use alloc::boxed::Box;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::fd::{default_fd_step, fd_jacobian};
use crate::numerics::linalg::relative_asymmetry;

pub use costs::{QuadraticCost, TrackingCost, ZeroCost};
pub use double_integrator::{
    double_integrator_drag, double_integrator_drag_with, DoubleIntegratorDrag, DragForm,
    TRACKING_WEIGHT,
};
pub use lti::{controllability_gramian, lti_test_model, LinearDynamics};
pub use manipulator::{manipulator_3link, Manipulator3Link, ManipulatorParams};

/// Drift and input channel of a control-affine system.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn drift(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Jacobian of the drift, entry `(i, j) = ∂f_i/∂x_j`. Central
    /// differences unless overridden.
    fn drift_jacobian(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_jacobian(|y| self.drift(t, y), x, default_fd_step(x))
    }

    /// `B(t)` for a fixed input matrix, `g(t, x)` otherwise.
    fn input_matrix(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    fn state_dependent_input(&self) -> bool {
        false
    }

    fn drift_and_input(&self, t: f64, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.drift(t, x)?, self.input_matrix(t, x)?))
    }
}

/// State cost `V`. `anchor` is the mean of the current iterate at the same
/// time; costs that track the mean use it, the rest ignore it.
pub trait StateCost: Send + Sync {
    fn value(&self, x: &DVector<f64>, anchor: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>, anchor: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>, anchor: &DVector<f64>) -> DMatrix<f64>;
}

pub struct NonlinearModel {
    dynamics: Box<dyn Dynamics>,
    cost: Box<dyn StateCost>,
    eps: f64,
}

impl core::fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("state_dim", &self.state_dim())
            .field("input_dim", &self.input_dim())
            .field("eps", &self.eps)
            .finish()
    }
}

impl NonlinearModel {
    pub fn new(
        dynamics: Box<dyn Dynamics>,
        cost: Box<dyn StateCost>,
        eps: f64,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "noise intensity must be positive, got {eps}"
            )));
        }
        if dynamics.state_dim() == 0 || dynamics.input_dim() == 0 {
            return Err(Error::InvalidConfig(
                "state and input dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            dynamics,
            cost,
            eps,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    pub fn cost(&self) -> &dyn StateCost {
        self.cost.as_ref()
    }

    pub fn drift(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.dynamics.drift(t, x)
    }

    pub fn drift_jacobian(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.dynamics.drift_jacobian(t, x)
    }

    pub fn input_matrix(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.dynamics.input_matrix(t, x)
    }

    pub fn state_dependent_input(&self) -> bool {
        self.dynamics.state_dependent_input()
    }
}

/// Gaussian marginal `N(mean, cov)` with symmetric positive-definite `cov`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMarginal {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMarginal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                what: "marginal covariance",
                expected: (n, n),
                found: cov.shape(),
            });
        }
        let asymmetry = relative_asymmetry(&cov);
        if asymmetry > 1e-10 {
            return Err(Error::NotSymmetric {
                what: "marginal covariance",
                asymmetry,
            });
        }
        if cov.clone().cholesky().is_none() || !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NotPositiveDefinite {
                what: "marginal covariance",
                eigenvalue: crate::numerics::linalg::min_eigenvalue(&cov),
            });
        }
        Ok(Self { mean, cov })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}
