use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Horizon or step count violates `t1 > t0`, `n_steps >= 2`.
    InvalidGrid { t0: f64, t1: f64, n_steps: usize },
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// First grid node at which a non-finite value appeared.
    IntegrationDiverged { node: usize },
    NotSymmetric { what: &'static str, asymmetry: f64 },
    NotPositiveDefinite { what: &'static str, eigenvalue: f64 },
    IllConditioned { what: &'static str, condition: f64 },
    NonFiniteEvaluation { at: Vec<f64> },
    /// The pair (A, B) cannot steer the state over the horizon.
    Uncontrollable { gramian_rank: usize, state_dim: usize },
    SingularMassMatrix { q: [f64; 3] },
    ShootingResidual { residual: f64, tolerance: f64 },
    SteeringResidual { what: &'static str, residual: f64, tolerance: f64 },
    /// Propagated covariance lost positive definiteness.
    LossOfDefiniteness { node: usize, eigenvalue: f64 },
    /// Boundary marginals of an iterate no longer match the targets.
    StaleIterate { residual: f64, tolerance: f64 },
    TooManyDiverged { diverged: usize, n_paths: usize },
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidGrid { t0, t1, n_steps } => write!(
                f,
                "invalid time grid [{t0}, {t1}] with {n_steps} steps (need t1 > t0 and n_steps >= 2)"
            ),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(
                f,
                "{what}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::IntegrationDiverged { node } => {
                write!(f, "integration diverged: non-finite value at node {node}")
            }
            Error::NotSymmetric { what, asymmetry } => {
                write!(f, "{what} is not symmetric (relative asymmetry {asymmetry:e})")
            }
            Error::NotPositiveDefinite { what, eigenvalue } => write!(
                f,
                "{what} is not positive definite (eigenvalue {eigenvalue:e})"
            ),
            Error::IllConditioned { what, condition } => {
                write!(f, "{what} is ill-conditioned (condition number {condition:e})")
            }
            Error::NonFiniteEvaluation { at } => {
                write!(f, "non-finite function value at probe point {at:?}")
            }
            Error::Uncontrollable {
                gramian_rank,
                state_dim,
            } => write!(
                f,
                "uncontrollable pair: controllability Gramian has rank {gramian_rank} < {state_dim}"
            ),
            Error::SingularMassMatrix { q } => {
                write!(f, "singular mass matrix at joint angles {q:?}")
            }
            Error::ShootingResidual {
                residual,
                tolerance,
            } => write!(
                f,
                "terminal mean residual {residual:e} exceeds {tolerance:e}; refine the grid"
            ),
            Error::SteeringResidual {
                what,
                residual,
                tolerance,
            } => write!(
                f,
                "closed-loop {what} residual {residual:e} exceeds {tolerance:e}"
            ),
            Error::LossOfDefiniteness { node, eigenvalue } => write!(
                f,
                "covariance lost positive definiteness at node {node} (eigenvalue {eigenvalue:e})"
            ),
            Error::StaleIterate {
                residual,
                tolerance,
            } => write!(
                f,
                "iterate violates the boundary marginals (residual {residual:e} > {tolerance:e})"
            ),
            Error::TooManyDiverged { diverged, n_paths } => {
                write!(f, "{diverged} of {n_paths} sample paths diverged")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
