//! Proximal gradient iteration over Gaussian Markov processes for nonlinear
//! covariance steering.
//!
//! Each iterate is an [`AffineDynamics`] whose moments already satisfy both
//! boundary marginals. One step linearizes the prior drift along the current
//! mean, assembles a linear steering problem that mixes the current iterate
//! with the linearization, solves it exactly and folds the resulting feedback
//! back into the drift.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss_markov::{propagate_moments, AffineDynamics, MomentTrajectory};
use crate::linear_steering::{
    solve_linear_steering, AffinePolicy, LinearSteeringProblem, LinearSteeringSolution,
    SteeringTolerances,
};
use crate::models::{GaussianMarginal, NonlinearModel};
use crate::numerics::linalg::DEFAULT_RANK_TOL;
use crate::numerics::{
    fd_gradient4, integrate_dense, integrate_series, pinv_sym, symmetrize, Direction, TimeGrid,
    TimeIndexedMatrix, TimeIndexedVector, TimeSeries,
};

/// Boundary residual above which a converged iterate is considered stale.
pub const STALE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// `A₀ ≡ 0`, `a₀ ≡ 0`.
    ZeroPrior,
    /// Linearization of the drift along the uncontrolled rollout from `m0`.
    #[default]
    LinearizedPrior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub grid: TimeGrid,
    pub eta: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    pub init_mode: InitMode,
    /// Outer step of the trace-gradient finite differences; scaled default
    /// when `None`.
    pub fd_step: Option<f64>,
    pub tolerances: SteeringTolerances,
}

impl SolverConfig {
    pub fn new(grid: TimeGrid) -> Self {
        Self {
            grid,
            eta: 1.0,
            max_iters: 150,
            conv_tol: 1e-5,
            init_mode: InitMode::default(),
            fd_step: None,
            tolerances: SteeringTolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.conv_tol > 0.0) {
            return bad("conv_tol must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if let Some(h) = self.fd_step {
            if !(h > 0.0 && h.is_finite()) {
                return bad("fd_step must be positive");
            }
        }
        if !(self.tolerances.mean > 0.0 && self.tolerances.cov > 0.0) {
            return bad("steering tolerances must be positive");
        }
        Ok(())
    }
}

/// Affine model `Â x + â` of the drift along a mean path.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub a: TimeIndexedMatrix,
    pub offset: TimeIndexedVector,
}

/// Evaluates `Â = ∇f(z)`, `â = f(z) − ∇f(z) z` at every sample of `mean`.
pub fn linearize_prior(model: &NonlinearModel, mean: &TimeIndexedVector) -> Result<Linearization> {
    let grid = *mean.grid();
    let pairs = TimeSeries::try_from_fn(grid, |k, t| {
        let z = mean.sample(k);
        let f = model.drift(t, z)?;
        let jac = model.drift_jacobian(t, z)?;
        let offset = f - &jac * z;
        Ok::<_, Error>((jac, offset))
    })?;
    Ok(Linearization {
        a: pairs.map(|_, (j, _)| j.clone()),
        offset: pairs.map(|_, (_, o)| o.clone()),
    })
}

/// Input matrix along `mean`; constant for models with a fixed `B(t)`.
pub fn input_along(model: &NonlinearModel, mean: &TimeIndexedVector) -> Result<TimeIndexedMatrix> {
    TimeSeries::try_from_fn(*mean.grid(), |k, t| model.input_matrix(t, mean.sample(k)))
}

fn noise_pinv(input: &TimeIndexedMatrix) -> Result<TimeIndexedMatrix> {
    TimeSeries::try_from_fn(*input.grid(), |k, _| {
        let b = input.sample(k);
        pinv_sym(&(b * b.transpose()), DEFAULT_RANK_TOL)
    })
}

fn trace_step(z: &DVector<f64>, fd_step: Option<f64>) -> f64 {
    // The second trace map differentiates a Jacobian that may itself be a
    // finite difference, so the fourth-order outer stencil uses a step well
    // above the inner one.
    fd_step.unwrap_or_else(|| f64::EPSILON.powf(0.2) * z.amax().max(1.0))
}

/// Gradient field `∇Tr(∇²V(z)Σ) + ∇Tr(P(∇f(z) − A)Σ(∇f(z) − A)ᵀ)` along the
/// moments, with `Σ`, `A` and `P = (BBᵀ)†` frozen at each sample.
pub fn trace_gradient_terms(
    model: &NonlinearModel,
    a: &TimeIndexedMatrix,
    input: &TimeIndexedMatrix,
    moments: &MomentTrajectory,
    fd_step: Option<f64>,
) -> Result<TimeIndexedVector> {
    let pinv = noise_pinv(input)?;
    TimeSeries::try_from_fn(*a.grid(), |k, t| {
        let z = moments.mean.sample(k);
        let sigma = moments.cov.sample(k);
        let ak = a.sample(k);
        let p = pinv.sample(k);
        let cost = model.cost();
        fd_gradient4(
            |y| {
                let curvature = (cost.hessian(y, z) * sigma).trace();
                let mismatch = model.drift_jacobian(t, y)? - ak;
                let energy = (p * &mismatch * sigma * mismatch.transpose()).trace();
                Ok(curvature + energy)
            },
            z,
            trace_step(z, fd_step),
        )
    })
}

/// Proximal subproblem around iterate `dynamics` with moments `moments`.
#[allow(clippy::too_many_arguments)]
pub fn build_subproblem(
    model: &NonlinearModel,
    dynamics: &AffineDynamics,
    moments: &MomentTrajectory,
    prior: &Linearization,
    input: &TimeIndexedMatrix,
    eta: f64,
    initial: &GaussianMarginal,
    terminal: &GaussianMarginal,
    fd_step: Option<f64>,
) -> Result<LinearSteeringProblem> {
    let grid = *dynamics.grid();
    if *moments.grid() != grid || *prior.a.grid() != grid || *input.grid() != grid {
        return Err(Error::InvalidConfig("subproblem inputs on different grids".into()));
    }
    let w = trace_gradient_terms(model, &dynamics.a, input, moments, fd_step)?;
    let pinv = noise_pinv(input)?;
    let mix = 1.0 / (1.0 + eta);
    let c1 = eta * mix;
    let c2 = eta * mix * mix;
    let cost = model.cost();

    let a = dynamics
        .a
        .map(|k, ak| (ak + prior.a.sample(k) * eta) * mix);
    let offset = dynamics
        .offset
        .map(|k, ak| (ak + prior.offset.sample(k) * eta) * mix);
    let mut weight = Vec::with_capacity(grid.n_samples());
    let mut linear = Vec::with_capacity(grid.n_samples());
    for k in 0..grid.n_samples() {
        let z = moments.mean.sample(k);
        let hess = cost.hessian(z, z);
        let grad = cost.gradient(z, z);
        let da = dynamics.a.sample(k) - prior.a.sample(k);
        let doff = dynamics.offset.sample(k) - prior.offset.sample(k);
        let da_p = da.transpose() * pinv.sample(k);
        weight.push(symmetrize(&(&hess * c1 + &da_p * &da * c2)));
        linear.push(
            grad * c1 + (w.sample(k) - &hess * z * 2.0) * (0.5 * c1) + da_p * doff * c2,
        );
    }
    LinearSteeringProblem::new(
        a,
        offset,
        input.clone(),
        TimeSeries::from_samples(grid, weight)?,
        TimeSeries::from_samples(grid, linear)?,
        model.eps(),
        initial.clone(),
        terminal.clone(),
    )
}

/// `A_{k+1} = (A_k + ηÂ)/(1+η) + G K`, `a_{k+1} = (a_k + ηâ)/(1+η) + G d`,
/// where `G` is the input matrix the subproblem was solved with.
pub fn prox_update(
    dynamics: &AffineDynamics,
    prior: &Linearization,
    policy: &AffinePolicy,
    eta: f64,
    input: &TimeIndexedMatrix,
) -> Result<AffineDynamics> {
    let mix = 1.0 / (1.0 + eta);
    AffineDynamics::new(
        dynamics.a.map(|k, ak| {
            (ak + prior.a.sample(k) * eta) * mix + input.sample(k) * policy.gain.sample(k)
        }),
        dynamics.offset.map(|k, ak| {
            (ak + prior.offset.sample(k) * eta) * mix
                + input.sample(k) * policy.feedforward.sample(k)
        }),
        input.clone(),
    )
}

/// Expected state cost plus control energy of an iterate relative to the
/// linearized prior, by Simpson quadrature over the samples.
pub fn objective(
    model: &NonlinearModel,
    dynamics: &AffineDynamics,
    moments: &MomentTrajectory,
    prior: &Linearization,
) -> Result<f64> {
    let pinv = noise_pinv(&dynamics.input)?;
    let cost = model.cost();
    let density = TimeSeries::try_from_fn(*dynamics.grid(), |k, _| {
        let z = moments.mean.sample(k);
        let sigma = moments.cov.sample(k);
        let state = cost.value(z, z) + 0.5 * (cost.hessian(z, z) * sigma).trace();
        let da = dynamics.a.sample(k) - prior.a.sample(k);
        let drift_gap = &da * z + dynamics.offset.sample(k) - prior.offset.sample(k);
        let p = pinv.sample(k);
        let energy = drift_gap.dot(&(p * &drift_gap)) + (da.transpose() * p * &da * sigma).trace();
        Ok::<_, Error>(state + 0.5 * energy)
    })?;
    Ok(integrate_series(&density))
}

/// Mean over grid nodes of the relative change in `A` and `a`.
pub fn stopping_statistic(prev: &AffineDynamics, next: &AffineDynamics) -> f64 {
    let n_nodes = prev.grid().n_nodes();
    let total: f64 = prev
        .a
        .nodes()
        .zip(next.a.nodes())
        .zip(prev.offset.nodes().zip(next.offset.nodes()))
        .map(|((a0, a1), (o0, o1))| {
            (a1 - a0).norm() / (1.0 + a0.norm()) + (o1 - o0).norm() / (1.0 + o0.norm())
        })
        .sum();
    total / n_nodes as f64
}

/// Starting iterate per `config.init_mode`.
pub fn initial_iterate(
    model: &NonlinearModel,
    initial: &GaussianMarginal,
    config: &SolverConfig,
) -> Result<AffineDynamics> {
    let grid = config.grid;
    let n = model.state_dim();
    match config.init_mode {
        InitMode::ZeroPrior => {
            let mean = TimeSeries::constant(grid, initial.mean().clone());
            AffineDynamics::new(
                TimeSeries::constant(grid, DMatrix::zeros(n, n)),
                TimeSeries::constant(grid, DVector::zeros(n)),
                input_along(model, &mean)?,
            )
        }
        InitMode::LinearizedPrior => {
            let mut failure = None;
            let rollout = integrate_dense(
                &grid,
                initial.mean().clone(),
                Direction::Forward,
                |_, t, z: &DVector<f64>| match model.drift(t, z) {
                    Ok(f) => f,
                    Err(e) => {
                        failure.get_or_insert(e);
                        DVector::from_element(z.len(), f64::NAN)
                    }
                },
            );
            if let Some(e) = failure {
                return Err(e);
            }
            let rollout = rollout?;
            let prior = linearize_prior(model, &rollout)?;
            AffineDynamics::new(prior.a, prior.offset, input_along(model, &rollout)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveReport {
    /// Number of proximal updates performed.
    pub iterations: usize,
    /// Objective of every feasible iterate, starting with the first update.
    pub objective: Vec<f64>,
    /// Stopping statistic after each update.
    pub stopping: Vec<f64>,
    /// Relative terminal mean residual of every feasible iterate.
    pub mean_residual: Vec<f64>,
    /// Relative terminal covariance residual of every feasible iterate.
    pub cov_residual: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub dynamics: AffineDynamics,
    pub moments: MomentTrajectory,
    pub report: SolveReport,
}

/// Failure of the outer loop, with the last iterate that was feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveFailure {
    pub iteration: usize,
    pub error: Error,
    pub last_feasible: Option<AffineDynamics>,
    pub report: SolveReport,
}

impl core::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "iteration {}: {}", self.iteration, self.error)
    }
}

impl core::error::Error for SolveFailure {}

fn check_marginals(
    model: &NonlinearModel,
    initial: &GaussianMarginal,
    terminal: &GaussianMarginal,
) -> Result<()> {
    let n = model.state_dim();
    for (what, m) in [("initial marginal", initial), ("terminal marginal", terminal)] {
        if m.dim() != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: (n, n),
                found: (m.dim(), m.dim()),
            });
        }
    }
    Ok(())
}

/// Runs the proximal iteration from the starting iterate chosen by
/// `config.init_mode`.
pub fn solve(
    model: &NonlinearModel,
    initial: &GaussianMarginal,
    terminal: &GaussianMarginal,
    config: &SolverConfig,
) -> core::result::Result<SolveOutcome, SolveFailure> {
    let start = config
        .validate()
        .and_then(|_| check_marginals(model, initial, terminal))
        .and_then(|_| initial_iterate(model, initial, config));
    match start {
        Ok(start) => solve_from(model, initial, terminal, config, start),
        Err(error) => Err(SolveFailure {
            iteration: 0,
            error,
            last_feasible: None,
            report: SolveReport::default(),
        }),
    }
}

/// Runs the proximal iteration from a given starting iterate.
pub fn solve_from(
    model: &NonlinearModel,
    initial: &GaussianMarginal,
    terminal: &GaussianMarginal,
    config: &SolverConfig,
    start: AffineDynamics,
) -> core::result::Result<SolveOutcome, SolveFailure> {
    let mut report = SolveReport::default();
    let mut last_feasible: Option<AffineDynamics> = None;
    let mut dynamics = start;
    let fail = |iteration, error, last_feasible, report| SolveFailure {
        iteration,
        error,
        last_feasible,
        report,
    };
    if let Err(e) = config.validate().and_then(|_| check_marginals(model, initial, terminal)) {
        return Err(fail(0, e, None, report));
    }
    if *dynamics.grid() != config.grid || dynamics.state_dim() != model.state_dim() {
        let e = Error::InvalidConfig("starting iterate does not match grid or model".into());
        return Err(fail(0, e, None, report));
    }

    let mut iteration = 0;
    loop {
        let step = (|| {
            let moments = propagate_moments(&dynamics, model.eps(), initial)?;
            let prior = linearize_prior(model, &moments.mean)?;
            Ok::<_, Error>((moments, prior))
        })();
        let (moments, prior) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(iteration, e, last_feasible, report)),
        };
        if iteration > 0 {
            let (mr, cr) = moments.terminal_residuals(terminal);
            report.mean_residual.push(mr);
            report.cov_residual.push(cr);
            match objective(model, &dynamics, &moments, &prior) {
                Ok(j) => report.objective.push(j),
                Err(e) => return Err(fail(iteration, e, last_feasible, report)),
            }
            last_feasible = Some(dynamics.clone());
        }
        let finished = report.converged || iteration >= config.max_iters;
        if finished {
            report.iterations = iteration;
            return Ok(SolveOutcome {
                dynamics,
                moments,
                report,
            });
        }

        let update = (|| {
            let input = input_along(model, &moments.mean)?;
            let problem = build_subproblem(
                model,
                &dynamics,
                &moments,
                &prior,
                &input,
                config.eta,
                initial,
                terminal,
                config.fd_step,
            )?;
            let solution = solve_linear_steering(&problem, &config.tolerances)?;
            prox_update(&dynamics, &prior, &solution.policy, config.eta, &input)
        })();
        iteration += 1;
        let next = match update {
            Ok(next) => next,
            Err(e) => return Err(fail(iteration, e, last_feasible, report)),
        };
        let stat = stopping_statistic(&dynamics, &next);
        report.stopping.push(stat);
        report.converged = stat < config.conv_tol;
        dynamics = next;
    }
}

/// Solves the linear steering problem obtained by linearizing the prior and
/// the state cost along the moments of a converged iterate. The returned
/// policy acts on the original nonlinear system.
pub fn retrieve_policy(
    model: &NonlinearModel,
    dynamics: &AffineDynamics,
    initial: &GaussianMarginal,
    terminal: &GaussianMarginal,
    config: &SolverConfig,
) -> Result<LinearSteeringSolution> {
    let moments = propagate_moments(dynamics, model.eps(), initial)?;
    let (mr, cr) = moments.terminal_residuals(terminal);
    let residual = mr.max(cr);
    if !(residual <= STALE_TOLERANCE) {
        return Err(Error::StaleIterate {
            residual,
            tolerance: STALE_TOLERANCE,
        });
    }
    let prior = linearize_prior(model, &moments.mean)?;
    let input = input_along(model, &moments.mean)?;
    let w = trace_gradient_terms(model, &prior.a, &input, &moments, config.fd_step)?;
    let cost = model.cost();
    let weight = moments.mean.map(|_, z| symmetrize(&cost.hessian(z, z)));
    let linear = moments.mean.map(|k, z| {
        let hess = weight.sample(k);
        cost.gradient(z, z) - hess * z + w.sample(k) * 0.5
    });
    let problem = LinearSteeringProblem::new(
        prior.a,
        prior.offset,
        input,
        weight,
        linear,
        model.eps(),
        initial.clone(),
        terminal.clone(),
    )?;
    solve_linear_steering(&problem, &config.tolerances)
}
