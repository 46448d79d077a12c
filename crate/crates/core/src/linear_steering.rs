//! Linear covariance steering with drift and a linear-plus-quadratic state
//! cost:
//!
//! ```text
//! minimize  E ∫ ½‖u‖² + ½ XᵀQ X + Xᵀr dt
//! subject   dX = (A X + a + B u) dt + √ε B dW,  X(t0) ~ N(m0, Σ0),  X(t1) ~ N(m1, Σ1)
//! ```
//!
//! The covariance part is solved by the closed-form initial value of the
//! Riccati equation, the mean part by the Hamiltonian two-point boundary
//! value problem. The optimal policy is `u = K X + d`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss_markov::{propagate_moments, AffineDynamics, MomentTrajectory};
use crate::models::GaussianMarginal;
use crate::numerics::{
    guarded_inverse, integrate_dense, integrate_series, inv_sqrtm_spd, spd_inverse, sqrtm_spd,
    symmetrize, Direction, TimeGrid, TimeIndexedMatrix, TimeIndexedVector, TimeSeries,
};

/// Relative tolerances on the terminal moments of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringTolerances {
    /// Mean residual bound is `mean * (1 + ‖m1‖)`.
    pub mean: f64,
    /// Bound on `‖Σ(t1) − Σ1‖_F / ‖Σ1‖_F`.
    pub cov: f64,
}

impl Default for SteeringTolerances {
    fn default() -> Self {
        Self {
            mean: 1e-6,
            cov: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSteeringProblem {
    pub a: TimeIndexedMatrix,
    pub offset: TimeIndexedVector,
    pub input: TimeIndexedMatrix,
    pub state_weight: TimeIndexedMatrix,
    pub state_linear: TimeIndexedVector,
    pub eps: f64,
    pub initial: GaussianMarginal,
    pub terminal: GaussianMarginal,
}

impl LinearSteeringProblem {
    /// Validates dimensions and symmetrizes the state weight at every sample.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: TimeIndexedMatrix,
        offset: TimeIndexedVector,
        input: TimeIndexedMatrix,
        state_weight: TimeIndexedMatrix,
        state_linear: TimeIndexedVector,
        eps: f64,
        initial: GaussianMarginal,
        terminal: GaussianMarginal,
    ) -> Result<Self> {
        let grid = *a.grid();
        let n = a.first().nrows();
        let p = input.first().ncols();
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "noise intensity must be positive, got {eps}"
            )));
        }
        let same_grid = [offset.grid(), input.grid(), state_weight.grid(), state_linear.grid()]
            .iter()
            .all(|g| **g == grid);
        if !same_grid {
            return Err(Error::InvalidConfig("coefficients on different grids".into()));
        }
        let check = |ok: bool, what: &'static str, found: (usize, usize)| {
            if ok {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    what,
                    expected: (n, n),
                    found,
                })
            }
        };
        check(
            a.samples().iter().all(|m| m.shape() == (n, n)),
            "drift matrix",
            a.first().shape(),
        )?;
        check(
            offset.samples().iter().all(|v| v.len() == n),
            "drift offset",
            (offset.first().len(), 1),
        )?;
        check(
            input.samples().iter().all(|m| m.shape() == (n, p)),
            "input matrix",
            input.first().shape(),
        )?;
        check(
            state_weight.samples().iter().all(|m| m.shape() == (n, n)),
            "state weight",
            state_weight.first().shape(),
        )?;
        check(
            state_linear.samples().iter().all(|v| v.len() == n),
            "linear state cost",
            (state_linear.first().len(), 1),
        )?;
        check(initial.dim() == n, "initial marginal", (initial.dim(), initial.dim()))?;
        check(terminal.dim() == n, "terminal marginal", (terminal.dim(), terminal.dim()))?;
        let state_weight = state_weight.map(|_, q| symmetrize(q));
        Ok(Self {
            a,
            offset,
            input,
            state_weight,
            state_linear,
            eps,
            initial,
            terminal,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.a.grid()
    }

    pub fn state_dim(&self) -> usize {
        self.a.first().nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.input.first().ncols()
    }
}

/// Hamiltonian matrix `[[A, −BBᵀ], [−Q, −Aᵀ]]` at every sample.
fn hamiltonian_series(
    a: &TimeIndexedMatrix,
    input: &TimeIndexedMatrix,
    state_weight: &TimeIndexedMatrix,
) -> TimeIndexedMatrix {
    a.map(|k, ak| {
        let n = ak.nrows();
        let b = input.sample(k);
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(ak);
        m.view_mut((0, n), (n, n)).copy_from(&(-(b * b.transpose())));
        m.view_mut((n, 0), (n, n)).copy_from(&(-state_weight.sample(k)));
        m.view_mut((n, n), (n, n)).copy_from(&(-ak.transpose()));
        m
    })
}

/// Blocks of the Hamiltonian transition matrix over the whole horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBlocks {
    pub phi11: DMatrix<f64>,
    pub phi12: DMatrix<f64>,
    pub phi21: DMatrix<f64>,
    pub phi22: DMatrix<f64>,
    /// Transition from every sample time to the final time.
    pub to_end: TimeIndexedMatrix,
}

impl TransitionBlocks {
    pub fn full(&self) -> &DMatrix<f64> {
        self.to_end.first()
    }
}

/// Integrates `dΨ/dτ = −Ψ M(τ)` backward from `Ψ(t1) = I`, so that
/// `Ψ(τ)` is the transition from `τ` to `t1`.
pub fn transition_blocks(
    a: &TimeIndexedMatrix,
    input: &TimeIndexedMatrix,
    state_weight: &TimeIndexedMatrix,
) -> Result<TransitionBlocks> {
    let m = hamiltonian_series(a, input, state_weight);
    transition_from_hamiltonian(&m)
}

fn transition_from_hamiltonian(m: &TimeIndexedMatrix) -> Result<TransitionBlocks> {
    let dim = m.first().nrows();
    let n = dim / 2;
    let to_end = integrate_dense(
        m.grid(),
        DMatrix::identity(dim, dim),
        Direction::Backward,
        |k, _, psi: &DMatrix<f64>| -(psi * m.sample(k)),
    )?;
    let full = to_end.first();
    Ok(TransitionBlocks {
        phi11: full.view((0, 0), (n, n)).into_owned(),
        phi12: full.view((0, n), (n, n)).into_owned(),
        phi21: full.view((n, 0), (n, n)).into_owned(),
        phi22: full.view((n, n), (n, n)).into_owned(),
        to_end,
    })
}

/// Closed-form initial values `(Π(t0), H(t0))` of the coupled Riccati
/// equations that steer `Σ0` to `Σ1`.
pub fn riccati_boundary_init(
    sigma0: &DMatrix<f64>,
    sigma1: &DMatrix<f64>,
    eps: f64,
    phi11: &DMatrix<f64>,
    phi12: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let phi12_inv = guarded_inverse(phi12, "transition block Phi12")?;
    boundary_from_parts(
        sigma0,
        eps,
        &(-(&phi12_inv * phi11)),
        &(&phi12_inv * sigma1 * phi12_inv.transpose()),
    )
}

/// `Π(t0) = G + εΣ0⁻¹/2 − Σ0^{-1/2}(ε²/4 I + Σ0^{1/2} C Σ0^{1/2})^{1/2}Σ0^{-1/2}`
/// with `G = −Φ12⁻¹Φ11` and `C = Φ12⁻¹Σ1Φ12⁻ᵀ`.
fn boundary_from_parts(
    sigma0: &DMatrix<f64>,
    eps: f64,
    coupling: &DMatrix<f64>,
    transported: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = sigma0.nrows();
    let s0_inv = spd_inverse(sigma0, "initial covariance")?;
    let s0_half = sqrtm_spd(sigma0)?;
    let s0_inv_half = inv_sqrtm_spd(sigma0)?;
    let inner = DMatrix::<f64>::identity(n, n) * (eps * eps / 4.0)
        + &s0_half * transported * &s0_half;
    let inner_root = sqrtm_spd(&symmetrize(&inner))?;
    let pi0 = &s0_inv * (eps / 2.0) + coupling - &s0_inv_half * inner_root * &s0_inv_half;
    let pi0 = symmetrize(&pi0);
    let h0 = &s0_inv * eps - &pi0;
    Ok((pi0, h0))
}

/// Integrates `−Π̇ = AᵀΠ + ΠA − ΠBBᵀΠ + Q` forward from `Π(t0) = pi0`.
pub fn integrate_riccati(
    pi0: &DMatrix<f64>,
    a: &TimeIndexedMatrix,
    input: &TimeIndexedMatrix,
    state_weight: &TimeIndexedMatrix,
) -> Result<TimeIndexedMatrix> {
    integrate_coupled(pi0, a, input, state_weight, -1.0, 1.0, Direction::Forward)
}

/// Same equation as [`integrate_riccati`], marched backward from `Π(t1) = pi1`.
pub fn integrate_riccati_backward(
    pi1: &DMatrix<f64>,
    a: &TimeIndexedMatrix,
    input: &TimeIndexedMatrix,
    state_weight: &TimeIndexedMatrix,
) -> Result<TimeIndexedMatrix> {
    integrate_coupled(pi1, a, input, state_weight, -1.0, 1.0, Direction::Backward)
}

/// Integrates the companion equation `−Ḣ = AᵀH + HA + HBBᵀH − Q` forward.
pub fn integrate_companion(
    h0: &DMatrix<f64>,
    a: &TimeIndexedMatrix,
    input: &TimeIndexedMatrix,
    state_weight: &TimeIndexedMatrix,
) -> Result<TimeIndexedMatrix> {
    integrate_coupled(h0, a, input, state_weight, 1.0, -1.0, Direction::Forward)
}

fn integrate_coupled(
    init: &DMatrix<f64>,
    a: &TimeIndexedMatrix,
    input: &TimeIndexedMatrix,
    state_weight: &TimeIndexedMatrix,
    quad_sign: f64,
    weight_sign: f64,
    direction: Direction,
) -> Result<TimeIndexedMatrix> {
    let bbt = input.map(|_, b| b * b.transpose());
    let sol = integrate_dense(
        a.grid(),
        symmetrize(init),
        direction,
        |k, _, p: &DMatrix<f64>| {
            let pa = p * a.sample(k);
            -(pa.transpose() + &pa + p * bbt.sample(k) * p * quad_sign
                + state_weight.sample(k) * weight_sign)
        },
    )?;
    Ok(sol.map(|_, p| symmetrize(p)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub pi: TimeIndexedMatrix,
    pub h: TimeIndexedMatrix,
}

impl RiccatiSolution {
    /// `‖Π(t1) + H(t1) − εΣ1⁻¹‖_F / ‖εΣ1⁻¹‖_F`
    pub fn terminal_identity_residual(&self, eps: f64, sigma1: &DMatrix<f64>) -> Result<f64> {
        let target = spd_inverse(sigma1, "terminal covariance")? * eps;
        Ok((self.pi.last() + self.h.last() - &target).norm() / target.norm())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanSolution {
    pub x_star: TimeIndexedVector,
    pub v_star: TimeIndexedVector,
    pub costate: TimeIndexedVector,
    pub initial_costate: DVector<f64>,
}

/// Solves the mean two-point boundary value problem
/// `ẋ = Ax − BBᵀλ + a`, `λ̇ = −Qx − Aᵀλ − r`, `x(t0) = m0`, `x(t1) = m1`.
#[allow(clippy::too_many_arguments)]
pub fn solve_mean(
    a: &TimeIndexedMatrix,
    offset: &TimeIndexedVector,
    input: &TimeIndexedMatrix,
    state_weight: &TimeIndexedMatrix,
    state_linear: &TimeIndexedVector,
    m0: &DVector<f64>,
    m1: &DVector<f64>,
    blocks: &TransitionBlocks,
    mean_tol: f64,
) -> Result<MeanSolution> {
    let n = m0.len();
    let forcing = offset.map(|k, ak| {
        let mut f = DVector::zeros(2 * n);
        f.rows_mut(0, n).copy_from(ak);
        f.rows_mut(n, n).copy_from(&(-state_linear.sample(k)));
        f
    });
    let accumulated = integrate_series(&blocks.to_end.map(|k, psi| {
        psi.view((0, 0), (n, 2 * n)) * forcing.sample(k)
    }));
    let phi12_inv = guarded_inverse(&blocks.phi12, "transition block Phi12")?;
    let lambda0 = &phi12_inv * (m1 - &blocks.phi11 * m0 - accumulated);

    let m = hamiltonian_series(a, input, state_weight);
    let mut y0 = DVector::zeros(2 * n);
    y0.rows_mut(0, n).copy_from(m0);
    y0.rows_mut(n, n).copy_from(&lambda0);
    let traj = integrate_dense(a.grid(), y0, Direction::Forward, |k, _, y: &DVector<f64>| {
        m.sample(k) * y + forcing.sample(k)
    })?;
    let grid = *a.grid();
    let x_star = traj.map(|_, y| y.rows(0, n).into_owned());
    let costate = traj.map(|_, y| y.rows(n, n).into_owned());
    let v_star = costate.map(|k, l| -(input.sample(k).transpose() * l));

    let residual = (x_star.last() - m1).norm();
    let tolerance = mean_tol * (1.0 + m1.norm());
    if !(residual <= tolerance) {
        return Err(Error::ShootingResidual {
            residual,
            tolerance,
        });
    }
    debug_assert_eq!(*x_star.grid(), grid);
    Ok(MeanSolution {
        x_star,
        v_star,
        costate,
        initial_costate: lambda0,
    })
}

/// Time-varying affine feedback `u = K(t) x + d(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    pub gain: TimeIndexedMatrix,
    pub feedforward: TimeIndexedVector,
}

impl AffinePolicy {
    pub fn new(gain: TimeIndexedMatrix, feedforward: TimeIndexedVector) -> Result<Self> {
        let (p, n) = gain.first().shape();
        let ok = gain.grid() == feedforward.grid()
            && gain.samples().iter().all(|k| k.shape() == (p, n))
            && feedforward.samples().iter().all(|d| d.len() == p);
        if !ok {
            return Err(Error::DimensionMismatch {
                what: "affine policy",
                expected: (p, n),
                found: (feedforward.first().len(), 1),
            });
        }
        let finite = gain.samples().iter().all(|k| k.iter().all(|v| v.is_finite()))
            && feedforward.samples().iter().all(|d| d.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFiniteEvaluation { at: Vec::new() });
        }
        Ok(Self { gain, feedforward })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.gain.grid()
    }

    pub fn state_dim(&self) -> usize {
        self.gain.first().ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.gain.first().nrows()
    }

    /// Control at sample `k`.
    pub fn control(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        self.gain.sample(k) * x + self.feedforward.sample(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSteeringSolution {
    pub policy: AffinePolicy,
    pub riccati: RiccatiSolution,
    pub mean: MeanSolution,
    /// Moments of the closed loop `A + BK`, `a + Bd`.
    pub closed_loop: MomentTrajectory,
}

impl LinearSteeringSolution {
    /// Expected cost `∫ E[½‖u‖² + ½XᵀQX + Xᵀr] dt` of the closed loop, by
    /// Simpson quadrature.
    pub fn expected_cost(&self, problem: &LinearSteeringProblem) -> f64 {
        let z = &self.closed_loop.mean;
        let s = &self.closed_loop.cov;
        let density = z.map(|k, zk| {
            let gain = self.policy.gain.sample(k);
            let u = self.policy.control(k, zk);
            let q = problem.state_weight.sample(k);
            0.5 * (u.norm_squared() + (gain * s.sample(k) * gain.transpose()).trace())
                + 0.5 * (zk.dot(&(q * zk)) + (q * s.sample(k)).trace())
                + zk.dot(problem.state_linear.sample(k))
        });
        integrate_series(&density)
    }
}

/// Hamiltonian flow carried in from one end of the horizon. With `Ψ(t)` the
/// transition from `t` to that end, `gramian = −Ψ11⁻¹Ψ12`,
/// `cov = Ψ11⁻¹ S Ψ11⁻ᵀ` for the end covariance `S`, and `mean` the end mean
/// pulled back through the affine flow. These obey Riccati and Lyapunov
/// equations that stay bounded where `Ψ` itself grows exponentially.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub gramian: TimeIndexedMatrix,
    pub cov: TimeIndexedMatrix,
    pub mean: TimeIndexedVector,
}

/// `Ẋ = AX + XAᵀ − BBᵀ + XQX`, `Ẏ = (A+XQ)Y + Y(A+XQ)ᵀ`,
/// `v̇ = (A+XQ)v + a + Xr`, started at `(0, S, m)` of the end the sweep
/// leaves from: `Σ1, m1` for [`Direction::Backward`], `Σ0, m0` otherwise.
pub fn sweep(problem: &LinearSteeringProblem, direction: Direction) -> Result<Sweep> {
    let n = problem.state_dim();
    let end = match direction {
        Direction::Forward => &problem.initial,
        Direction::Backward => &problem.terminal,
    };
    let bbt = problem.input.map(|_, b| b * b.transpose());
    let traj = integrate_dense(
        problem.grid(),
        ((DMatrix::zeros(n, n), end.cov().clone()), end.mean().clone()),
        direction,
        |k, _, ((x, y), v): &((DMatrix<f64>, DMatrix<f64>), DVector<f64>)| {
            let a = problem.a.sample(k);
            let xq = x * problem.state_weight.sample(k);
            let ax = a * x;
            let loop_ = a + &xq;
            let ly = &loop_ * y;
            (
                (
                    &ax + ax.transpose() - bbt.sample(k) + &xq * x,
                    &ly + ly.transpose(),
                ),
                &loop_ * v + problem.offset.sample(k) + x * problem.state_linear.sample(k),
            )
        },
    )?;
    let gramian = traj.map(|_, ((x, _), _)| symmetrize(x));
    let cov = traj.map(|_, ((_, y), _)| symmetrize(y));
    let mean = traj.map(|_, (_, v)| v.clone());
    Ok(Sweep { gramian, cov, mean })
}

/// Mean solution from the two sweeps: at every sample the costate satisfies
/// `x = v + Xλ` for both, so `λ = (X − X̃)⁻¹(ṽ − v)` with no shooting.
fn mean_from_sweeps(
    problem: &LinearSteeringProblem,
    backward: &Sweep,
    forward: &Sweep,
) -> Result<MeanSolution> {
    let grid = *problem.grid();
    let half = grid.n_samples() / 2;
    let mut x_star = Vec::with_capacity(grid.n_samples());
    let mut costate = Vec::with_capacity(grid.n_samples());
    for k in 0..grid.n_samples() {
        let (xb, xf) = (backward.gramian.sample(k), forward.gramian.sample(k));
        let (vb, vf) = (backward.mean.sample(k), forward.mean.sample(k));
        let lambda = symmetrize(&(xb - xf))
            .cholesky()
            .ok_or(Error::NotPositiveDefinite {
                what: "sweep gramian difference",
                eigenvalue: crate::numerics::linalg::min_eigenvalue(&(xb - xf)),
            })?
            .solve(&(vf - vb));
        // Each end is reproduced exactly by the sweep that starts there.
        let x = if k < half { vf + xf * &lambda } else { vb + xb * &lambda };
        x_star.push(x);
        costate.push(lambda);
    }
    let x_star = TimeSeries::from_samples(grid, x_star)?;
    let costate = TimeSeries::from_samples(grid, costate)?;
    let v_star = costate.map(|k, l| -(problem.input.sample(k).transpose() * l));
    Ok(MeanSolution {
        x_star,
        v_star,
        initial_costate: costate.first().clone(),
        costate,
    })
}

/// Solves the problem and verifies the closed loop reaches the terminal
/// marginal.
///
/// `Π(t0)` comes from the closed form with the transition blocks replaced by
/// their sweep equivalents (`−Φ12⁻¹Φ11 = X⁻¹`, `Φ12⁻¹Σ1Φ12⁻ᵀ = X⁻¹YX⁻¹`). `H` is
/// then integrated forward and `Π` backward from `εΣ1⁻¹ − H(t1)`, the
/// directions in which each is stable.
pub fn solve_linear_steering(
    problem: &LinearSteeringProblem,
    tolerances: &SteeringTolerances,
) -> Result<LinearSteeringSolution> {
    let backward = sweep(problem, Direction::Backward)?;
    let forward = sweep(problem, Direction::Forward)?;
    let gramian_inv = guarded_inverse(backward.gramian.first(), "Hamiltonian gramian")?;
    let (_, h0) = boundary_from_parts(
        problem.initial.cov(),
        problem.eps,
        &gramian_inv,
        &(&gramian_inv * backward.cov.first() * &gramian_inv),
    )?;
    let h = integrate_companion(&h0, &problem.a, &problem.input, &problem.state_weight)?;
    let pi1 = spd_inverse(problem.terminal.cov(), "terminal covariance")? * problem.eps - h.last();
    let pi = integrate_riccati_backward(&pi1, &problem.a, &problem.input, &problem.state_weight)?;
    let mean = mean_from_sweeps(problem, &backward, &forward)?;

    let gain = pi.map(|k, p| -(problem.input.sample(k).transpose() * p));
    let feedforward = pi.map(|k, p| {
        problem.input.sample(k).transpose() * p * mean.x_star.sample(k) + mean.v_star.sample(k)
    });
    let policy = AffinePolicy::new(gain, feedforward)?;

    let closed = AffineDynamics::new(
        problem
            .a
            .map(|k, a| a + problem.input.sample(k) * policy.gain.sample(k)),
        problem
            .offset
            .map(|k, a| a + problem.input.sample(k) * policy.feedforward.sample(k)),
        problem.input.clone(),
    )?;
    let closed_loop = propagate_moments(&closed, problem.eps, &problem.initial)?;
    let (mean_res, cov_res) = closed_loop.terminal_residuals(&problem.terminal);
    if !(mean_res <= tolerances.mean) {
        return Err(Error::SteeringResidual {
            what: "mean",
            residual: mean_res,
            tolerance: tolerances.mean,
        });
    }
    if !(cov_res <= tolerances.cov) {
        return Err(Error::SteeringResidual {
            what: "covariance",
            residual: cov_res,
            tolerance: tolerances.cov,
        });
    }
    Ok(LinearSteeringSolution {
        policy,
        riccati: RiccatiSolution { pi, h },
        mean,
        closed_loop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant<T: Clone>(grid: TimeGrid, v: T) -> TimeSeries<T> {
        TimeSeries::constant(grid, v)
    }

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn vector(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    /// Dense matrix exponential by scaling and squaring of a Taylor series.
    fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let norm = m.norm();
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
        let scaled = m / 2f64.powi(squarings as i32);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for j in 1..30 {
            term = &term * &scaled / j as f64;
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[allow(clippy::too_many_arguments)]
    fn lti_problem(
        grid: TimeGrid,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        eps: f64,
        m0: DVector<f64>,
        s0: DMatrix<f64>,
        m1: DVector<f64>,
        s1: DMatrix<f64>,
    ) -> LinearSteeringProblem {
        let n = a.nrows();
        LinearSteeringProblem::new(
            constant(grid, a),
            constant(grid, DVector::zeros(n)),
            constant(grid, b),
            constant(grid, q),
            constant(grid, DVector::zeros(n)),
            eps,
            GaussianMarginal::new(m0, s0).unwrap(),
            GaussianMarginal::new(m1, s1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn nilpotent_hamiltonian_blocks() {
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let i2 = DMatrix::<f64>::identity(2, 2);
        let z2 = DMatrix::<f64>::zeros(2, 2);
        let blocks =
            transition_blocks(&constant(grid, z2.clone()), &constant(grid, i2.clone()), &constant(grid, z2.clone()))
                .unwrap();
        assert!((&blocks.phi11 - &i2).amax() < 1e-14);
        assert!((&blocks.phi12 + &i2).amax() < 1e-14);
        assert!(blocks.phi21.amax() < 1e-14);
        assert!((&blocks.phi22 - &i2).amax() < 1e-14);
    }

    #[test]
    fn blocks_match_matrix_exponential() {
        let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let one = mat(1, 1, &[1.0]);
        let blocks = transition_blocks(
            &constant(grid, one.clone()),
            &constant(grid, one.clone()),
            &constant(grid, one),
        )
        .unwrap();
        let expected = expm(&mat(2, 2, &[1.0, -1.0, -1.0, -1.0]));
        assert!((blocks.full() - expected).amax() < 1e-9);
    }

    #[test]
    fn transition_group_property() {
        // Time-varying drift so that the property is not trivially commutative.
        let grid = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let a = TimeSeries::from_fn(grid, |_, t| mat(2, 2, &[0.0, 1.0 + t, -t * t, 0.3]));
        let b = constant(grid, mat(2, 1, &[0.0, 1.0]));
        let q = TimeSeries::from_fn(grid, |_, t| mat(2, 2, &[1.0 + t, 0.0, 0.0, 0.5]));
        let blocks = transition_blocks(&a, &b, &q).unwrap();
        // Φ(1,0) = Φ(1,½) Φ(½,0) and Φ(½,0) = Φ(1,½)⁻¹ Φ(1,0) must equal a
        // forward integration of Φ̇ = MΦ on the first half.
        let m = hamiltonian_series(&a, &b, &q);
        let forward = integrate_dense(&grid, DMatrix::<f64>::identity(4, 4), Direction::Forward, |k, _, y: &DMatrix<f64>| {
            m.sample(k) * y
        })
        .unwrap();
        let half = grid.n_steps(); // sample index of t = ½
        let composed = blocks.to_end.sample(half) * forward.sample(half);
        assert!((composed - blocks.full()).amax() < 1e-8);
        assert!((forward.last() - blocks.full()).amax() < 1e-8);
    }

    #[test]
    fn scalar_boundary_value() {
        let (pi0, h0) =
            riccati_boundary_init(&mat(1, 1, &[1.0]), &mat(1, 1, &[1.0]), 2.0, &mat(1, 1, &[1.0]), &mat(1, 1, &[-1.0]))
                .unwrap();
        assert!((pi0[(0, 0)] - (2.0 - 2f64.sqrt())).abs() < 1e-14);
        assert!((pi0[(0, 0)] + h0[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_boundary_value_steers_covariance() {
        // Closed loop Σ̇ = −2ΠΣ + ε with Π = π0/(1−π0 t) must return to Σ = 1.
        let pi0 = 2.0 - 2f64.sqrt();
        let grid = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let pi = |t: f64| pi0 / (1.0 - pi0 * t);
        let s = integrate_dense(&grid, 1.0f64, Direction::Forward, |_, t, s: &f64| -2.0 * pi(t) * s + 2.0).unwrap();
        assert!((s.last() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn boundary_value_steers_double_integrator_covariance() {
        let grid = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let problem = lti_problem(
            grid,
            mat(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            mat(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(2, 2),
            1.0,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        );
        let sol = solve_linear_steering(&problem, &SteeringTolerances::default()).unwrap();
        let s1 = sol.closed_loop.cov.last();
        assert!((s1 - DMatrix::<f64>::identity(2, 2)).amax() < 1e-6);
    }

    #[test]
    fn riccati_zero_is_fixed() {
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let pi = integrate_riccati(
            &DMatrix::zeros(2, 2),
            &constant(grid, mat(2, 2, &[0.0, 1.0, -1.0, 0.0])),
            &constant(grid, DMatrix::identity(2, 2)),
            &constant(grid, DMatrix::zeros(2, 2)),
        )
        .unwrap();
        assert!(pi.samples().iter().all(|p| p.amax() == 0.0));
    }

    #[test]
    fn scalar_riccati_matches_closed_form() {
        // −Π̇ = −Π² has Π = π0/(1 − π0 t).
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let pi0 = 0.5;
        let pi = integrate_riccati(
            &mat(1, 1, &[pi0]),
            &constant(grid, mat(1, 1, &[0.0])),
            &constant(grid, mat(1, 1, &[1.0])),
            &constant(grid, mat(1, 1, &[0.0])),
        )
        .unwrap();
        for k in 0..grid.n_samples() {
            let t = grid.sample_time(k);
            assert!((pi.sample(k)[(0, 0)] - pi0 / (1.0 - pi0 * t)).abs() < 1e-9);
        }
    }

    #[test]
    fn riccati_blowup_is_reported() {
        // −Π̇ = −Π² gives Π = π0/(1 − π0 t), which escapes at t = 1/π0.
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let err = integrate_riccati(
            &mat(1, 1, &[2.0]),
            &constant(grid, mat(1, 1, &[0.0])),
            &constant(grid, mat(1, 1, &[1.0])),
            &constant(grid, mat(1, 1, &[0.0])),
        );
        assert!(matches!(err, Err(Error::IntegrationDiverged { .. })), "{err:?}");
    }

    fn scalar_mean(grid: TimeGrid, q: f64, m1: f64) -> Result<MeanSolution> {
        let a = constant(grid, mat(1, 1, &[0.0]));
        let b = constant(grid, mat(1, 1, &[1.0]));
        let qs = constant(grid, mat(1, 1, &[q]));
        let zero = constant(grid, vector(&[0.0]));
        let blocks = transition_blocks(&a, &b, &qs).unwrap();
        solve_mean(&a, &zero, &b, &qs, &zero, &vector(&[0.0]), &vector(&[m1]), &blocks, 1e-6)
    }

    #[test]
    fn null_mean_problem() {
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let sol = scalar_mean(grid, 0.0, 0.0).unwrap();
        for k in 0..grid.n_samples() {
            assert_eq!(sol.x_star.sample(k)[0], 0.0);
            assert_eq!(sol.v_star.sample(k)[0], 0.0);
            assert_eq!(sol.costate.sample(k)[0], 0.0);
        }
    }

    #[test]
    fn minimum_energy_line() {
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let sol = scalar_mean(grid, 0.0, 1.0).unwrap();
        assert!((sol.initial_costate[0] + 1.0).abs() < 1e-13);
        for k in 0..grid.n_samples() {
            assert!((sol.x_star.sample(k)[0] - grid.sample_time(k)).abs() < 1e-13);
            assert!((sol.v_star.sample(k)[0] - 1.0).abs() < 1e-13);
        }
    }

    /// Secant shooting on the initial costate of `ẋ = −λ`, `λ̇ = −x`.
    fn shooting_oracle(grid: &TimeGrid) -> Vec<DVector<f64>> {
        let run = |l0: f64| {
            crate::numerics::integrate_ode(
                |_, y| vector(&[-y[1], -y[0]]),
                &vector(&[0.0, l0]),
                grid,
            )
            .unwrap()
        };
        let (mut a, mut b) = (0.0, -1.0);
        let (mut fa, mut fb) = (run(a).last().unwrap()[0] - 1.0, run(b).last().unwrap()[0] - 1.0);
        for _ in 0..50 {
            if fb.abs() < 1e-14 {
                break;
            }
            let c = b - fb * (b - a) / (fb - fa);
            a = b;
            fa = fb;
            b = c;
            fb = run(b).last().unwrap()[0] - 1.0;
        }
        run(b)
    }

    #[test]
    fn mean_with_state_cost_matches_shooting() {
        let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let sol = scalar_mean(grid, 1.0, 1.0).unwrap();
        let oracle = shooting_oracle(&grid);
        for (i, y) in oracle.iter().enumerate() {
            assert!((sol.x_star.node(i)[0] - y[0]).abs() < 1e-7);
            assert!((sol.v_star.node(i)[0] + y[1]).abs() < 1e-7);
            // analytic: x = sinh t / sinh 1
            let t = grid.node(i);
            assert!((sol.x_star.node(i)[0] - t.sinh() / 1f64.sinh()).abs() < 1e-9);
        }
    }

    #[test]
    fn near_singular_phi12_is_refused() {
        // Input only reaches the first coordinate of a decoupled pair.
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let err = transition_blocks(
            &constant(grid, DMatrix::zeros(2, 2)),
            &constant(grid, mat(2, 1, &[1.0, 0.0])),
            &constant(grid, DMatrix::zeros(2, 2)),
        )
        .and_then(|b| {
            riccati_boundary_init(
                &DMatrix::identity(2, 2),
                &DMatrix::identity(2, 2),
                1.0,
                &b.phi11,
                &b.phi12,
            )
        });
        assert!(matches!(err, Err(Error::IllConditioned { .. })), "{err:?}");
    }

    #[test]
    fn vanishing_noise_needs_no_control_on_symmetric_instance() {
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let eps = 1e-9;
        let problem = lti_problem(
            grid,
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            eps,
            vector(&[0.5, -0.5]),
            DMatrix::identity(2, 2) * 0.3,
            vector(&[0.5, -0.5]),
            DMatrix::identity(2, 2) * 0.3,
        );
        let sol = solve_linear_steering(&problem, &SteeringTolerances::default()).unwrap();
        for k in 0..grid.n_samples() {
            assert!(sol.policy.gain.sample(k).amax() < 1e-8);
            assert!(sol.policy.feedforward.sample(k).amax() < 1e-8);
        }
    }

    #[test]
    fn planar_double_integrator_reaches_targets() {
        let grid = TimeGrid::new(0.0, 5.0, 1000).unwrap();
        let problem = lti_problem(
            grid,
            mat(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            mat(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(2, 2),
            0.1,
            vector(&[1.0, 8.0]),
            DMatrix::identity(2, 2) * 0.01,
            vector(&[1.0, 2.0]),
            DMatrix::identity(2, 2) * 0.1,
        );
        let tol = SteeringTolerances {
            mean: 1e-6,
            cov: 1e-6,
        };
        let sol = solve_linear_steering(&problem, &tol).unwrap();
        let (mr, cr) = sol.closed_loop.terminal_residuals(&problem.terminal);
        assert!(mr < 1e-6 && cr < 1e-6, "{mr} {cr}");
        assert_eq!(sol.closed_loop.mean.first(), problem.initial.mean());
        for k in 0..grid.n_samples() {
            assert!((sol.closed_loop.mean.sample(k) - sol.mean.x_star.sample(k)).amax() < 1e-8);
        }
    }

    #[test]
    fn mean_decouples_when_riccati_vanishes() {
        // With A=0, B=1, Q=0, Σ0=1 and Σ1=1+ε the open loop already reaches
        // Σ1, and the closed form gives Π(0) = ε/2 + 1 − √(ε²/4 + 1 + ε) = 0.
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let eps = 0.5;
        let problem = lti_problem(
            grid,
            mat(1, 1, &[0.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[0.0]),
            eps,
            vector(&[0.0]),
            mat(1, 1, &[1.0]),
            vector(&[2.0]),
            mat(1, 1, &[1.0 + eps]),
        );
        let sol = solve_linear_steering(&problem, &SteeringTolerances::default()).unwrap();
        // Π(t1) = εΣ1⁻¹ − H(t1) cancels to rounding level.
        assert!(sol.riccati.pi.samples().iter().all(|p| p.amax() < 1e-10));
        for k in 0..grid.n_samples() {
            assert!((sol.policy.feedforward.sample(k) - sol.mean.v_star.sample(k)).amax() < 1e-10);
        }
    }

    #[test]
    fn drift_offset_and_linear_cost_enter_the_mean() {
        // ẋ = v + 1, cost ∫ ½v² + x dt, x(0)=0, x(1)=0.
        // Costate λ̇ = −1, v = −λ ⇒ v = t + c, x = t²/2 + (1+c)t, x(1)=0 ⇒ c = −3/2.
        let grid = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let a = constant(grid, mat(1, 1, &[0.0]));
        let b = constant(grid, mat(1, 1, &[1.0]));
        let q = constant(grid, mat(1, 1, &[0.0]));
        let blocks = transition_blocks(&a, &b, &q).unwrap();
        let sol = solve_mean(
            &a,
            &constant(grid, vector(&[1.0])),
            &b,
            &q,
            &constant(grid, vector(&[1.0])),
            &vector(&[0.0]),
            &vector(&[0.0]),
            &blocks,
            1e-6,
        )
        .unwrap();
        for k in 0..grid.n_samples() {
            let t = grid.sample_time(k);
            assert!((sol.v_star.sample(k)[0] - (t - 1.5)).abs() < 1e-12);
            assert!((sol.x_star.sample(k)[0] - (t * t / 2.0 - 0.5 * t)).abs() < 1e-12);
        }
    }

    fn random_instance(
        entries: &[f64],
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let a = mat(2, 2, &entries[0..4]);
        let b = mat(2, 2, &entries[4..8]) + DMatrix::<f64>::identity(2, 2) * 1.5;
        let q0 = mat(2, 2, &entries[8..12]);
        let q = &q0 * q0.transpose() * 0.5;
        let r0 = mat(2, 2, &entries[12..16]);
        let r1 = mat(2, 2, &entries[16..20]);
        let s0 = &r0 * r0.transpose() + DMatrix::<f64>::identity(2, 2) * 0.2;
        let s1 = &r1 * r1.transpose() + DMatrix::<f64>::identity(2, 2) * 0.2;
        (a, b, q, s0, s1)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn boundary_identity_and_feasibility(
            entries in proptest::collection::vec(-1.0f64..1.0, 20),
            eps in 0.05f64..2.0,
            m0 in proptest::collection::vec(-2.0f64..2.0, 2),
            m1 in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let grid = TimeGrid::new(0.0, 1.0, 1000).unwrap();
            let (a, b, q, s0, s1) = random_instance(&entries);
            let problem = lti_problem(grid, a, b, q, eps, vector(&m0), s0.clone(), vector(&m1), s1.clone());
            let sol = solve_linear_steering(&problem, &SteeringTolerances::default()).unwrap();
            let start = (sol.riccati.pi.first() + sol.riccati.h.first() - spd_inverse(&s0, "s0").unwrap() * eps).norm();
            prop_assert!(start < 1e-8 * (eps * spd_inverse(&s0, "s0").unwrap().norm()));
            let end = sol.riccati.terminal_identity_residual(eps, &s1).unwrap();
            prop_assert!(end < 1e-5, "terminal identity residual {}", end);
            let (mr, cr) = sol.closed_loop.terminal_residuals(&problem.terminal);
            prop_assert!(mr < 1e-5 && cr < 1e-5);
            for p in sol.riccati.pi.nodes() {
                prop_assert!(crate::numerics::linalg::relative_asymmetry(p) < 1e-12);
            }
            for s in sol.closed_loop.cov.nodes() {
                prop_assert!(s.clone().cholesky().is_some());
            }
        }

        #[test]
        fn gains_invariant_under_joint_noise_scaling(
            entries in proptest::collection::vec(-1.0f64..1.0, 20),
            eps in 0.05f64..1.0,
            c in 0.2f64..5.0,
        ) {
            let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
            let (a, b, q, s0, s1) = random_instance(&entries);
            let zero = DVector::zeros(2);
            let base = lti_problem(grid, a.clone(), b.clone(), q.clone(), eps, zero.clone(), s0.clone(), zero.clone(), s1.clone());
            let scaled = lti_problem(grid, a, b, q, c * eps, zero.clone(), s0 * c, zero, s1 * c);
            let tol = SteeringTolerances::default();
            let k1 = solve_linear_steering(&base, &tol).unwrap().policy.gain;
            let k2 = solve_linear_steering(&scaled, &tol).unwrap().policy.gain;
            for (x, y) in k1.samples().iter().zip(k2.samples()) {
                prop_assert!((x - y).amax() < 1e-8 * (1.0 + x.amax()));
            }
        }
    }
}
