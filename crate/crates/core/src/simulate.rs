//! Euler–Maruyama Monte Carlo of the nonlinear closed loop
//! `dX = f(t,X)dt + g(t,X)(u dt + √ε dW)`, `u = K(t)X + d(t)`.
//!
//! Path `j` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `j`, so a
//! path does not depend on which chunk or worker simulates it. Paths are
//! grouped in chunks of [`CHUNK_PATHS`]; chunk statistics are merged in chunk
//! order.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gauss_markov::MomentTrajectory;
use crate::linear_steering::AffinePolicy;
use crate::models::{GaussianMarginal, NonlinearModel};
use crate::numerics::symmetrize;

pub const CHUNK_PATHS: usize = 64;

/// Largest tolerated fraction of diverged paths.
pub const MAX_DIVERGED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Number of leading paths whose node states are kept.
    pub keep_paths: usize,
    /// A path whose state norm exceeds this is counted as diverged.
    pub blowup_norm: f64,
    /// Coordinates of the planned covariance used for the 3σ test.
    pub ellipsoid_coords: Vec<usize>,
}

impl SimulationConfig {
    pub fn new(n_paths: usize, seed: u64, state_dim: usize) -> Self {
        Self {
            n_paths,
            seed,
            keep_paths: 0,
            blowup_norm: 1e8,
            ellipsoid_coords: (0..state_dim).collect(),
        }
    }

    pub fn n_chunks(&self) -> usize {
        self.n_paths.div_ceil(CHUNK_PATHS)
    }
}

/// Sums over the surviving paths of one chunk. Node states are accumulated
/// as deviations from the planned mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStats {
    pub first_path: usize,
    pub survivors: usize,
    pub diverged: usize,
    pub sum: Vec<DVector<f64>>,
    pub sum_sq: Vec<DMatrix<f64>>,
    pub costs: Vec<f64>,
    pub terminal: Vec<DVector<f64>>,
    pub kept: Vec<Vec<DVector<f64>>>,
    pub inside: usize,
    pub tested: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub n_paths: usize,
    pub seed: u64,
    pub diverged: usize,
    /// Time step of the Euler–Maruyama scheme.
    pub dt: f64,
    /// `Δt · max_i ‖∂f/∂x(z_i) + g(z_i)K_i‖₂` along the plan; the first-order
    /// bias scale of the scheme.
    pub discretization_scale: f64,
    pub node_mean: Vec<DVector<f64>>,
    pub node_cov: Vec<DMatrix<f64>>,
    pub terminal_mean: DVector<f64>,
    pub terminal_cov: DMatrix<f64>,
    pub cost_mean: f64,
    pub cost_stderr: f64,
    pub terminal_states: Vec<DVector<f64>>,
    pub paths: Vec<Vec<DVector<f64>>>,
    /// Fraction of (path, node) pairs inside the planned 3σ ellipsoid.
    pub inside_fraction: f64,
}

struct Ellipsoids {
    coords: Vec<usize>,
    factors: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Ellipsoids {
    fn new(plan: &MomentTrajectory, coords: &[usize]) -> Result<Self> {
        let n = plan.mean.first().len();
        if coords.is_empty() || coords.iter().any(|&c| c >= n) {
            return Err(Error::InvalidConfig(alloc::format!(
                "ellipsoid coordinates {coords:?} out of range for dimension {n}"
            )));
        }
        let factors = plan
            .cov
            .nodes()
            .map(|s| {
                let block = DMatrix::from_fn(coords.len(), coords.len(), |a, b| {
                    s[(coords[a], coords[b])]
                });
                block.cholesky().ok_or(Error::NotPositiveDefinite {
                    what: "planned covariance block",
                    eigenvalue: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            coords: coords.to_vec(),
            factors,
        })
    }

    /// Squared Mahalanobis distance at most 9.
    fn contains(&self, node: usize, x: &DVector<f64>, z: &DVector<f64>) -> bool {
        let d = DVector::from_iterator(self.coords.len(), self.coords.iter().map(|&c| x[c] - z[c]));
        let w = self.factors[node].l().solve_lower_triangular(&d).unwrap_or(d);
        w.norm_squared() <= 9.0
    }
}

fn check_inputs(
    model: &NonlinearModel,
    policy: &AffinePolicy,
    initial: &GaussianMarginal,
    plan: &MomentTrajectory,
    config: &SimulationConfig,
) -> Result<()> {
    let n = model.state_dim();
    if policy.state_dim() != n || policy.input_dim() != model.input_dim() || initial.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "simulation inputs",
            expected: (model.input_dim(), n),
            found: (policy.input_dim(), policy.state_dim()),
        });
    }
    if plan.grid() != policy.grid() {
        return Err(Error::InvalidConfig("policy and plan on different grids".into()));
    }
    if config.n_paths < 2 {
        return Err(Error::InvalidConfig(alloc::format!(
            "need at least 2 sample paths, got {}",
            config.n_paths
        )));
    }
    Ok(())
}

/// Simulates paths `[chunk·64, min((chunk+1)·64, n_paths))`.
pub fn simulate_chunk(
    model: &NonlinearModel,
    policy: &AffinePolicy,
    initial: &GaussianMarginal,
    plan: &MomentTrajectory,
    config: &SimulationConfig,
    chunk: usize,
) -> Result<ChunkStats> {
    check_inputs(model, policy, initial, plan, config)?;
    let ellipsoids = Ellipsoids::new(plan, &config.ellipsoid_coords)?;
    simulate_chunk_with(model, policy, initial, plan, config, chunk, &ellipsoids)
}

fn simulate_chunk_with(
    model: &NonlinearModel,
    policy: &AffinePolicy,
    initial: &GaussianMarginal,
    plan: &MomentTrajectory,
    config: &SimulationConfig,
    chunk: usize,
    ellipsoids: &Ellipsoids,
) -> Result<ChunkStats> {
    let n = model.state_dim();
    let grid = *policy.grid();
    let n_nodes = grid.n_nodes();
    let dt = grid.step();
    let noise_scale = (model.eps() * dt).sqrt();
    let root0 = initial
        .cov()
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            what: "initial covariance",
            eigenvalue: 0.0,
        })?
        .l();
    let first = chunk * CHUNK_PATHS;
    let last = ((chunk + 1) * CHUNK_PATHS).min(config.n_paths);
    let mut stats = ChunkStats {
        first_path: first,
        survivors: 0,
        diverged: 0,
        sum: vec![DVector::zeros(n); n_nodes],
        sum_sq: vec![DMatrix::zeros(n, n); n_nodes],
        costs: Vec::new(),
        terminal: Vec::new(),
        kept: Vec::new(),
        inside: 0,
        tested: 0,
    };
    let cost = model.cost();
    let mut states = Vec::with_capacity(n_nodes);
    for path in first..last {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(path as u64);
        let mut draw = |len: usize| -> DVector<f64> {
            DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng))
        };
        states.clear();
        let mut x = initial.mean() + &root0 * draw(n);
        let mut running = 0.0;
        let mut ok = true;
        for i in 0..n_nodes {
            if !x.iter().all(|v| v.is_finite()) || x.norm() > config.blowup_norm {
                ok = false;
                break;
            }
            states.push(x.clone());
            if i + 1 == n_nodes {
                break;
            }
            let t = grid.node(i);
            let (f, g) = model.dynamics().drift_and_input(t, &x)?;
            let u = policy.control(2 * i, &x);
            running += (0.5 * u.norm_squared() + cost.value(&x, plan.mean.node(i))) * dt;
            let xi = draw(g.ncols());
            x = &x + (f + &g * &u) * dt + &g * xi * noise_scale;
        }
        if !ok {
            stats.diverged += 1;
            continue;
        }
        stats.survivors += 1;
        for (i, xs) in states.iter().enumerate() {
            let z = plan.mean.node(i);
            let d = xs - z;
            stats.sum_sq[i].ger(1.0, &d, &d, 1.0);
            stats.sum[i] += d;
            stats.tested += 1;
            if ellipsoids.contains(i, xs, z) {
                stats.inside += 1;
            }
        }
        stats.costs.push(running);
        stats.terminal.push(states[n_nodes - 1].clone());
        if path < config.keep_paths {
            stats.kept.push(states.clone());
        }
    }
    Ok(stats)
}

/// Merges chunk statistics, which must arrive in chunk order.
pub fn merge_chunks(
    model: &NonlinearModel,
    policy: &AffinePolicy,
    plan: &MomentTrajectory,
    config: &SimulationConfig,
    chunks: Vec<ChunkStats>,
) -> Result<EnsembleResult> {
    let n = model.state_dim();
    let grid = *policy.grid();
    let n_nodes = grid.n_nodes();
    if chunks.len() != config.n_chunks()
        || chunks
            .iter()
            .enumerate()
            .any(|(c, s)| s.first_path != c * CHUNK_PATHS)
    {
        return Err(Error::InvalidConfig("chunk statistics out of order".into()));
    }
    let mut sum = vec![DVector::zeros(n); n_nodes];
    let mut sum_sq = vec![DMatrix::zeros(n, n); n_nodes];
    let mut costs = Vec::with_capacity(config.n_paths);
    let mut terminal_states = Vec::with_capacity(config.n_paths);
    let mut paths = Vec::new();
    let (mut survivors, mut diverged, mut inside, mut tested) = (0, 0, 0, 0);
    for c in chunks {
        for i in 0..n_nodes {
            sum[i] += &c.sum[i];
            sum_sq[i] += &c.sum_sq[i];
        }
        survivors += c.survivors;
        diverged += c.diverged;
        inside += c.inside;
        tested += c.tested;
        costs.extend(c.costs);
        terminal_states.extend(c.terminal);
        paths.extend(c.kept);
    }
    if diverged as f64 > MAX_DIVERGED_FRACTION * config.n_paths as f64 || survivors < 2 {
        return Err(Error::TooManyDiverged {
            diverged,
            n_paths: config.n_paths,
        });
    }
    let m = survivors as f64;
    let mut node_mean = Vec::with_capacity(n_nodes);
    let mut node_cov = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let shift = &sum[i] / m;
        let cov = (&sum_sq[i] - &shift * shift.transpose() * m) / (m - 1.0);
        node_mean.push(plan.mean.node(i) + shift);
        node_cov.push(symmetrize(&cov));
    }
    let cost_mean = costs.iter().sum::<f64>() / m;
    let cost_var = costs.iter().map(|c| (c - cost_mean).powi(2)).sum::<f64>() / (m - 1.0);

    let mut stiffness = 0.0f64;
    for i in 0..n_nodes {
        let z = plan.mean.node(i);
        let t = grid.node(i);
        let jac = model.drift_jacobian(t, z)? + model.input_matrix(t, z)? * policy.gain.node(i);
        let norm = jac.singular_values().max();
        stiffness = stiffness.max(norm);
    }
    Ok(EnsembleResult {
        n_paths: config.n_paths,
        seed: config.seed,
        diverged,
        dt: grid.step(),
        discretization_scale: stiffness * grid.step(),
        terminal_mean: node_mean[n_nodes - 1].clone(),
        terminal_cov: node_cov[n_nodes - 1].clone(),
        node_mean,
        node_cov,
        cost_mean,
        cost_stderr: (cost_var / m).sqrt(),
        terminal_states,
        paths,
        inside_fraction: inside as f64 / tested.max(1) as f64,
    })
}

/// Runs every chunk in order on the calling thread.
pub fn sample_paths(
    model: &NonlinearModel,
    policy: &AffinePolicy,
    initial: &GaussianMarginal,
    plan: &MomentTrajectory,
    config: &SimulationConfig,
) -> Result<EnsembleResult> {
    check_inputs(model, policy, initial, plan, config)?;
    let ellipsoids = Ellipsoids::new(plan, &config.ellipsoid_coords)?;
    let chunks = (0..config.n_chunks())
        .map(|c| simulate_chunk_with(model, policy, initial, plan, config, c, &ellipsoids))
        .collect::<Result<Vec<_>>>()?;
    merge_chunks(model, policy, plan, config, chunks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckVerdict {
    /// `(m̂_j − m_j) / √(Σ̂_jj / n)` per coordinate.
    pub z_scores: Vec<f64>,
    /// Family-wise critical value for the z-scores.
    pub z_critical: f64,
    pub mean_bias_allowance: f64,
    pub mean_pass: bool,
    /// `‖Σ̂ − Σ‖_F / ‖Σ‖_F`
    pub cov_deviation: f64,
    pub cov_threshold: f64,
    pub cov_pass: bool,
    pub pass: bool,
}

/// Two-sided standard normal critical value at level `alpha`.
fn normal_critical(alpha: f64) -> f64 {
    let tail = |z: f64| libm::erfc(z / core::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (0.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Tests the ensemble's terminal moments against `target`.
///
/// Each coordinate's mean is tested at the family-wise level of a single 3σ
/// test (two-sided 0.27%, Bonferroni over coordinates), widened by the
/// scheme's bias scale. The covariance passes if its relative Frobenius
/// deviation is below three sampling standard deviations,
/// `√((‖Σ‖²_F + (tr Σ)²)/(n−1)) / ‖Σ‖_F`, plus the bias scale.
pub fn empirical_check(ensemble: &EnsembleResult, target: &GaussianMarginal) -> CheckVerdict {
    let n = target.dim();
    let m = (ensemble.n_paths - ensemble.diverged) as f64;
    let bias = ensemble.discretization_scale;
    let alpha = 1.0 - libm::erf(3.0 / core::f64::consts::SQRT_2);
    let z_critical = normal_critical(alpha / n as f64);
    let z_scores: Vec<f64> = (0..n)
        .map(|j| {
            let se = (ensemble.terminal_cov[(j, j)] / m).sqrt();
            (ensemble.terminal_mean[j] - target.mean()[j]) / se
        })
        .collect();
    let mean_allowance = bias * (1.0 + target.mean().norm());
    let mean_pass = (0..n).all(|j| {
        let se = (ensemble.terminal_cov[(j, j)] / m).sqrt();
        let dev = (ensemble.terminal_mean[j] - target.mean()[j]).abs();
        dev <= z_critical * se + mean_allowance
    });
    let s = target.cov();
    let s_norm = s.norm();
    let sampling = ((s_norm * s_norm + s.trace().powi(2)) / (m - 1.0)).sqrt() / s_norm;
    let cov_threshold = 3.0 * sampling + bias;
    let cov_deviation = (&ensemble.terminal_cov - s).norm() / s_norm;
    let cov_pass = cov_deviation <= cov_threshold;
    CheckVerdict {
        z_scores,
        z_critical,
        mean_bias_allowance: mean_allowance,
        mean_pass,
        cov_deviation,
        cov_threshold,
        cov_pass,
        pass: mean_pass && cov_pass,
    }
}
