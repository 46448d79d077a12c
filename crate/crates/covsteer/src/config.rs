//! JSON run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use covsteer_core::models::{
    double_integrator_drag_with, lti_test_model, manipulator_3link, DragForm, GaussianMarginal,
    ManipulatorParams, NonlinearModel,
};
use covsteer_core::numerics::TimeGrid;
use covsteer_core::prox::{InitMode, SolverConfig};
use covsteer_core::simulate::SimulationConfig;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    DoubleIntegrator {
        drag_coefficient: f64,
        #[serde(default)]
        drag_form: DragFormConfig,
    },
    Manipulator {
        masses: [f64; 3],
        lengths: [f64; 3],
        com_offsets: [f64; 3],
        inertias: [f64; 3],
        gravity: f64,
    },
    /// `f(x) = A x`, input `B`, cost `½ xᵀ Q x`.
    Lti {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DragFormConfig {
    #[default]
    Quadratic,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitModeConfig {
    ZeroPrior,
    #[default]
    LinearizedPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalConfig {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Raw paths written to ensemble.csv.
    #[serde(default = "default_keep_paths")]
    pub keep_paths: usize,
    /// State coordinates of the 3σ ellipsoid test; all when absent.
    #[serde(default)]
    pub ellipsoid_coords: Option<Vec<usize>>,
}

fn default_keep_paths() -> usize {
    20
}

fn default_eta() -> f64 {
    1.0
}
fn default_conv_tol() -> f64 {
    1e-5
}
fn default_max_iters() -> usize {
    150
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub horizon: f64,
    pub n_steps: usize,
    pub eps: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_conv_tol")]
    pub conv_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub init_mode: InitModeConfig,
    pub initial: MarginalConfig,
    pub terminal: MarginalConfig,
    pub simulate: SimulateOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A config turned into solver objects.
#[derive(Debug)]
pub struct Setup {
    pub model: NonlinearModel,
    pub initial: GaussianMarginal,
    pub terminal: GaussianMarginal,
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
}

fn matrix(field: &str, rows: &[Vec<f64>], shape: Option<(usize, usize)>) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        bail!("{field}: expected a non-empty rectangular nested array");
    }
    if let Some(expected) = shape {
        if (r, c) != expected {
            bail!("{field}: expected shape {expected:?}, found ({r}, {c})");
        }
    }
    let m = DMatrix::from_fn(r, c, |i, j| rows[i][j]);
    if !m.iter().all(|v| v.is_finite()) {
        bail!("{field}: entries must be finite");
    }
    Ok(m)
}

fn marginal(field: &str, config: &MarginalConfig, n: usize) -> Result<GaussianMarginal> {
    if config.mean.len() != n {
        bail!(
            "{field}.mean: expected {n} entries for the model state, found {}",
            config.mean.len()
        );
    }
    if !config.mean.iter().all(|v| v.is_finite()) {
        bail!("{field}.mean: entries must be finite");
    }
    let cov = matrix(&format!("{field}.cov"), &config.cov, Some((n, n)))?;
    GaussianMarginal::new(DVector::from_vec(config.mean.clone()), cov)
        .map_err(|e| anyhow::anyhow!("{field}.cov: {e}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            bail!("horizon: must be positive, got {}", self.horizon);
        }
        TimeGrid::new(0.0, self.horizon, self.n_steps).map_err(|e| anyhow::anyhow!("n_steps: {e}"))
    }

    pub fn build_model(&self, grid: &TimeGrid) -> Result<NonlinearModel> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            bail!("eps: must be positive, got {}", self.eps);
        }
        let model = match &self.model {
            ModelConfig::DoubleIntegrator {
                drag_coefficient,
                drag_form,
            } => {
                let form = match drag_form {
                    DragFormConfig::Quadratic => DragForm::Quadratic,
                    DragFormConfig::Linear => DragForm::Linear,
                };
                double_integrator_drag_with(*drag_coefficient, self.eps, form)
            }
            ModelConfig::Manipulator {
                masses,
                lengths,
                com_offsets,
                inertias,
                gravity,
            } => manipulator_3link(
                ManipulatorParams {
                    masses: *masses,
                    lengths: *lengths,
                    com_offsets: *com_offsets,
                    inertias: *inertias,
                    gravity: *gravity,
                },
                self.eps,
            ),
            ModelConfig::Lti { a, b, q } => {
                let a = matrix("model.a", a, None)?;
                let n = a.nrows();
                if a.ncols() != n {
                    bail!("model.a: must be square");
                }
                let b = matrix("model.b", b, None)?;
                if b.nrows() != n {
                    bail!("model.b: expected {n} rows, found {}", b.nrows());
                }
                let q = matrix("model.q", q, Some((n, n)))?;
                lti_test_model(a, b, q, self.eps, grid)
            }
        };
        model.map_err(|e| anyhow::anyhow!("model: {e}"))
    }

    /// Validates every field and builds the solver inputs.
    pub fn setup(&self) -> Result<Setup> {
        let grid = self.grid()?;
        let model = self.build_model(&grid)?;
        let n = model.state_dim();
        let initial = marginal("initial", &self.initial, n)?;
        let terminal = marginal("terminal", &self.terminal, n)?;
        let mut solver = SolverConfig::new(grid);
        solver.eta = self.eta;
        solver.conv_tol = self.conv_tol;
        solver.max_iters = self.max_iters;
        solver.init_mode = match self.init_mode {
            InitModeConfig::ZeroPrior => InitMode::ZeroPrior,
            InitModeConfig::LinearizedPrior => InitMode::LinearizedPrior,
        };
        solver
            .validate()
            .map_err(|e| anyhow::anyhow!("solver settings: {e}"))?;
        if self.simulate.n_paths < 2 {
            bail!("simulate.n_paths: need at least 2, got {}", self.simulate.n_paths);
        }
        let mut simulation = SimulationConfig::new(self.simulate.n_paths, self.simulate.seed, n);
        simulation.keep_paths = self.simulate.keep_paths;
        if let Some(coords) = &self.simulate.ellipsoid_coords {
            if coords.is_empty() || coords.iter().any(|&c| c >= n) {
                bail!("simulate.ellipsoid_coords: indices must lie in 0..{n}");
            }
            simulation.ellipsoid_coords = coords.clone();
        }
        Ok(Setup {
            model,
            initial,
            terminal,
            solver,
            simulation,
        })
    }
}
