//! CSV and JSON artifacts.
//!
//! All CSV files have a header row and one row per grid node. Matrices are
//! flattened row-major; `K_i_j` is row `i`, column `j` of the gain.
//! Numbers use the shortest decimal form that parses back to the same `f64`.
//!
//! - `policy.csv`: `t, K_0_0 … K_{m-1}_{n-1}, d_0 … d_{m-1}`
//! - `moments.csv`: `t, z_0 … z_{n-1}, S_0_0 … S_{n-1}_{n-1}`
//! - `ensemble.csv`: `series, t, x_0 … x_{n-1}, S_0_0 …`. Rows with
//!   `series = mean` hold the empirical mean and covariance per node; rows
//!   with `series = path_<j>` hold raw sample path `j` and leave `S` empty.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use covsteer_core::gauss_markov::MomentTrajectory;
use covsteer_core::linear_steering::AffinePolicy;
use covsteer_core::numerics::{TimeGrid, TimeSeries};
use covsteer_core::prox::SolveReport;
use covsteer_core::simulate::{CheckVerdict, EnsembleResult};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Shortest round-trip decimal.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn matrix_names(prefix: &str, rows: usize, cols: usize) -> impl Iterator<Item = String> + '_ {
    (0..rows).flat_map(move |i| (0..cols).map(move |j| format!("{prefix}_{i}_{j}")))
}

fn vector_names(prefix: &str, len: usize) -> impl Iterator<Item = String> + '_ {
    (0..len).map(move |i| format!("{prefix}_{i}"))
}

fn push_matrix(row: &mut Vec<String>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(fmt_f64(m[(i, j)]));
        }
    }
}

fn push_vector(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|x| fmt_f64(*x)));
}

fn write_rows(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_policy(path: &Path, policy: &AffinePolicy) -> Result<()> {
    let (m, n) = (policy.input_dim(), policy.state_dim());
    let grid = policy.grid();
    let mut header = vec!["t".to_string()];
    header.extend(matrix_names("K", m, n));
    header.extend(vector_names("d", m));
    let rows = (0..grid.n_nodes())
        .map(|i| {
            let mut row = vec![fmt_f64(grid.node(i))];
            push_matrix(&mut row, policy.gain.node(i));
            push_vector(&mut row, policy.feedforward.node(i));
            row
        })
        .collect();
    write_rows(path, header, rows)
}

pub fn write_moments(path: &Path, moments: &MomentTrajectory) -> Result<()> {
    let grid = moments.grid();
    let n = moments.mean.first().len();
    let mut header = vec!["t".to_string()];
    header.extend(vector_names("z", n));
    header.extend(matrix_names("S", n, n));
    let rows = (0..grid.n_nodes())
        .map(|i| {
            let mut row = vec![fmt_f64(grid.node(i))];
            push_vector(&mut row, moments.mean.node(i));
            push_matrix(&mut row, moments.cov.node(i));
            row
        })
        .collect();
    write_rows(path, header, rows)
}

/// Node rows of a numeric CSV after checking its header and time column
/// against `grid`.
fn read_numeric(path: &Path, expected_header: &[String], grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    let name = path.display();
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {name}"))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != expected_header {
        bail!(
            "{name}: header does not match the model; expected {} columns starting {:?}",
            expected_header.len(),
            &expected_header[..expected_header.len().min(3)]
        );
    }
    let mut rows = Vec::with_capacity(grid.n_nodes());
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.with_context(|| format!("{name}: line {line}"))?;
        let mut row = Vec::with_capacity(rec.len());
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{name}: line {line}, column {}: not a number", header[col]))?;
            if !v.is_finite() {
                bail!("{name}: line {line}, column {}: non-finite value {field}", header[col]);
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.len() != grid.n_nodes() {
        bail!(
            "{name}: {} node rows, config grid has {} nodes",
            rows.len(),
            grid.n_nodes()
        );
    }
    let tol = 1e-12 * grid.t1().abs().max(1.0);
    for (i, row) in rows.iter().enumerate() {
        if (row[0] - grid.node(i)).abs() > tol {
            bail!(
                "{name}: line {}: time {} does not match grid node {}",
                i + 2,
                row[0],
                grid.node(i)
            );
        }
    }
    Ok(rows)
}

fn unflatten(values: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, values)
}

/// Reads `policy.csv`. Midpoint samples are interpolated from the nodes.
pub fn read_policy(path: &Path, grid: &TimeGrid, state_dim: usize, input_dim: usize) -> Result<AffinePolicy> {
    let (m, n) = (input_dim, state_dim);
    let mut header = vec!["t".to_string()];
    header.extend(matrix_names("K", m, n));
    header.extend(vector_names("d", m));
    let rows = read_numeric(path, &header, grid)?;
    let gain = rows.iter().map(|r| unflatten(&r[1..1 + m * n], m, n)).collect();
    let ff = rows
        .iter()
        .map(|r| DVector::from_column_slice(&r[1 + m * n..]))
        .collect();
    let policy = AffinePolicy::new(
        TimeSeries::from_nodes(*grid, gain)?,
        TimeSeries::from_nodes(*grid, ff)?,
    )?;
    Ok(policy)
}

/// Reads `moments.csv`. Midpoint samples are interpolated from the nodes.
pub fn read_moments(path: &Path, grid: &TimeGrid, state_dim: usize) -> Result<MomentTrajectory> {
    let n = state_dim;
    let mut header = vec!["t".to_string()];
    header.extend(vector_names("z", n));
    header.extend(matrix_names("S", n, n));
    let rows = read_numeric(path, &header, grid)?;
    let mean = rows.iter().map(|r| DVector::from_column_slice(&r[1..1 + n])).collect();
    let cov = rows.iter().map(|r| unflatten(&r[1 + n..], n, n)).collect();
    Ok(MomentTrajectory {
        mean: TimeSeries::from_nodes(*grid, mean)?,
        cov: TimeSeries::from_nodes(*grid, cov)?,
    })
}

pub fn write_ensemble_csv(path: &Path, grid: &TimeGrid, ens: &EnsembleResult) -> Result<()> {
    let n = ens.terminal_mean.len();
    let mut header = vec!["series".to_string(), "t".to_string()];
    header.extend(vector_names("x", n));
    header.extend(matrix_names("S", n, n));
    let mut rows = Vec::new();
    for i in 0..grid.n_nodes() {
        let mut row = vec!["mean".to_string(), fmt_f64(grid.node(i))];
        push_vector(&mut row, &ens.node_mean[i]);
        push_matrix(&mut row, &ens.node_cov[i]);
        rows.push(row);
    }
    for (j, path_states) in ens.paths.iter().enumerate() {
        for (i, x) in path_states.iter().enumerate() {
            let mut row = vec![format!("path_{j}"), fmt_f64(grid.node(i))];
            push_vector(&mut row, x);
            row.extend(std::iter::repeat_n(String::new(), n * n));
            rows.push(row);
        }
    }
    write_rows(path, header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub iterations: usize,
    pub objective: Vec<f64>,
    pub stopping: Vec<f64>,
    pub mean_residual: Vec<f64>,
    pub cov_residual: Vec<f64>,
    pub wall_time_s: f64,
    /// Set when the run stopped on an error.
    pub error: Option<String>,
    pub failed_iteration: Option<usize>,
}

impl SolveSummary {
    pub fn from_report(report: &SolveReport, wall_time_s: f64) -> Self {
        Self {
            converged: report.converged,
            iterations: report.iterations,
            objective: report.objective.clone(),
            stopping: report.stopping.clone(),
            mean_residual: report.mean_residual.clone(),
            cov_residual: report.cov_residual.clone(),
            wall_time_s,
            error: None,
            failed_iteration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub pass: bool,
    pub mean_pass: bool,
    pub z_scores: Vec<f64>,
    pub z_critical: f64,
    pub mean_bias_allowance: f64,
    pub cov_pass: bool,
    pub cov_deviation: f64,
    pub cov_threshold: f64,
}

impl From<&CheckVerdict> for VerdictRecord {
    fn from(v: &CheckVerdict) -> Self {
        Self {
            pass: v.pass,
            mean_pass: v.mean_pass,
            z_scores: v.z_scores.clone(),
            z_critical: v.z_critical,
            mean_bias_allowance: v.mean_bias_allowance,
            cov_pass: v.cov_pass,
            cov_deviation: v.cov_deviation,
            cov_threshold: v.cov_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub seed: u64,
    pub diverged: usize,
    pub dt: f64,
    pub cost_mean: f64,
    pub cost_stderr: f64,
    pub inside_3sigma_fraction: f64,
    pub discretization_scale: f64,
    pub terminal_mean: Vec<f64>,
    /// Row-major.
    pub terminal_cov: Vec<Vec<f64>>,
    pub verdict: VerdictRecord,
}

impl EnsembleSummary {
    pub fn new(ens: &EnsembleResult, verdict: &CheckVerdict) -> Self {
        let c = &ens.terminal_cov;
        Self {
            n_paths: ens.n_paths,
            seed: ens.seed,
            diverged: ens.diverged,
            dt: ens.dt,
            cost_mean: ens.cost_mean,
            cost_stderr: ens.cost_stderr,
            inside_3sigma_fraction: ens.inside_fraction,
            discretization_scale: ens.discretization_scale,
            terminal_mean: ens.terminal_mean.iter().copied().collect(),
            terminal_cov: (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect(),
            verdict: verdict.into(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
