//! solve → retrieve → simulate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use covsteer_core::gauss_markov::MomentTrajectory;
use covsteer_core::linear_steering::{AffinePolicy, LinearSteeringSolution};
use covsteer_core::models::{GaussianMarginal, NonlinearModel};
use covsteer_core::prox::{retrieve_policy, solve};
use covsteer_core::simulate::{
    empirical_check, merge_chunks, simulate_chunk, CheckVerdict, EnsembleResult, SimulationConfig,
};

use crate::config::{RunConfig, Setup};
use crate::files::{
    read_moments, read_policy, write_ensemble_csv, write_json, write_moments, write_policy,
    EnsembleSummary, SolveSummary,
};

/// Exit status of a command that did not fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Solve hit `max_iters` without converging, or the Monte Carlo check
    /// rejected the terminal marginal.
    Unconfirmed,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::Unconfirmed => 2,
        }
    }
}

/// Report of a run that stopped on an error.
#[derive(Debug)]
pub struct SolveFailed {
    pub summary: SolveSummary,
    pub error: anyhow::Error,
}

#[derive(Debug)]
pub struct SolveRun {
    pub summary: SolveSummary,
    pub solution: LinearSteeringSolution,
}

/// Runs the outer loop and retrieves the policy for the last iterate.
pub fn run_solve(setup: &Setup) -> Result<SolveRun, Box<SolveFailed>> {
    let start = Instant::now();
    let outcome = solve(&setup.model, &setup.initial, &setup.terminal, &setup.solver);
    let outcome = match outcome {
        Ok(o) => o,
        Err(f) => {
            let mut summary = SolveSummary::from_report(&f.report, start.elapsed().as_secs_f64());
            summary.error = Some(f.error.to_string());
            summary.failed_iteration = Some(f.iteration);
            let error = anyhow!("solver failed at iteration {}: {}", f.iteration, f.error);
            return Err(Box::new(SolveFailed { summary, error }));
        }
    };
    let retrieved = retrieve_policy(
        &setup.model,
        &outcome.dynamics,
        &setup.initial,
        &setup.terminal,
        &setup.solver,
    );
    let mut summary = SolveSummary::from_report(&outcome.report, start.elapsed().as_secs_f64());
    match retrieved {
        Ok(solution) => Ok(SolveRun { summary, solution }),
        Err(e) => {
            let iteration = outcome.report.iterations;
            summary.error = Some(e.to_string());
            summary.failed_iteration = Some(iteration);
            let error = anyhow!("policy retrieval after iteration {iteration}: {e}");
            Err(Box::new(SolveFailed { summary, error }))
        }
    }
}

/// Monte Carlo over `workers` threads. Chunk `c` goes to worker
/// `c mod workers`; results are merged in chunk order, so the output does
/// not depend on `workers`.
pub fn sample_paths_parallel(
    model: &NonlinearModel,
    policy: &AffinePolicy,
    initial: &GaussianMarginal,
    plan: &MomentTrajectory,
    config: &SimulationConfig,
    workers: usize,
) -> Result<EnsembleResult> {
    let workers = workers.max(1).min(config.n_chunks());
    let chunks = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..config.n_chunks())
                        .step_by(workers)
                        .map(|c| simulate_chunk(model, policy, initial, plan, config, c).map(|r| (c, r)))
                        .collect::<covsteer_core::Result<Vec<_>>>()
                })
            })
            .collect();
        let mut all = Vec::with_capacity(config.n_chunks());
        for h in handles {
            all.extend(h.join().map_err(|_| anyhow!("simulation worker panicked"))??);
        }
        all.sort_by_key(|(c, _)| *c);
        Ok::<_, anyhow::Error>(all.into_iter().map(|(_, r)| r).collect::<Vec<_>>())
    })?;
    Ok(merge_chunks(model, policy, plan, config, chunks)?)
}

fn output_dir(config: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Validates a config.
pub fn cmd_check(config_path: &Path) -> Result<Setup> {
    RunConfig::load(config_path)?.setup()
}

/// Writes report.json, and policy.csv and moments.csv when a policy was
/// retrieved.
pub fn cmd_solve(config_path: &Path, out: Option<&Path>) -> Result<Status> {
    let config = RunConfig::load(config_path)?;
    let setup = config.setup()?;
    let dir = output_dir(&config, out);
    create_dir(&dir)?;
    match run_solve(&setup) {
        Ok(run) => {
            write_json(&dir.join("report.json"), &run.summary)?;
            write_policy(&dir.join("policy.csv"), &run.solution.policy)?;
            write_moments(&dir.join("moments.csv"), &run.solution.closed_loop)?;
            Ok(if run.summary.converged {
                Status::Success
            } else {
                Status::Unconfirmed
            })
        }
        Err(failed) => {
            write_json(&dir.join("report.json"), &failed.summary)?;
            Err(failed.error)
        }
    }
}

#[derive(Debug)]
pub struct SimulateRun {
    pub ensemble: EnsembleResult,
    pub verdict: CheckVerdict,
}

pub fn run_simulate(setup: &Setup, policy_dir: &Path, workers: usize) -> Result<SimulateRun> {
    let grid = setup.solver.grid;
    let (n, m) = (setup.model.state_dim(), setup.model.input_dim());
    let policy = read_policy(&policy_dir.join("policy.csv"), &grid, n, m)?;
    let plan = read_moments(&policy_dir.join("moments.csv"), &grid, n)?;
    let ensemble = sample_paths_parallel(
        &setup.model,
        &policy,
        &setup.initial,
        &plan,
        &setup.simulation,
        workers,
    )?;
    let verdict = empirical_check(&ensemble, &setup.terminal);
    Ok(SimulateRun { ensemble, verdict })
}

/// Writes ensemble.json and ensemble.csv.
pub fn cmd_simulate(
    config_path: &Path,
    policy_dir: &Path,
    out: Option<&Path>,
    workers: usize,
    seed: Option<u64>,
) -> Result<Status> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.simulate.seed = seed;
    }
    let setup = config.setup()?;
    let run = run_simulate(&setup, policy_dir, workers)?;
    let dir = output_dir(&config, out);
    create_dir(&dir)?;
    write_json(
        &dir.join("ensemble.json"),
        &EnsembleSummary::new(&run.ensemble, &run.verdict),
    )?;
    write_ensemble_csv(&dir.join("ensemble.csv"), &setup.solver.grid, &run.ensemble)?;
    Ok(if run.verdict.pass {
        Status::Success
    } else {
        Status::Unconfirmed
    })
}
