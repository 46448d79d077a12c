use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covsteer::{cmd_check, cmd_simulate, cmd_solve};

const FILES: &str = "\
Exit codes: 0 success, 2 not converged (solve) or terminal check rejected \
(simulate), 1 error.

Files (header row, one row per grid node, matrices flattened row-major,
shortest round-trip decimals):
  report.json   iterations, objective/stopping/residual traces, wall time
  policy.csv    t, K_i_j (gain row i, column j), d_i
  moments.csv   t, z_i, S_i_j
  ensemble.json cost mean and standard error, terminal moments, check verdict
  ensemble.csv  series, t, x_i, S_i_j; series is `mean` for the empirical
                per-node moments or `path_<j>` for raw sample paths (S empty)";

#[derive(Parser)]
#[command(name = "covsteer", version, about = "Nonlinear covariance steering", after_long_help = FILES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte Carlo worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Monte Carlo seed; overrides `simulate.seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, retrieve the feedback policy, write report.json, policy.csv, moments.csv.
    Solve { config: PathBuf },
    /// Monte Carlo of the nonlinear system under a stored policy.
    Simulate {
        config: PathBuf,
        /// Directory holding policy.csv and moments.csv.
        #[arg(long)]
        policy_dir: PathBuf,
    },
    /// Validate a config without solving.
    Check { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { config } => cmd_solve(config, cli.out.as_deref()),
        Command::Simulate { config, policy_dir } => {
            cmd_simulate(config, policy_dir, cli.out.as_deref(), cli.workers, cli.seed)
        }
        Command::Check { config } => cmd_check(config).map(|setup| {
            println!(
                "ok: state_dim {}, input_dim {}, {} steps",
                setup.model.state_dim(),
                setup.model.input_dim(),
                setup.solver.grid.n_steps()
            );
            covsteer::Status::Success
        }),
    };
    match result {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
