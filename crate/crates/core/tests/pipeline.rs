use covsteer_core::linear_steering::{solve_linear_steering, LinearSteeringProblem, SteeringTolerances};
use covsteer_core::models::{double_integrator_drag, GaussianMarginal};
use covsteer_core::numerics::{TimeGrid, TimeSeries};
use covsteer_core::prox::{retrieve_policy, solve, SolverConfig};
use covsteer_core::simulate::{empirical_check, sample_paths, SimulationConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn double_integrator_end_to_end() {
    let model = double_integrator_drag(0.005, 0.1).unwrap();
    let grid = TimeGrid::new(0.0, 5.0, 250).unwrap();
    let rho0 = GaussianMarginal::new(
        DVector::from_vec(vec![1.0, 8.0, 2.0, 0.0]),
        DMatrix::identity(4, 4) * 0.01,
    )
    .unwrap();
    let rho1 = GaussianMarginal::new(
        DVector::from_vec(vec![1.0, 2.0, -1.0, 0.0]),
        DMatrix::identity(4, 4) * 0.1,
    )
    .unwrap();
    let config = SolverConfig::new(grid);
    let out = solve(&model, &rho0, &rho1, &config).unwrap();
    assert!(out.report.converged);
    for w in out.report.objective.windows(2) {
        assert!(w[1] <= w[0] + 1e-8, "{:?}", out.report.objective);
    }
    for (m, c) in out.report.mean_residual.iter().zip(&out.report.cov_residual) {
        assert!(*m < 1e-4 && *c < 1e-4);
    }
    let policy = retrieve_policy(&model, &out.dynamics, &rho0, &rho1, &config).unwrap();
    let mut sim = SimulationConfig::new(2000, 3, 4);
    // position plane; a 2-D 3σ ellipse holds 98.9% of a Gaussian
    sim.ellipsoid_coords = vec![0, 1];
    let ens = sample_paths(&model, &policy.policy, &rho0, &policy.closed_loop, &sim).unwrap();
    let verdict = empirical_check(&ens, &rho1);
    assert!(verdict.pass, "{verdict:?}");
    assert!(ens.inside_fraction > 0.97, "{}", ens.inside_fraction);
}

fn spd(entries: &[f64], n: usize) -> DMatrix<f64> {
    let r = DMatrix::from_row_slice(n, n, entries);
    &r * r.transpose() + DMatrix::identity(n, n) * 0.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn linear_steering_reaches_the_target(
        a in proptest::collection::vec(-1.0..1.0f64, 4),
        s0 in proptest::collection::vec(-1.0..1.0f64, 4),
        s1 in proptest::collection::vec(-1.0..1.0f64, 4),
        m0 in proptest::collection::vec(-2.0..2.0f64, 2),
        m1 in proptest::collection::vec(-2.0..2.0f64, 2),
        eps in 0.1..1.0f64,
    ) {
        // Controllable through the second state for any drift.
        let grid = TimeGrid::new(0.0, 1.0, 300).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[a[0], 1.0 + a[1].abs(), a[2], a[3]]);
        let problem = LinearSteeringProblem::new(
            TimeSeries::constant(grid, a),
            TimeSeries::constant(grid, DVector::zeros(2)),
            TimeSeries::constant(grid, DMatrix::from_row_slice(2, 1, &[0.0, 1.0])),
            TimeSeries::constant(grid, DMatrix::zeros(2, 2)),
            TimeSeries::constant(grid, DVector::zeros(2)),
            eps,
            GaussianMarginal::new(DVector::from_vec(m0), spd(&s0, 2)).unwrap(),
            GaussianMarginal::new(DVector::from_vec(m1), spd(&s1, 2)).unwrap(),
        )
        .unwrap();
        let sol = solve_linear_steering(&problem, &SteeringTolerances::default()).unwrap();
        let (mr, cr) = sol.closed_loop.terminal_residuals(&problem.terminal);
        prop_assert!(mr < 1e-5 && cr < 1e-5);
        let residual = sol.riccati.terminal_identity_residual(eps, problem.terminal.cov()).unwrap();
        prop_assert!(residual < 1e-8);
    }
}
