//! Fixed-step classical RK4 on a [`TimeGrid`].
//!
//! Every right-hand side receives the sample index of its stage time as well
//! as the time itself: stage 1 sits on node `i` (sample `2i`), stages 2 and 3
//! on the interval midpoint (sample `2i + 1`) and stage 4 on node `i + 1`.
//! Coefficients stored as a [`TimeSeries`] are therefore looked up exactly.
//! Midpoint values of the solution are reconstructed by cubic Hermite
//! interpolation from node values and node derivatives, which keeps the
//! dense output fourth-order accurate.

use alloc::vec::Vec;
use nalgebra::DVector;

use super::grid::{TimeGrid, TimeSeries, VectorSpace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Initial value at `t0`, march to `t1`.
    Forward,
    /// Initial value at `t1`, march back to `t0`.
    Backward,
}

/// Integrates `y' = rhs(k, t, y)` over the whole grid and returns the dense
/// solution (nodes and midpoints).
pub fn integrate_dense<Y, F>(
    grid: &TimeGrid,
    y_init: Y,
    direction: Direction,
    mut rhs: F,
) -> Result<TimeSeries<Y>>
where
    Y: VectorSpace,
    F: FnMut(usize, f64, &Y) -> Y,
{
    let n = grid.n_steps();
    let mut nodes: Vec<Option<Y>> = alloc::vec![None; n + 1];
    let mut derivs: Vec<Option<Y>> = alloc::vec![None; n + 1];

    let (start, signed_h) = match direction {
        Direction::Forward => (0, grid.step()),
        Direction::Backward => (n, -grid.step()),
    };
    nodes[start] = Some(y_init);

    for step in 0..n {
        let (i, j) = match direction {
            Direction::Forward => (step, step + 1),
            Direction::Backward => (n - step, n - step - 1),
        };
        let y = nodes[i].as_ref().expect("node filled by previous step");
        let (ki, kmid, kj) = (2 * i, i + j, 2 * j);
        let (ti, tmid, tj) = (
            grid.sample_time(ki),
            grid.sample_time(kmid),
            grid.sample_time(kj),
        );
        let h = signed_h;
        let k1 = rhs(ki, ti, y);
        let k2 = rhs(kmid, tmid, &y.axpy(0.5 * h, &k1));
        let k3 = rhs(kmid, tmid, &y.axpy(0.5 * h, &k2));
        let k4 = rhs(kj, tj, &y.axpy(h, &k3));
        let next = y
            .axpy(h / 6.0, &k1)
            .axpy(h / 3.0, &k2)
            .axpy(h / 3.0, &k3)
            .axpy(h / 6.0, &k4);
        if !next.all_finite() {
            return Err(Error::IntegrationDiverged { node: j });
        }
        derivs[i] = Some(k1);
        nodes[j] = Some(next);
    }
    let end = match direction {
        Direction::Forward => n,
        Direction::Backward => 0,
    };
    let y_end = nodes[end].as_ref().expect("final node filled");
    let d_end = rhs(2 * end, grid.sample_time(2 * end), y_end);
    if !d_end.all_finite() {
        return Err(Error::IntegrationDiverged { node: end });
    }
    derivs[end] = Some(d_end);

    let nodes: Vec<Y> = nodes.into_iter().map(|v| v.expect("filled")).collect();
    let derivs: Vec<Y> = derivs.into_iter().map(|v| v.expect("filled")).collect();
    let h = grid.step();
    let mut samples = Vec::with_capacity(grid.n_samples());
    for i in 0..n {
        samples.push(nodes[i].clone());
        // cubic Hermite midpoint: (y0 + y1)/2 + h/8 (y0' - y1')
        let mid = nodes[i]
            .scale(0.5)
            .axpy(0.5, &nodes[i + 1])
            .axpy(h / 8.0, &derivs[i])
            .axpy(-h / 8.0, &derivs[i + 1]);
        samples.push(mid);
    }
    samples.push(nodes[n].clone());
    TimeSeries::from_samples(*grid, samples)
}

/// Classical RK4 from `y0` at `grid.t0()`; returns the state at every node.
/// `trajectory[0] == y0` exactly.
pub fn integrate_ode<F>(rhs: F, y0: &DVector<f64>, grid: &TimeGrid) -> Result<Vec<DVector<f64>>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::IntegrationDiverged { node: 0 });
    }
    let dense = integrate_dense(grid, y0.clone(), Direction::Forward, |_, t, y| rhs(t, y))?;
    Ok(dense.nodes().cloned().collect())
}
