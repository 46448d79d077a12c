use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Uniform discretization of a horizon `[t0, t1]` into `n_steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) || n_steps < 2 {
            return Err(Error::InvalidGrid { t0, t1, n_steps });
        }
        Ok(Self { t0, t1, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn step(&self) -> f64 {
        self.duration() / self.n_steps as f64
    }

    /// Time of node `i`, `t0 + i * (t1 - t0) / n_steps`.
    pub fn node(&self, i: usize) -> f64 {
        self.sample_time(2 * i)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(move |i| self.node(i))
    }

    /// Number of sample points: every node plus every interval midpoint.
    pub fn n_samples(&self) -> usize {
        2 * self.n_steps + 1
    }

    /// Time of sample `k`; even `k` are nodes, odd `k` are interval midpoints.
    pub fn sample_time(&self, k: usize) -> f64 {
        if k == 2 * self.n_steps {
            return self.t1;
        }
        self.t0 + k as f64 * self.duration() / (2 * self.n_steps) as f64
    }

    /// Returns `(k, w)` such that `t` lies between samples `k` and `k + 1`
    /// at fraction `w`. Times outside the horizon clamp to the end samples.
    fn locate(&self, t: f64) -> (usize, f64) {
        let last = 2 * self.n_steps;
        let s = (t - self.t0) / self.duration() * last as f64;
        if s.is_nan() || s <= 0.0 {
            return (0, 0.0);
        }
        if s >= last as f64 {
            return (last - 1, 1.0);
        }
        let k = (s as usize).min(last - 1);
        (k, s - k as f64)
    }
}

/// Values that can be added and scaled; the state types of every ODE here.
pub trait VectorSpace: Clone {
    /// `self + alpha * other`
    fn axpy(&self, alpha: f64, other: &Self) -> Self;
    fn scale(&self, alpha: f64) -> Self;
    fn all_finite(&self) -> bool;
}

impl VectorSpace for f64 {
    fn axpy(&self, alpha: f64, other: &Self) -> Self {
        self + alpha * other
    }
    fn scale(&self, alpha: f64) -> Self {
        self * alpha
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl VectorSpace for DVector<f64> {
    fn axpy(&self, alpha: f64, other: &Self) -> Self {
        let mut out = self.clone();
        nalgebra::Matrix::axpy(&mut out, alpha, other, 1.0);
        out
    }
    fn scale(&self, alpha: f64) -> Self {
        self * alpha
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl VectorSpace for DMatrix<f64> {
    fn axpy(&self, alpha: f64, other: &Self) -> Self {
        let mut out = self.clone();
        out.zip_apply(other, |a, b| *a += alpha * b);
        out
    }
    fn scale(&self, alpha: f64) -> Self {
        self * alpha
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl<A: VectorSpace, B: VectorSpace> VectorSpace for (A, B) {
    fn axpy(&self, alpha: f64, other: &Self) -> Self {
        (self.0.axpy(alpha, &other.0), self.1.axpy(alpha, &other.1))
    }
    fn scale(&self, alpha: f64) -> Self {
        (self.0.scale(alpha), self.1.scale(alpha))
    }
    fn all_finite(&self) -> bool {
        self.0.all_finite() && self.1.all_finite()
    }
}

/// A quantity sampled on a [`TimeGrid`] at every node and every interval
/// midpoint.
///
/// Midpoint samples are what the fixed-step RK4 stages consume, so a series
/// produced by one integration can drive another without interpolation
/// error. Between samples, evaluation is piecewise linear.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T> {
    grid: TimeGrid,
    samples: Vec<T>,
}

pub type TimeIndexedMatrix = TimeSeries<DMatrix<f64>>;
pub type TimeIndexedVector = TimeSeries<DVector<f64>>;

impl<T> TimeSeries<T> {
    pub fn from_samples(grid: TimeGrid, samples: Vec<T>) -> Result<Self> {
        if samples.len() != grid.n_samples() {
            return Err(Error::DimensionMismatch {
                what: "time series sample count",
                expected: (grid.n_samples(), 1),
                found: (samples.len(), 1),
            });
        }
        Ok(Self { grid, samples })
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(usize, f64) -> T) -> Self {
        let samples = (0..grid.n_samples())
            .map(|k| f(k, grid.sample_time(k)))
            .collect();
        Self { grid, samples }
    }

    pub fn try_from_fn<E>(
        grid: TimeGrid,
        mut f: impl FnMut(usize, f64) -> core::result::Result<T, E>,
    ) -> core::result::Result<Self, E> {
        let samples = (0..grid.n_samples())
            .map(|k| f(k, grid.sample_time(k)))
            .collect::<core::result::Result<Vec<_>, E>>()?;
        Ok(Self { grid, samples })
    }

    /// A series holding the same value at every sample.
    pub fn constant(grid: TimeGrid, value: T) -> Self
    where
        T: Clone,
    {
        Self {
            grid,
            samples: alloc::vec![value; grid.n_samples()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample(&self, k: usize) -> &T {
        &self.samples[k]
    }

    pub fn node(&self, i: usize) -> &T {
        &self.samples[2 * i]
    }

    pub fn first(&self) -> &T {
        &self.samples[0]
    }

    pub fn last(&self) -> &T {
        &self.samples[self.samples.len() - 1]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &T> + '_ {
        self.samples.iter().step_by(2)
    }

    pub fn map<U>(&self, mut f: impl FnMut(usize, &T) -> U) -> TimeSeries<U> {
        TimeSeries {
            grid: self.grid,
            samples: self
                .samples
                .iter()
                .enumerate()
                .map(|(k, v)| f(k, v))
                .collect(),
        }
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }
}

impl<T: VectorSpace> TimeSeries<T> {
    /// Builds a series from node values alone, filling midpoints by linear
    /// interpolation.
    pub fn from_nodes(grid: TimeGrid, nodes: Vec<T>) -> Result<Self> {
        if nodes.len() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "time series node count",
                expected: (grid.n_nodes(), 1),
                found: (nodes.len(), 1),
            });
        }
        let mut samples = Vec::with_capacity(grid.n_samples());
        for (i, v) in nodes.iter().enumerate() {
            if i > 0 {
                samples.push(nodes[i - 1].scale(0.5).axpy(0.5, v));
            }
            samples.push(v.clone());
        }
        Ok(Self { grid, samples })
    }

    /// Piecewise-linear evaluation; exact at every stored sample.
    pub fn at(&self, t: f64) -> T {
        let (k, w) = self.grid.locate(t);
        if w == 0.0 {
            return self.samples[k].clone();
        }
        if w == 1.0 {
            return self.samples[k + 1].clone();
        }
        self.samples[k]
            .scale(1.0 - w)
            .axpy(w, &self.samples[k + 1])
    }
}

/// Composite Simpson quadrature over the horizon using node and midpoint
/// samples.
pub fn integrate_series<T: VectorSpace>(series: &TimeSeries<T>) -> T {
    let grid = series.grid();
    let h = grid.step();
    let s = series.samples();
    let mut acc = s[0].scale(0.0);
    for i in 0..grid.n_steps() {
        acc = acc
            .axpy(h / 6.0, &s[2 * i])
            .axpy(4.0 * h / 6.0, &s[2 * i + 1])
            .axpy(h / 6.0, &s[2 * i + 2]);
    }
    acc
}
