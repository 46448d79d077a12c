use nalgebra::{DMatrix, DVector};

use super::StateCost;

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCost;

impl StateCost for ZeroCost {
    fn value(&self, _x: &DVector<f64>, _anchor: &DVector<f64>) -> f64 {
        0.0
    }
    fn gradient(&self, x: &DVector<f64>, _anchor: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn hessian(&self, x: &DVector<f64>, _anchor: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// `V(x) = ½ (x − c)ᵀ W (x − c)` about a fixed center `c`.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    hessian: DMatrix<f64>,
    center: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(hessian: DMatrix<f64>, center: DVector<f64>) -> Self {
        Self {
            hessian: crate::numerics::symmetrize(&hessian),
            center,
        }
    }

    /// `½ xᵀ W x`
    pub fn centered(hessian: DMatrix<f64>) -> Self {
        let n = hessian.nrows();
        Self::new(hessian, DVector::zeros(n))
    }
}

impl StateCost for QuadraticCost {
    fn value(&self, x: &DVector<f64>, _anchor: &DVector<f64>) -> f64 {
        let e = x - &self.center;
        0.5 * e.dot(&(&self.hessian * &e))
    }
    fn gradient(&self, x: &DVector<f64>, _anchor: &DVector<f64>) -> DVector<f64> {
        &self.hessian * (x - &self.center)
    }
    fn hessian(&self, _x: &DVector<f64>, _anchor: &DVector<f64>) -> DMatrix<f64> {
        self.hessian.clone()
    }
}

/// `V(x) = ½ (x − z)ᵀ W (x − z)` where `z` is the current mean (the anchor).
#[derive(Debug, Clone)]
pub struct TrackingCost {
    hessian: DMatrix<f64>,
}

impl TrackingCost {
    pub fn new(hessian: DMatrix<f64>) -> Self {
        Self {
            hessian: crate::numerics::symmetrize(&hessian),
        }
    }
}

impl StateCost for TrackingCost {
    fn value(&self, x: &DVector<f64>, anchor: &DVector<f64>) -> f64 {
        let e = x - anchor;
        0.5 * e.dot(&(&self.hessian * &e))
    }
    fn gradient(&self, x: &DVector<f64>, anchor: &DVector<f64>) -> DVector<f64> {
        &self.hessian * (x - anchor)
    }
    fn hessian(&self, _x: &DVector<f64>, _anchor: &DVector<f64>) -> DMatrix<f64> {
        self.hessian.clone()
    }
}
