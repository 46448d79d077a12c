#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `eps^{1/3} · max(1, ‖x‖_∞)`, the usual optimum for central differences.
pub fn default_fd_step(x: &DVector<f64>) -> f64 {
    f64::EPSILON.cbrt() * x.amax().max(1.0)
}

/// Central-difference gradient of a scalar map.
pub fn fd_gradient<F>(mut phi: F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = phi(&probe)?;
        if !plus.is_finite() {
            return Err(Error::NonFiniteEvaluation {
                at: probe.iter().copied().collect(),
            });
        }
        probe[i] = x[i] - h;
        let minus = phi(&probe)?;
        if !minus.is_finite() {
            return Err(Error::NonFiniteEvaluation {
                at: probe.iter().copied().collect(),
            });
        }
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Fourth-order central-difference gradient,
/// `(−φ(x+2h) + 8φ(x+h) − 8φ(x−h) + φ(x−2h)) / 12h` per coordinate.
pub fn fd_gradient4<F>(mut phi: F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let mut at = |offset: f64| {
            probe[i] = x[i] + offset;
            let v = phi(&probe)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteEvaluation {
                    at: probe.iter().copied().collect(),
                });
            }
            Ok(v)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        probe[i] = x[i];
        grad[i] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
    }
    Ok(grad)
}

/// Central-difference Jacobian, entry `(i, j) = ∂f_i/∂x_j`.
pub fn fd_jacobian<F>(mut f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut probe = x.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let plus = f(&probe)?;
        probe[j] = x[j] - h;
        let minus = f(&probe)?;
        probe[j] = x[j];
        let col = (plus - minus) / (2.0 * h);
        if !col.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteEvaluation {
                at: x.iter().copied().collect(),
            });
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(col.len(), x.len()));
        jac.set_column(j, &col);
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}
