use alloc::boxed::Box;
use nalgebra::{DMatrix, DVector};

use super::{Dynamics, NonlinearModel, TrackingCost};
use crate::error::{Error, Result};

/// Weight `Q` of the tracking cost `(x − z)ᵀ Q (x − z)`; the Hessian is `2Q`.
pub const TRACKING_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DragForm {
    /// `−c_d ‖v‖ v`
    #[default]
    Quadratic,
    /// `−c_d v`
    Linear,
}

/// Planar double integrator with drag: state `[p₁, p₂, v₁, v₂]`,
/// `ṗ = v`, `v̇ = u − drag(v)`, input matrix `[0; I₂]`.
#[derive(Debug, Clone, Copy)]
pub struct DoubleIntegratorDrag {
    pub drag_coefficient: f64,
    pub drag_form: DragForm,
}

impl DoubleIntegratorDrag {
    fn drag(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.drag_form {
            DragForm::Quadratic => v * (self.drag_coefficient * v.norm()),
            DragForm::Linear => v * self.drag_coefficient,
        }
    }

    /// Jacobian of the drag force with respect to velocity. Zero at `v = 0`
    /// for the quadratic form.
    fn drag_jacobian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let c = self.drag_coefficient;
        match self.drag_form {
            DragForm::Linear => DMatrix::identity(2, 2) * c,
            DragForm::Quadratic => {
                let speed = v.norm();
                if speed == 0.0 {
                    return DMatrix::zeros(2, 2);
                }
                (DMatrix::identity(2, 2) * speed + v * v.transpose() / speed) * c
            }
        }
    }
}

impl Dynamics for DoubleIntegratorDrag {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn drift(&self, _t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let v = x.rows(2, 2).into_owned();
        let acc = -self.drag(&v);
        Ok(DVector::from_vec(alloc::vec![v[0], v[1], acc[0], acc[1]]))
    }

    fn drift_jacobian(&self, _t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let v = x.rows(2, 2).into_owned();
        let mut jac = DMatrix::zeros(4, 4);
        jac[(0, 2)] = 1.0;
        jac[(1, 3)] = 1.0;
        jac.view_mut((2, 2), (2, 2))
            .copy_from(&(-self.drag_jacobian(&v)));
        Ok(jac)
    }

    fn input_matrix(&self, _t: f64, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut b = DMatrix::zeros(4, 2);
        b[(2, 0)] = 1.0;
        b[(3, 1)] = 1.0;
        Ok(b)
    }
}

/// Double integrator with quadratic drag and the mean-tracking state cost
/// `(x − z)ᵀ (0.1 I)(x − z)`.
pub fn double_integrator_drag(drag_coefficient: f64, eps: f64) -> Result<NonlinearModel> {
    double_integrator_drag_with(drag_coefficient, eps, DragForm::Quadratic)
}

pub fn double_integrator_drag_with(
    drag_coefficient: f64,
    eps: f64,
    drag_form: DragForm,
) -> Result<NonlinearModel> {
    if !(drag_coefficient >= 0.0 && drag_coefficient.is_finite()) {
        return Err(Error::InvalidConfig(alloc::format!(
            "drag coefficient must be non-negative, got {drag_coefficient}"
        )));
    }
    NonlinearModel::new(
        Box::new(DoubleIntegratorDrag {
            drag_coefficient,
            drag_form,
        }),
        Box::new(TrackingCost::new(
            DMatrix::identity(4, 4) * (2.0 * TRACKING_WEIGHT),
        )),
        eps,
    )
}
