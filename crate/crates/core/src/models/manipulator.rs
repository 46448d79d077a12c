//! Planar three-link revolute arm in a vertical plane. Joint angles are
//! relative; `q = 0` hangs straight down.
//!
//! With absolute link angles `φ = S q` (`S` lower-triangular ones), the
//! kinetic energy is `½ φ̇ᵀ D(φ) φ̇` with `D_ab = d_ab cos(φ_a − φ_b)`, which
//! gives `M(q) = Sᵀ D S`, velocity terms `Sᵀ h` with
//! `h_a = Σ_b d_ab sin(φ_a − φ_b) φ̇_b²`, and gravity `Sᵀ ∂U/∂φ`.

use alloc::boxed::Box;
#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{Dynamics, NonlinearModel, ZeroCost};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManipulatorParams {
    pub masses: [f64; 3],
    pub lengths: [f64; 3],
    /// Distance from each joint to its link's center of mass.
    pub com_offsets: [f64; 3],
    /// Link inertias about their centers of mass.
    pub inertias: [f64; 3],
    pub gravity: f64,
}

impl Default for ManipulatorParams {
    /// Unit-mass, unit-length uniform rods under standard gravity.
    fn default() -> Self {
        Self {
            masses: [1.0; 3],
            lengths: [1.0; 3],
            com_offsets: [0.5; 3],
            inertias: [1.0 / 12.0; 3],
            gravity: 9.81,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Manipulator3Link {
    params: ManipulatorParams,
    /// Symmetric coupling coefficients `d_ab`.
    coupling: Matrix3<f64>,
    /// Gravity moment coefficients `k_a`, `U = −g Σ k_a cos φ_a`.
    moments: Vector3<f64>,
}

impl Manipulator3Link {
    pub fn new(params: ManipulatorParams) -> Result<Self> {
        let p = &params;
        let positive = p
            .masses
            .iter()
            .chain(&p.lengths)
            .chain(&p.com_offsets)
            .chain(&p.inertias)
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || !(p.gravity >= 0.0 && p.gravity.is_finite()) {
            return Err(Error::InvalidConfig(
                "manipulator masses, lengths, offsets and inertias must be positive".into(),
            ));
        }
        let [m1, m2, m3] = p.masses;
        let [l1, l2, _] = p.lengths;
        let [c1, c2, c3] = p.com_offsets;
        let [i1, i2, i3] = p.inertias;
        let d11 = m1 * c1 * c1 + (m2 + m3) * l1 * l1 + i1;
        let d22 = m2 * c2 * c2 + m3 * l2 * l2 + i2;
        let d33 = m3 * c3 * c3 + i3;
        let d12 = (m2 * c2 + m3 * l2) * l1;
        let d13 = m3 * c3 * l1;
        let d23 = m3 * c3 * l2;
        let coupling = Matrix3::new(d11, d12, d13, d12, d22, d23, d13, d23, d33);
        let moments = Vector3::new(m1 * c1 + (m2 + m3) * l1, m2 * c2 + m3 * l2, m3 * c3);
        Ok(Self {
            params,
            coupling,
            moments,
        })
    }

    pub fn params(&self) -> &ManipulatorParams {
        &self.params
    }

    fn absolute(q: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(q[0], q[0] + q[1], q[0] + q[1] + q[2])
    }

    /// `Sᵀ v`: suffix sums.
    fn to_joint(v: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(v[0] + v[1] + v[2], v[1] + v[2], v[2])
    }

    fn link_inertia(&self, phi: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::from_fn(|a, b| self.coupling[(a, b)] * (phi[a] - phi[b]).cos())
    }

    pub fn mass_matrix(&self, q: &Vector3<f64>) -> Matrix3<f64> {
        let d = self.link_inertia(&Self::absolute(q));
        let s = Matrix3::new(1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0);
        s.transpose() * d * s
    }

    /// Velocity-product (Coriolis and centrifugal) torques `C(q, q̇)`.
    pub fn coriolis(&self, q: &Vector3<f64>, qd: &Vector3<f64>) -> Vector3<f64> {
        let phi = Self::absolute(q);
        let phid = Self::absolute(qd);
        let h = Vector3::from_fn(|a, _| {
            (0..3)
                .map(|b| self.coupling[(a, b)] * (phi[a] - phi[b]).sin() * phid[b] * phid[b])
                .sum()
        });
        Self::to_joint(&h)
    }

    pub fn gravity_torque(&self, q: &Vector3<f64>) -> Vector3<f64> {
        let phi = Self::absolute(q);
        let g = self.params.gravity;
        let du = Vector3::from_fn(|a, _| g * self.moments[a] * phi[a].sin());
        Self::to_joint(&du)
    }

    pub fn kinetic_energy(&self, q: &Vector3<f64>, qd: &Vector3<f64>) -> f64 {
        0.5 * qd.dot(&(self.mass_matrix(q) * qd))
    }

    pub fn potential_energy(&self, q: &Vector3<f64>) -> f64 {
        let phi = Self::absolute(q);
        -self.params.gravity * (0..3).map(|a| self.moments[a] * phi[a].cos()).sum::<f64>()
    }

    fn split(x: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>) {
        (
            Vector3::new(x[0], x[1], x[2]),
            Vector3::new(x[3], x[4], x[5]),
        )
    }

    fn inverse_mass(&self, q: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let m = self.mass_matrix(q);
        m.cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::SingularMassMatrix { q: [q[0], q[1], q[2]] })
    }

    fn assemble(
        &self,
        q: &Vector3<f64>,
        qd: &Vector3<f64>,
        minv: &Matrix3<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let acc = minv * (-self.coriolis(q, qd) - self.gravity_torque(q));
        let drift = DVector::from_vec(alloc::vec![qd[0], qd[1], qd[2], acc[0], acc[1], acc[2]]);
        let mut input = DMatrix::zeros(6, 3);
        input.view_mut((3, 0), (3, 3)).copy_from(minv);
        (drift, input)
    }
}

impl Dynamics for Manipulator3Link {
    fn state_dim(&self) -> usize {
        6
    }

    fn input_dim(&self) -> usize {
        3
    }

    fn drift(&self, _t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (q, qd) = Self::split(x);
        let minv = self.inverse_mass(&q)?;
        let acc = minv * (-self.coriolis(&q, &qd) - self.gravity_torque(&q));
        Ok(DVector::from_vec(alloc::vec![
            qd[0], qd[1], qd[2], acc[0], acc[1], acc[2]
        ]))
    }

    fn input_matrix(&self, _t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (q, _) = Self::split(x);
        let minv = self.inverse_mass(&q)?;
        let mut input = DMatrix::zeros(6, 3);
        input.view_mut((3, 0), (3, 3)).copy_from(&minv);
        Ok(input)
    }

    fn state_dependent_input(&self) -> bool {
        true
    }

    fn drift_and_input(&self, _t: f64, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (q, qd) = Self::split(x);
        let minv = self.inverse_mass(&q)?;
        Ok(self.assemble(&q, &qd, &minv))
    }
}

/// Three-link arm with torque inputs entering through `g(X) = [0; M(q)⁻¹]`
/// and no state cost.
pub fn manipulator_3link(params: ManipulatorParams, eps: f64) -> Result<NonlinearModel> {
    NonlinearModel::new(
        Box::new(Manipulator3Link::new(params)?),
        Box::new(ZeroCost),
        eps,
    )
}
