//! Planar serial arm with lumped point masses.
//!
//! Joint angles are relative (joint `j` rotates link `j` with respect to link
//! `j - 1`). Each link carries its mass at the midpoint and the payload sits at
//! the tip. With only point masses the inertia matrix reduces to
//! `M = Σ m Jₚᵀ Jₚ` over the lumped points, which keeps every term below in
//! closed form.

use nalgebra::{DMatrix, DVector, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};

use super::DynamicsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmModel {
    pub link_lengths: Vec<f64>,
    pub link_masses: Vec<f64>,
    pub payload_mass: f64,
    pub joint_viscous_friction: Vec<f64>,
    pub joint_stiffness: Vec<f64>,
    pub gravity: f64,
    pub torque_limit: f64,
}

impl ArmModel {
    /// Builds and validates a model. Friction and stiffness vectors must have
    /// one entry per link.
    pub fn new(
        link_lengths: Vec<f64>,
        link_masses: Vec<f64>,
        payload_mass: f64,
        joint_viscous_friction: Vec<f64>,
        joint_stiffness: Vec<f64>,
        gravity: f64,
        torque_limit: f64,
    ) -> Result<Self, DynamicsError> {
        let model = Self {
            link_lengths,
            link_masses,
            payload_mass,
            joint_viscous_friction,
            joint_stiffness,
            gravity,
            torque_limit,
        };
        model.validate()?;
        Ok(model)
    }

    /// Link lengths and masses with the defaults used throughout: 0.5 N·m·s/rad
    /// friction, 100 N·m/rad stiffness, 150 N·m torque limit, no payload.
    pub fn with_defaults(link_lengths: Vec<f64>, link_masses: Vec<f64>, gravity: f64) -> Result<Self, DynamicsError> {
        let n = link_lengths.len();
        Self::new(link_lengths, link_masses, 0.0, vec![0.5; n], vec![100.0; n], gravity, 150.0)
    }

    pub fn n_links(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let n = self.n_links();
        if n == 0 {
            return Err(DynamicsError::InvalidModel("arm needs at least one link".into()));
        }
        for (name, len) in [
            ("link_masses", self.link_masses.len()),
            ("joint_viscous_friction", self.joint_viscous_friction.len()),
            ("joint_stiffness", self.joint_stiffness.len()),
        ] {
            if len != n {
                return Err(DynamicsError::InvalidModel(format!(
                    "{name} has {len} entries, expected {n}"
                )));
            }
        }
        let nonneg = |name: &str, v: &[f64]| {
            if v.iter().all(|x| x.is_finite() && *x >= 0.0) {
                Ok(())
            } else {
                Err(DynamicsError::InvalidModel(format!("{name} must be finite and non-negative")))
            }
        };
        nonneg("link_lengths", &self.link_lengths)?;
        nonneg("link_masses", &self.link_masses)?;
        nonneg("joint_viscous_friction", &self.joint_viscous_friction)?;
        nonneg("joint_stiffness", &self.joint_stiffness)?;
        nonneg("payload_mass", &[self.payload_mass])?;
        nonneg("gravity", &[self.gravity])?;
        if !(self.torque_limit.is_finite() && self.torque_limit > 0.0) {
            return Err(DynamicsError::InvalidModel("torque_limit must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn check_dim(&self, what: &'static str, len: usize) -> Result<(), DynamicsError> {
        if len == self.n_links() {
            Ok(())
        } else {
            Err(DynamicsError::DimensionMismatch { what, expected: self.n_links(), got: len })
        }
    }

    /// Joint origins and lumped points for configuration `q`.
    pub fn kinematics(&self, q: &[f64]) -> Result<Kinematics, DynamicsError> {
        self.check_dim("q", q.len())?;
        Ok(Kinematics::new(self, q))
    }

    pub fn end_effector(&self, q: &[f64]) -> Result<Vector2<f64>, DynamicsError> {
        Ok(self.kinematics(q)?.tip())
    }

    pub fn mass_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
        Ok(self.kinematics(q)?.mass_matrix())
    }

    /// Christoffel-symbol Coriolis matrix, so that `Ṁ − 2C` is skew-symmetric.
    pub fn coriolis_matrix(&self, q: &[f64], qdot: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
        self.check_dim("qdot", qdot.len())?;
        Ok(self.kinematics(q)?.coriolis_matrix(qdot))
    }

    pub fn gravity_vector(&self, q: &[f64]) -> Result<DVector<f64>, DynamicsError> {
        Ok(self.kinematics(q)?.gravity_vector(self.gravity))
    }

    /// Gravitational potential energy; gravity points along −y.
    pub fn potential_energy(&self, q: &[f64]) -> Result<f64, DynamicsError> {
        let kin = self.kinematics(q)?;
        Ok(kin.points.iter().map(|p| p.mass * self.gravity * p.position.y).sum())
    }

    pub fn kinetic_energy(&self, q: &[f64], qdot: &[f64]) -> Result<f64, DynamicsError> {
        self.check_dim("qdot", qdot.len())?;
        let m = self.mass_matrix(q)?;
        let v = DVector::from_column_slice(qdot);
        Ok(0.5 * v.dot(&(m * &v)))
    }

    /// End-effector Jacobian (2 × n).
    pub fn jacobian(&self, q: &[f64]) -> Result<Matrix2xX<f64>, DynamicsError> {
        let kin = self.kinematics(q)?;
        Ok(kin.point_jacobian(kin.tip(), self.n_links()))
    }

    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.joint_stiffness))
    }
}

/// A lumped mass attached to link `link` (0-based); it moves with joints `0..=link`.
#[derive(Debug, Clone, Copy)]
pub struct LumpedPoint {
    pub mass: f64,
    pub link: usize,
    pub position: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub struct Kinematics {
    /// `origins[j]` is the position of joint `j`; `origins[n]` is the tip.
    pub origins: Vec<Vector2<f64>>,
    pub points: Vec<LumpedPoint>,
}

#[inline]
fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// `ẑ × a` for a planar vector.
#[inline]
fn perp(a: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-a.y, a.x)
}

impl Kinematics {
    fn new(model: &ArmModel, q: &[f64]) -> Self {
        let n = model.n_links();
        let mut origins = Vec::with_capacity(n + 1);
        let mut points = Vec::with_capacity(n + 1);
        let mut p = Vector2::zeros();
        let mut phi = 0.0;
        origins.push(p);
        for i in 0..n {
            phi += q[i];
            let dir = Vector2::new(phi.cos(), phi.sin());
            let l = model.link_lengths[i];
            if model.link_masses[i] > 0.0 {
                points.push(LumpedPoint { mass: model.link_masses[i], link: i, position: p + dir * (0.5 * l) });
            }
            p += dir * l;
            origins.push(p);
        }
        if model.payload_mass > 0.0 {
            points.push(LumpedPoint { mass: model.payload_mass, link: n - 1, position: p });
        }
        Self { origins, points }
    }

    pub fn tip(&self) -> Vector2<f64> {
        *self.origins.last().expect("origins always holds the base")
    }

    pub fn n(&self) -> usize {
        self.origins.len() - 1
    }

    /// Positional Jacobian of a point rigidly attached to link `link`.
    pub fn point_jacobian(&self, r: Vector2<f64>, link: usize) -> Matrix2xX<f64> {
        let mut jac = Matrix2xX::zeros(self.n());
        for j in 0..=link.min(self.n() - 1) {
            jac.set_column(j, &perp(&(r - self.origins[j])));
        }
        jac
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for pt in &self.points {
            for j in 0..=pt.link {
                let aj = pt.position - self.origins[j];
                for k in j..=pt.link {
                    let v = pt.mass * aj.dot(&(pt.position - self.origins[k]));
                    m[(j, k)] += v;
                    if k != j {
                        m[(k, j)] += v;
                    }
                }
            }
        }
        m
    }

    /// `dM[i]` holds `∂M/∂qᵢ`.
    ///
    /// For a point on link `l` and `i, j ≤ l`, `∂(r − oⱼ)/∂qᵢ = ẑ × (r − o_max(i,j))`.
    pub fn mass_matrix_derivatives(&self) -> Vec<DMatrix<f64>> {
        let n = self.n();
        let mut dm = vec![DMatrix::zeros(n, n); n];
        for pt in &self.points {
            let rel: Vec<Vector2<f64>> = (0..=pt.link).map(|j| pt.position - self.origins[j]).collect();
            for (i, dmi) in dm.iter_mut().enumerate().take(pt.link + 1) {
                for j in 0..=pt.link {
                    for k in 0..=pt.link {
                        let a = cross(&rel[i.max(j)], &rel[k]);
                        let b = cross(&rel[i.max(k)], &rel[j]);
                        dmi[(j, k)] += pt.mass * (a + b);
                    }
                }
            }
        }
        dm
    }

    pub fn coriolis_matrix(&self, qdot: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let dm = self.mass_matrix_derivatives();
        let mut c = DMatrix::zeros(n, n);
        for k in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (i, qd) in qdot.iter().enumerate() {
                    acc += 0.5 * (dm[i][(k, j)] + dm[j][(k, i)] - dm[k][(i, j)]) * qd;
                }
                c[(k, j)] = acc;
            }
        }
        c
    }

    pub fn gravity_vector(&self, gravity: f64) -> DVector<f64> {
        let n = self.n();
        let mut g = DVector::zeros(n);
        for pt in &self.points {
            for j in 0..=pt.link {
                // y-component of ẑ × (r − oⱼ)
                g[j] += pt.mass * gravity * (pt.position.x - self.origins[j].x);
            }
        }
        g
    }
}
