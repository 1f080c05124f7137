//! Prescribed planar motion of the mobile base and the inertial pseudo-forces
//! it induces on the arm.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::{ArmModel, DynamicsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSegment {
    pub duration: f64,
    /// World-frame linear acceleration, m/s².
    pub linear_accel: [f64; 2],
    /// rad/s²
    pub yaw_accel: f64,
}

/// Piecewise-constant acceleration profile. An empty segment list means the
/// base keeps its initial velocity and yaw rate forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseMotionProfile {
    #[serde(default)]
    pub initial_velocity: [f64; 2],
    #[serde(default)]
    pub initial_yaw_rate: f64,
    #[serde(default)]
    pub segments: Vec<BaseSegment>,
}

/// Base motion at a single instant, expressed for the arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseKinematics {
    pub yaw: f64,
    pub yaw_rate: f64,
    pub yaw_accel: f64,
    /// Linear acceleration rotated into the base frame.
    pub linear_accel: Vector2<f64>,
}

impl BaseKinematics {
    pub const AT_REST: Self = Self { yaw: 0.0, yaw_rate: 0.0, yaw_accel: 0.0, linear_accel: Vector2::new(0.0, 0.0) };
}

impl BaseMotionProfile {
    pub fn at_rest() -> Self {
        Self { initial_velocity: [0.0; 2], initial_yaw_rate: 0.0, segments: Vec::new() }
    }

    pub fn constant(velocity: [f64; 2], yaw_rate: f64) -> Self {
        Self { initial_velocity: velocity, initial_yaw_rate: yaw_rate, segments: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let finite = self.initial_velocity.iter().all(|v| v.is_finite()) && self.initial_yaw_rate.is_finite();
        if !finite {
            return Err(DynamicsError::InvalidProfile("initial velocity and yaw rate must be finite".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration.is_finite() && s.duration > 0.0) {
                return Err(DynamicsError::InvalidProfile(format!("segment {i}: duration must be positive")));
            }
            if !(s.linear_accel.iter().all(|a| a.is_finite()) && s.yaw_accel.is_finite()) {
                return Err(DynamicsError::InvalidProfile(format!("segment {i}: accelerations must be finite")));
            }
        }
        Ok(())
    }

    /// Time span covered by the profile.
    pub fn horizon(&self) -> f64 {
        if self.segments.is_empty() {
            f64::INFINITY
        } else {
            self.segments.iter().map(|s| s.duration).sum()
        }
    }

    pub fn is_static(&self) -> bool {
        self.initial_yaw_rate == 0.0
            && self.segments.iter().all(|s| s.linear_accel == [0.0, 0.0] && s.yaw_accel == 0.0)
    }

    pub fn kinematics_at(&self, t: f64) -> Result<BaseKinematics, DynamicsError> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon) {
            return Err(DynamicsError::OutsideHorizon { t, horizon });
        }
        let mut start = 0.0;
        let mut yaw = 0.0;
        let mut yaw_rate = self.initial_yaw_rate;
        for (i, s) in self.segments.iter().enumerate() {
            let end = start + s.duration;
            // Right-continuous: a boundary instant belongs to the next segment,
            // except at the very end of the profile.
            if t < end || i + 1 == self.segments.len() {
                let tau = t - start;
                yaw += yaw_rate * tau + 0.5 * s.yaw_accel * tau * tau;
                yaw_rate += s.yaw_accel * tau;
                let (sn, cs) = yaw.sin_cos();
                let [ax, ay] = s.linear_accel;
                return Ok(BaseKinematics {
                    yaw,
                    yaw_rate,
                    yaw_accel: s.yaw_accel,
                    linear_accel: Vector2::new(cs * ax + sn * ay, -sn * ax + cs * ay),
                });
            }
            yaw += yaw_rate * s.duration + 0.5 * s.yaw_accel * s.duration * s.duration;
            yaw_rate += s.yaw_accel * s.duration;
            start = end;
        }
        Ok(BaseKinematics { yaw: yaw_rate * t, yaw_rate, yaw_accel: 0.0, linear_accel: Vector2::zeros() })
    }
}

/// Joint torques equivalent to the translational, centrifugal, Coriolis and
/// Euler pseudo-forces on every lumped mass, mapped through that point's
/// Jacobian transpose.
pub fn disturbance_torques(
    model: &ArmModel,
    q: &[f64],
    qdot: &[f64],
    base: &BaseKinematics,
) -> Result<DVector<f64>, DynamicsError> {
    model.check_dim("qdot", qdot.len())?;
    let kin = model.kinematics(q)?;
    let n = model.n_links();
    let mut tau = DVector::zeros(n);
    if *base == BaseKinematics::AT_REST {
        return Ok(tau);
    }
    let w = base.yaw_rate;
    let alpha = base.yaw_accel;
    for pt in &kin.points {
        let jac = kin.point_jacobian(pt.position, pt.link);
        let v = &jac * DVector::from_column_slice(qdot);
        let v = Vector2::new(v[0], v[1]);
        let r = pt.position;
        let accel = base.linear_accel - r * (w * w)
            + Vector2::new(-v.y, v.x) * (2.0 * w)
            + Vector2::new(-r.y, r.x) * alpha;
        let force = -accel * pt.mass;
        tau += jac.transpose() * force;
    }
    Ok(tau)
}

pub fn base_disturbance_torques(
    model: &ArmModel,
    q: &[f64],
    qdot: &[f64],
    profile: &BaseMotionProfile,
    t: f64,
) -> Result<DVector<f64>, DynamicsError> {
    let base = profile.kinematics_at(t)?;
    disturbance_torques(model, q, qdot, &base)
}
