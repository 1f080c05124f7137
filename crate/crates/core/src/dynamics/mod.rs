//! Planar manipulator dynamics on a moving base.

mod arm;
mod base;
mod compliance;
mod integrate;

pub use arm::{ArmModel, Kinematics, LumpedPoint};
pub use base::{base_disturbance_torques, disturbance_torques, BaseKinematics, BaseMotionProfile, BaseSegment};
pub use compliance::{
    compliance_ellipsoid, compliance_matrix, compliance_sweep, ComplianceEllipsoid, ComplianceRow, SINGULARITY_TOLERANCE,
};
pub use integrate::{forward_dynamics, rk4_step, saturate, step, JointState};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("{what} has dimension {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("invalid base profile: {0}")]
    InvalidProfile(String),
    #[error("time {t} s is outside the base profile horizon [0, {horizon}] s")]
    OutsideHorizon { t: f64, horizon: f64 },
    #[error("singular configuration (|det(J K Jᵀ)| = {det:e})")]
    SingularConfiguration { det: f64 },
    #[error("mass matrix is not positive definite")]
    SingularMassMatrix,
    #[error("timestep must be positive, got {0}")]
    InvalidTimestep(f64),
    #[error("simulation diverged at t = {t} s")]
    Diverged { t: f64 },
}
