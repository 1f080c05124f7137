use nalgebra::{DVector, linalg::Cholesky};

use super::{base::disturbance_torques, ArmModel, BaseMotionProfile, DynamicsError};

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub t: f64,
}

impl JointState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self { q, qdot: vec![0.0; n], t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.qdot).all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().chain(&self.qdot).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One classical Runge–Kutta step of `ẋ = f(t, x)`.
pub fn rk4_step<F, E>(mut f: F, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>, E>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
{
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k1))?;
    let k3 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k2))?;
    let k4 = f(t + dt, &axpy(dt, &k3))?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Clamps each torque to `±limit`.
pub fn saturate(torques: &[f64], limit: f64) -> Vec<f64> {
    torques.iter().map(|u| u.clamp(-limit, limit)).collect()
}

/// Joint accelerations for the given (already saturated) actuator torques.
pub fn forward_dynamics(
    model: &ArmModel,
    q: &[f64],
    qdot: &[f64],
    torques: &[f64],
    base: &BaseMotionProfile,
    t: f64,
) -> Result<DVector<f64>, DynamicsError> {
    let kin = model.kinematics(q)?;
    let qd = DVector::from_column_slice(qdot);
    let m = kin.mass_matrix();
    let mut rhs = DVector::from_column_slice(torques) - kin.coriolis_matrix(qdot) * &qd - kin.gravity_vector(model.gravity);
    for (i, b) in model.joint_viscous_friction.iter().enumerate() {
        rhs[i] -= b * qdot[i];
    }
    if !base.is_static() {
        rhs += disturbance_torques(model, q, qdot, &base.kinematics_at(t)?)?;
    }
    if !(m.iter().all(|v| v.is_finite()) && rhs.iter().all(|v| v.is_finite())) {
        return Err(DynamicsError::Diverged { t });
    }
    let chol = Cholesky::new(m).ok_or(DynamicsError::SingularMassMatrix)?;
    Ok(chol.solve(&rhs))
}

/// Advances the arm by one RK4 step with torques clamped to the model's limit
/// and held constant over the step.
pub fn step(
    model: &ArmModel,
    state: &JointState,
    applied_torques: &[f64],
    base: &BaseMotionProfile,
    dt: f64,
) -> Result<JointState, DynamicsError> {
    let n = model.n_links();
    model.check_dim("q", state.q.len())?;
    model.check_dim("qdot", state.qdot.len())?;
    model.check_dim("torques", applied_torques.len())?;
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidTimestep(dt));
    }
    if !state.is_finite() {
        return Err(DynamicsError::Diverged { t: state.t });
    }
    let tau = saturate(applied_torques, model.torque_limit);
    let x0: Vec<f64> = state.q.iter().chain(&state.qdot).copied().collect();
    let x1 = rk4_step(
        |t, x: &[f64]| {
            let (q, qd) = x.split_at(n);
            let qdd = forward_dynamics(model, q, qd, &tau, base, t)?;
            Ok::<_, DynamicsError>(qd.iter().copied().chain(qdd.iter().copied()).collect())
        },
        state.t,
        &x0,
        dt,
    )?;
    let next = JointState { q: x1[..n].to_vec(), qdot: x1[n..].to_vec(), t: state.t + dt };
    if !next.is_finite() {
        return Err(DynamicsError::Diverged { t: next.t });
    }
    Ok(next)
}
