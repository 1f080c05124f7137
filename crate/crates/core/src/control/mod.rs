//! Joint-level controllers: the constant-gain PID baseline and the nonlinear
//! adaptive PID whose proportional and derivative gains follow the tracking
//! error magnitude.

mod zn;

pub use zn::{
    analyze_oscillation, ziegler_nichols_tune, FrozenJointPlant, Oscillation, ProbePlant, TransferFunctionPlant,
    ZnConfig, ZnError, ZnResult,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid controller parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: &'static str },
}

fn require(ok: bool, field: &'static str, reason: &'static str) -> Result<(), ControlError> {
    if ok {
        Ok(())
    } else {
        Err(ControlError::InvalidParameter { field, reason })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Result<Self, ControlError> {
        let g = Self { kp, ki, kd };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        require(self.kp.is_finite() && self.kp >= 0.0, "kp", "must be finite and non-negative")?;
        require(self.ki.is_finite() && self.ki >= 0.0, "ki", "must be finite and non-negative")?;
        require(self.kd.is_finite() && self.kd >= 0.0, "kd", "must be finite and non-negative")
    }
}

/// The five tunable shape parameters of the adaptive gains plus the fixed
/// integral gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearPidParams {
    pub kp_min: f64,
    pub kp_max: f64,
    /// 1/rad
    pub tau_p: f64,
    pub kd_max: f64,
    /// 1/rad²
    pub tau_d: f64,
    pub ki: f64,
}

impl NonlinearPidParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        let fin = |v: f64| v.is_finite();
        require(fin(self.kp_min) && self.kp_min > 0.0, "kp_min", "must be positive")?;
        require(fin(self.kp_max) && self.kp_max >= self.kp_min, "kp_max", "must be at least kp_min")?;
        require(fin(self.tau_p) && self.tau_p >= 0.0, "tau_p", "must be non-negative")?;
        require(fin(self.kd_max) && self.kd_max >= 0.0, "kd_max", "must be non-negative")?;
        require(fin(self.tau_d) && self.tau_d >= 0.0, "tau_d", "must be non-negative")?;
        require(fin(self.ki) && self.ki >= 0.0, "ki", "must be non-negative")
    }

    /// Parameters whose gain laws reduce to the given constant gains.
    pub fn collapsed(gains: PidGains) -> Self {
        Self { kp_min: gains.kp, kp_max: gains.kp, tau_p: 1.0, kd_max: gains.kd, tau_d: 0.0, ki: gains.ki }
    }
}

/// Proportional gain: `kp_max − 2(kp_max − kp_min) / (exp(−τₚe) + exp(τₚe))`.
///
/// Equals `kp_min` at zero error and approaches `kp_max` as `|e|` grows.
pub fn kp_of_error(params: &NonlinearPidParams, e: f64) -> f64 {
    let x = params.tau_p * e;
    params.kp_max - 2.0 * (params.kp_max - params.kp_min) / ((-x).exp() + x.exp())
}

/// Derivative gain: `kd_max · exp(−τ_d e²)`, largest at zero error.
pub fn kd_of_error(params: &NonlinearPidParams, e: f64) -> f64 {
    let kd = params.kd_max * (-params.tau_d * e * e).exp();
    // exp underflows once τ_d e² passes ~745; the gain itself never reaches 0.
    if kd == 0.0 {
        params.kd_max.min(f64::from_bits(1))
    } else {
        kd
    }
}

/// Per-joint controller memory. `Default` is the zeroed state used at the
/// start of every rollout.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControllerState {
    /// rad·s
    pub integral_accumulator: f64,
    /// rad/s
    pub previous_filtered_error_rate: f64,
    /// rad
    pub previous_error: f64,
}

/// Sampling settings shared by both controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub dt: f64,
    /// Low-pass cutoff on the backward-difference error rate, rad/s.
    pub derivative_cutoff: f64,
    /// Anti-windup bound on `|ki · ∫e|`, N·m.
    pub integral_torque_cap: f64,
}

impl Discretization {
    pub const DEFAULT_DERIVATIVE_CUTOFF: f64 = 100.0;

    pub fn new(dt: f64, torque_limit: f64) -> Self {
        Self { dt, derivative_cutoff: Self::DEFAULT_DERIVATIVE_CUTOFF, integral_torque_cap: torque_limit }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub u: f64,
    pub state: ControllerState,
    pub kp: f64,
    pub kd: f64,
}

fn pid_update(
    kp_of: impl Fn(f64) -> f64,
    kd_of: impl Fn(f64) -> f64,
    ki: f64,
    state: &ControllerState,
    theta_ref: f64,
    theta: f64,
    disc: &Discretization,
) -> ControlOutput {
    let dt = disc.dt;
    let e = theta_ref - theta;

    let raw_rate = (e - state.previous_error) / dt;
    let blend = 1.0 - (-disc.derivative_cutoff * dt).exp();
    let rate = state.previous_filtered_error_rate + blend * (raw_rate - state.previous_filtered_error_rate);

    let mut integral = state.integral_accumulator + 0.5 * dt * (e + state.previous_error);
    if ki > 0.0 {
        let bound = disc.integral_torque_cap / ki;
        integral = integral.clamp(-bound, bound);
    }

    let kp = kp_of(e);
    let kd = kd_of(e);
    let u = kp * e + ki * integral + kd * rate;
    ControlOutput {
        u,
        state: ControllerState { integral_accumulator: integral, previous_filtered_error_rate: rate, previous_error: e },
        kp,
        kd,
    }
}

/// One sample of the nonlinear adaptive PID. The returned `u` is unsaturated.
pub fn control_step(
    params: &NonlinearPidParams,
    state: &ControllerState,
    theta_ref: f64,
    theta: f64,
    disc: &Discretization,
) -> ControlOutput {
    pid_update(|e| kp_of_error(params, e), |e| kd_of_error(params, e), params.ki, state, theta_ref, theta, disc)
}

/// One sample of the constant-gain PID, same discretization as [`control_step`].
pub fn pid_control_step(
    gains: &PidGains,
    state: &ControllerState,
    theta_ref: f64,
    theta: f64,
    disc: &Discretization,
) -> ControlOutput {
    pid_update(|_| gains.kp, |_| gains.kd, gains.ki, state, theta_ref, theta, disc)
}
