//! Closed-loop Ziegler–Nichols tuning (ultimate-gain method).
//!
//! The proportional-only gain is raised geometrically until the step response
//! shows a sustained oscillation. The bracket between the last decaying gain
//! and the first sustained one is then bisected to the neutral-stability
//! point, where the oscillation amplitude neither grows nor decays; that gain
//! and its period are `K_u` and `T_u`.

use thiserror::Error;

use super::PidGains;
use crate::dynamics::{rk4_step, ArmModel, DynamicsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZnError {
    #[error("no sustained oscillation found below the gain cap {cap}")]
    NoOscillationFound { cap: f64 },
    #[error("probe diverged at proportional gain {gain} (t = {t} s)")]
    UnstableProbe { gain: f64, t: f64 },
    #[error("joint index {index} out of range for a {n}-link arm")]
    BadJoint { index: usize, n: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZnConfig {
    pub dt: f64,
    /// Length of each proportional-only probe, s.
    pub duration: f64,
    pub step_amplitude: f64,
    pub initial_gain: f64,
    pub growth: f64,
    pub gain_cap: f64,
    pub min_half_periods: usize,
    pub max_period_spread: f64,
    pub max_amplitude_decay: f64,
    /// Bisection steps used to locate the neutral-stability gain; 0 keeps the
    /// first sustained gain from the sweep.
    pub refine_iterations: usize,
}

impl Default for ZnConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            duration: 40.0,
            step_amplitude: 0.05,
            initial_gain: 1.0,
            growth: 1.2,
            gain_cap: 1e4,
            min_half_periods: 6,
            max_period_spread: 0.10,
            max_amplitude_decay: 0.05,
            refine_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZnResult {
    pub ultimate_gain: f64,
    pub ultimate_period: f64,
    pub gains: PidGains,
}

impl ZnResult {
    /// Classic table: `kp = 0.6 K_u`, `ki = 1.2 K_u / T_u`, `kd = 0.075 K_u T_u`.
    pub fn from_ultimate(ku: f64, tu: f64) -> Self {
        Self {
            ultimate_gain: ku,
            ultimate_period: tu,
            gains: PidGains { kp: 0.6 * ku, ki: 1.2 * ku / tu, kd: 0.075 * ku * tu },
        }
    }
}

/// A plant that can be driven by proportional-only feedback around a step.
pub trait ProbePlant {
    /// Output deviation from the starting point, one sample per `cfg.dt`, for
    /// `u = gain · (step_amplitude − y)` held constant over each sample.
    fn proportional_response(&self, gain: f64, cfg: &ZnConfig) -> Result<Vec<f64>, ZnError>;
}

/// `num / den(s)` with `den` given by descending coefficients, leading
/// coefficient non-zero. Test hook for the tuning procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunctionPlant {
    pub num: f64,
    pub den: Vec<f64>,
}

impl TransferFunctionPlant {
    pub fn new(num: f64, den: Vec<f64>) -> Self {
        assert!(den.len() >= 2 && den[0] != 0.0, "denominator must be at least first order");
        Self { num, den }
    }
}

impl ProbePlant for TransferFunctionPlant {
    fn proportional_response(&self, gain: f64, cfg: &ZnConfig) -> Result<Vec<f64>, ZnError> {
        let order = self.den.len() - 1;
        let lead = self.den[0];
        // Controllable canonical form: x₀ is the output state, x₀⁽ᵏ⁾ = xₖ.
        let a: Vec<f64> = self.den[1..].iter().rev().map(|c| c / lead).collect();
        let b = self.num / lead;
        let steps = (cfg.duration / cfg.dt).ceil() as usize;
        let mut x: Vec<f64> = vec![0.0; order];
        let mut out = Vec::with_capacity(steps);
        for k in 0..steps {
            let y = x[0];
            if !y.is_finite() || y.abs() > 1e6 {
                return Err(ZnError::UnstableProbe { gain, t: k as f64 * cfg.dt });
            }
            out.push(y);
            let u = gain * (cfg.step_amplitude - y);
            x = rk4_step(
                |_, s: &[f64]| {
                    let mut d = Vec::with_capacity(order);
                    d.extend_from_slice(&s[1..]);
                    d.push(b * u - a.iter().zip(s).map(|(ai, si)| ai * si).sum::<f64>());
                    Ok::<_, ZnError>(d)
                },
                0.0,
                &x,
                cfg.dt,
            )?;
        }
        Ok(out)
    }
}

/// One arm joint driven alone while every other joint is locked at the probe
/// configuration; base at rest. Torque saturates at the model limit.
#[derive(Debug, Clone)]
pub struct FrozenJointPlant<'a> {
    pub model: &'a ArmModel,
    pub configuration: Vec<f64>,
    pub joint: usize,
}

impl<'a> FrozenJointPlant<'a> {
    pub fn new(model: &'a ArmModel, configuration: Vec<f64>, joint: usize) -> Result<Self, ZnError> {
        let n = model.n_links();
        if joint >= n {
            return Err(ZnError::BadJoint { index: joint, n });
        }
        if configuration.len() != n {
            return Err(DynamicsError::DimensionMismatch { what: "probe configuration", expected: n, got: configuration.len() }.into());
        }
        Ok(Self { model, configuration, joint })
    }

    fn acceleration(&self, theta: f64, omega: f64, torque: f64) -> Result<f64, ZnError> {
        let mut q = self.configuration.clone();
        q[self.joint] = theta;
        let kin = self.model.kinematics(&q)?;
        // With a single moving joint the Coriolis term vanishes: Mⱼⱼ does not
        // depend on qⱼ.
        let inertia = kin.mass_matrix()[(self.joint, self.joint)];
        if !(inertia > 0.0) {
            return Err(DynamicsError::SingularMassMatrix.into());
        }
        let g = kin.gravity_vector(self.model.gravity)[self.joint];
        let b = self.model.joint_viscous_friction[self.joint];
        Ok((torque - b * omega - g) / inertia)
    }
}

impl ProbePlant for FrozenJointPlant<'_> {
    fn proportional_response(&self, gain: f64, cfg: &ZnConfig) -> Result<Vec<f64>, ZnError> {
        let theta0 = self.configuration[self.joint];
        let limit = self.model.torque_limit;
        let steps = (cfg.duration / cfg.dt).ceil() as usize;
        let mut x = vec![theta0, 0.0];
        let mut out = Vec::with_capacity(steps);
        for k in 0..steps {
            let y = x[0] - theta0;
            if !(y.is_finite() && x[1].is_finite()) || y.abs() > 1e6 || x[1].abs() > 1e6 {
                return Err(ZnError::UnstableProbe { gain, t: k as f64 * cfg.dt });
            }
            out.push(y);
            let u = (gain * (cfg.step_amplitude - y)).clamp(-limit, limit);
            x = rk4_step(|_, s: &[f64]| Ok::<_, ZnError>(vec![s[1], self.acceleration(s[0], s[1], u)?]), 0.0, &x, cfg.dt)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oscillation {
    pub half_periods: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub period: f64,
    /// `(max − min) / mean` over the half-periods.
    pub period_spread: f64,
    /// Fractional amplitude loss per full cycle; negative when growing.
    pub decay_per_cycle: f64,
}

impl Oscillation {
    pub fn is_sustained(&self, cfg: &ZnConfig) -> bool {
        self.half_periods.len() >= cfg.min_half_periods
            && self.period >= 8.0 * cfg.dt
            && self.period_spread < cfg.max_period_spread
            && self.decay_per_cycle < cfg.max_amplitude_decay
    }
}

/// Zero crossings about the late-time mean, after discarding the initial
/// transient half-cycle and any tail that has decayed below `min_amplitude`.
pub fn analyze_oscillation(samples: &[f64], dt: f64, min_amplitude: f64) -> Option<Oscillation> {
    let n = samples.len();
    if n < 4 {
        return None;
    }
    let find_crossings = |center: f64| -> Vec<(usize, f64)> {
        (1..n)
            .filter_map(|i| {
                let a = samples[i - 1] - center;
                let b = samples[i] - center;
                ((a >= 0.0) != (b >= 0.0)).then(|| (i, (i as f64 - 1.0 + a / (a - b)) * dt))
            })
            .collect()
    };
    // First estimate from the late-time mean, then re-center on a whole
    // number of cycles in the second half so the estimate is unbiased.
    let tail = &samples[n / 2..];
    let mut center = tail.iter().sum::<f64>() / tail.len() as f64;
    let late: Vec<usize> = find_crossings(center).into_iter().map(|(i, _)| i).filter(|i| *i >= n / 2).collect();
    if late.len() >= 3 {
        let first = late[0];
        let last = if (late.len() - 1) % 2 == 0 { late[late.len() - 1] } else { late[late.len() - 2] };
        let span = &samples[first..last];
        center = span.iter().sum::<f64>() / span.len() as f64;
    }
    let crossings = find_crossings(center);
    let mut half_periods = Vec::new();
    let mut amplitudes = Vec::new();
    for w in crossings.windows(2).skip(1) {
        let (i0, t0) = w[0];
        let (i1, t1) = w[1];
        let amp = samples[i0..i1].iter().fold(0.0f64, |m, s| m.max((s - center).abs()));
        if amp < min_amplitude {
            break;
        }
        half_periods.push(t1 - t0);
        amplitudes.push(amp);
    }
    if half_periods.len() < 2 {
        return None;
    }
    let m = half_periods.len() as f64;
    let mean = half_periods.iter().sum::<f64>() / m;
    let (lo, hi) = half_periods.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), h| (lo.min(*h), hi.max(*h)));
    let per_half = (amplitudes[amplitudes.len() - 1] / amplitudes[0]).powf(1.0 / (m - 1.0));
    Some(Oscillation {
        period: 2.0 * mean,
        period_spread: (hi - lo) / mean,
        decay_per_cycle: 1.0 - per_half * per_half,
        half_periods,
        amplitudes,
    })
}

fn probe(plant: &dyn ProbePlant, gain: f64, cfg: &ZnConfig) -> Result<Option<Oscillation>, ZnError> {
    let y = plant.proportional_response(gain, cfg)?;
    Ok(analyze_oscillation(&y, cfg.dt, 1e-6 * cfg.step_amplitude.abs()))
}

/// Runs the ultimate-gain experiment on `plant` and returns the classic
/// Ziegler–Nichols PID gains.
pub fn ziegler_nichols_tune(plant: &dyn ProbePlant, cfg: &ZnConfig) -> Result<ZnResult, ZnError> {
    let sustained = |o: &Option<Oscillation>| o.as_ref().is_some_and(|o| o.is_sustained(cfg));

    let mut gain = cfg.initial_gain;
    let mut last_decaying: Option<f64> = None;
    let mut found = loop {
        if gain > cfg.gain_cap {
            return Err(ZnError::NoOscillationFound { cap: cfg.gain_cap });
        }
        let osc = probe(plant, gain, cfg)?;
        if sustained(&osc) {
            break (gain, osc.expect("sustained implies analyzed"));
        }
        last_decaying = Some(gain);
        gain *= cfg.growth;
    };

    if cfg.refine_iterations > 0 {
        // Lower end of the bracket: shrink below the start if needed.
        let mut lo = match last_decaying {
            Some(g) => Some(g),
            None => {
                let mut g = found.0;
                let mut lo = None;
                for _ in 0..20 {
                    g /= cfg.growth;
                    if !sustained(&probe(plant, g, cfg)?) {
                        lo = Some(g);
                        break;
                    }
                }
                lo
            }
        };
        // Upper end: first gain whose oscillation does not decay at all.
        let mut hi = None;
        let mut g = found.0;
        for _ in 0..4 {
            match probe(plant, g, cfg) {
                Ok(Some(o)) if o.decay_per_cycle <= 0.0 && o.half_periods.len() >= cfg.min_half_periods => {
                    hi = Some((g, o));
                    break;
                }
                Ok(_) => {
                    lo = Some(g);
                    g *= cfg.growth;
                }
                // Grows fast enough to diverge: certainly above neutral.
                Err(ZnError::UnstableProbe { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        if let (Some(mut lo), Some((mut hi_gain, mut hi_osc))) = (lo, hi) {
            for _ in 0..cfg.refine_iterations {
                let mid = (lo * hi_gain).sqrt();
                match probe(plant, mid, cfg) {
                    Ok(Some(o)) if o.decay_per_cycle <= 0.0 && o.half_periods.len() >= cfg.min_half_periods => {
                        hi_gain = mid;
                        hi_osc = o;
                    }
                    Ok(_) => lo = mid,
                    Err(ZnError::UnstableProbe { .. }) => hi_gain = mid,
                    Err(e) => return Err(e),
                }
            }
            found = (hi_gain, hi_osc);
        }
    }
    let (ku, osc) = found;
    Ok(ZnResult::from_ultimate(ku, osc.period))
}
