//! Closed-loop rollouts, the per-joint tracking/effort cost, and the staged
//! joint-by-joint controller upgrade.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{optimize_with, BoError, BoSettings, BoTrace, BoxDim, SearchBox};
use crate::control::{
    control_step, pid_control_step, ziegler_nichols_tune, ControlError, ControllerState, Discretization,
    FrozenJointPlant, NonlinearPidParams, PidGains, ZnConfig, ZnError, ZnResult,
};
use crate::dynamics::{step, ArmModel, BaseMotionProfile, BaseSegment, DynamicsError, JointState};

/// Any state entry beyond this magnitude counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("assignment has {got} controllers for a {expected}-joint arm")]
    AssignmentMismatch { expected: usize, got: usize },
    #[error("joint {joint}: {source}")]
    InvalidController { joint: usize, source: ControlError },
    #[error("simulation diverged at t = {t} s")]
    SimulationDiverged { t: f64 },
    #[error("Ziegler-Nichols tuning failed on joint {joint}: {source}")]
    ZieglerNichols { joint: usize, source: ZnError },
    #[error("Ziegler-Nichols gains must be positive (kp = {kp}, kd = {kd})")]
    NonPositiveGains { kp: f64, kd: f64 },
    #[error("budget per joint must be at least {min}, got {got}")]
    BudgetTooSmall { min: usize, got: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Optimization(#[from] BoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setpoint {
    pub time: f64,
    pub value: f64,
}

/// Piecewise-constant setpoint schedule, sorted by time. Before the first
/// setpoint the first value applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferenceSchedule(pub Vec<Setpoint>);

impl ReferenceSchedule {
    pub fn constant(value: f64) -> Self {
        Self(vec![Setpoint { time: 0.0, value }])
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.0.partition_point(|s| s.time <= t);
        self.0[idx.saturating_sub(1)].value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub arm: ArmModel,
    pub base: BaseMotionProfile,
    pub joint_references: Vec<ReferenceSchedule>,
    pub duration: f64,
    pub dt: f64,
    pub initial_state: JointState,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidScenario(m));
        self.arm.validate().map_err(|e| HarnessError::InvalidScenario(e.to_string()))?;
        self.base.validate().map_err(|e| HarnessError::InvalidScenario(e.to_string()))?;
        let n = self.arm.n_links();
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be positive".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= self.duration) {
            return bad("dt must be positive and no longer than the duration".into());
        }
        if self.base.horizon() + 1e-9 < self.duration {
            return bad(format!(
                "base profile covers {} s but the scenario lasts {} s",
                self.base.horizon(),
                self.duration
            ));
        }
        if self.joint_references.len() != n {
            return bad(format!("{} reference schedules for {n} joints", self.joint_references.len()));
        }
        for (j, sched) in self.joint_references.iter().enumerate() {
            if sched.0.is_empty() {
                return bad(format!("joint {} has an empty reference schedule", j + 1));
            }
            let mut prev = f64::NEG_INFINITY;
            for s in &sched.0 {
                if !(s.value.is_finite() && s.time >= 0.0 && s.time <= self.duration && s.time >= prev) {
                    return bad(format!("joint {}: setpoint times must be sorted within [0, duration]", j + 1));
                }
                prev = s.time;
            }
        }
        let st = &self.initial_state;
        if st.q.len() != n || st.qdot.len() != n || !st.is_finite() {
            return bad(format!("initial state must hold {n} finite angles and rates"));
        }
        Ok(())
    }

    /// Number of control steps, `⌈duration / dt⌉`.
    pub fn steps(&self) -> usize {
        ((self.duration / self.dt) - 1e-9).ceil() as usize
    }

    pub fn n_joints(&self) -> usize {
        self.arm.n_links()
    }

    /// Planar three-link arm carrying a 3.5 kg payload while the base
    /// accelerates, turns sharply and stops hard, with concurrent reference
    /// steps on every joint. The arm works in the horizontal plane, so gravity
    /// is carried by the joint bearings and the base maneuver is the dominant
    /// disturbance.
    pub fn default_mobile_manipulator() -> Self {
        let arm = ArmModel {
            link_lengths: vec![0.425, 0.392, 0.2],
            link_masses: vec![3.0, 2.5, 1.2],
            payload_mass: 3.5,
            joint_viscous_friction: vec![0.5; 3],
            joint_stiffness: vec![100.0; 3],
            gravity: 0.0,
            torque_limit: 150.0,
        };
        let seg = |duration: f64, ax: f64, ay: f64, yaw_accel: f64| BaseSegment {
            duration,
            linear_accel: [ax, ay],
            yaw_accel,
        };
        let base = BaseMotionProfile {
            initial_velocity: [0.0, 0.0],
            initial_yaw_rate: 0.0,
            segments: vec![
                seg(1.0, 0.0, 0.0, 0.0),
                seg(1.5, 3.0, 0.0, 0.0),
                seg(2.0, 0.0, 0.0, 0.0),
                seg(0.8, 0.0, 2.25, 4.5),
                seg(0.8, 0.0, -2.25, -4.5),
                seg(1.9, 0.0, 0.0, 0.0),
                seg(0.6, -7.5, 0.0, 0.0),
                seg(2.4, 0.0, 0.0, 0.0),
                seg(1.0, -2.25, 2.25, -3.75),
                seg(1.0, 0.0, 0.0, 3.75),
                seg(2.0, 2.25, -2.25, 0.0),
                seg(0.5, 0.0, 0.0, 6.0),
                seg(0.5, 0.0, 0.0, -6.0),
                seg(3.0, 0.0, 0.0, 0.0),
                seg(0.5, 0.0, 0.0, 0.0),
                seg(5.5, 0.0, 0.0, 0.0),
            ],
        };
        let sched = |pts: &[(f64, f64)]| {
            ReferenceSchedule(pts.iter().map(|&(time, value)| Setpoint { time, value }).collect())
        };
        let joint_references = vec![
            sched(&[(0.0, 0.0), (1.0, 0.18), (10.0, -0.09), (17.0, 0.06)]),
            sched(&[(0.0, 0.8), (2.0, 1.01), (12.0, 0.74), (19.0, 0.86)]),
            sched(&[(0.0, -0.4), (3.0, -0.19), (14.0, -0.34), (21.0, -0.16)]),
        ];
        let initial_state = JointState::at_rest(joint_references.iter().map(|s| s.value_at(0.0)).collect());
        Self { arm, base, joint_references, duration: 25.0, dt: 1e-3, initial_state }
    }

    /// Every joint starts at rest at `start` and is commanded to
    /// `start + step` at `t = 0`; base at rest.
    pub fn step_response(arm: ArmModel, start: &[f64], step: &[f64], duration: f64, dt: f64) -> Self {
        let joint_references = start.iter().zip(step).map(|(s, d)| ReferenceSchedule::constant(s + d)).collect();
        Self {
            arm,
            base: BaseMotionProfile::at_rest(),
            joint_references,
            duration,
            dt,
            initial_state: JointState::at_rest(start.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum JointController {
    Baseline {
        kp: f64,
        ki: f64,
        kd: f64,
    },
    Adaptive {
        kp_min: f64,
        kp_max: f64,
        tau_p: f64,
        kd_max: f64,
        tau_d: f64,
        ki: f64,
    },
}

impl JointController {
    pub fn baseline(g: PidGains) -> Self {
        Self::Baseline { kp: g.kp, ki: g.ki, kd: g.kd }
    }

    pub fn adaptive(p: NonlinearPidParams) -> Self {
        Self::Adaptive { kp_min: p.kp_min, kp_max: p.kp_max, tau_p: p.tau_p, kd_max: p.kd_max, tau_d: p.tau_d, ki: p.ki }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, Self::Adaptive { .. })
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        match self.resolve() {
            Resolved::Pid(g) => g.validate(),
            Resolved::Adaptive(p) => p.validate(),
        }
    }

    fn resolve(&self) -> Resolved {
        match *self {
            Self::Baseline { kp, ki, kd } => Resolved::Pid(PidGains { kp, ki, kd }),
            Self::Adaptive { kp_min, kp_max, tau_p, kd_max, tau_d, ki } => {
                Resolved::Adaptive(NonlinearPidParams { kp_min, kp_max, tau_p, kd_max, tau_d, ki })
            }
        }
    }
}

enum Resolved {
    Pid(PidGains),
    Adaptive(NonlinearPidParams),
}

/// One controller per joint, base to tip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerAssignment {
    pub joints: Vec<JointController>,
}

impl ControllerAssignment {
    pub fn baseline(gains: &[PidGains]) -> Self {
        Self { joints: gains.iter().copied().map(JointController::baseline).collect() }
    }

    pub fn validate(&self, n_joints: usize) -> Result<(), HarnessError> {
        if self.joints.len() != n_joints {
            return Err(HarnessError::AssignmentMismatch { expected: n_joints, got: self.joints.len() });
        }
        for (j, c) in self.joints.iter().enumerate() {
            c.validate().map_err(|source| HarnessError::InvalidController { joint: j, source })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JointTrace {
    pub theta: Vec<f64>,
    pub theta_ref: Vec<f64>,
    /// Applied (saturated) torque.
    pub u: Vec<f64>,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub t: Vec<f64>,
    pub joints: Vec<JointTrace>,
    pub torque_limit: f64,
}

impl RolloutTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn max_abs_torque(&self) -> f64 {
        self.joints.iter().flat_map(|j| &j.u).fold(0.0, |m, u| m.max(u.abs()))
    }
}

/// Simulates the closed loop: at each step every joint controller reads the
/// current angle, its torque is saturated and recorded, then the arm advances
/// one RK4 step under the base disturbance.
pub fn rollout(scenario: &Scenario, assignment: &ControllerAssignment) -> Result<RolloutTrace, HarnessError> {
    scenario.validate()?;
    let n = scenario.n_joints();
    assignment.validate(n)?;
    let controllers: Vec<Resolved> = assignment.joints.iter().map(JointController::resolve).collect();
    let limit = scenario.arm.torque_limit;
    let disc = Discretization::new(scenario.dt, limit);
    let steps = scenario.steps();

    let mut trace = RolloutTrace {
        t: Vec::with_capacity(steps),
        joints: vec![
            JointTrace {
                theta: Vec::with_capacity(steps),
                theta_ref: Vec::with_capacity(steps),
                u: Vec::with_capacity(steps),
                kp: Vec::with_capacity(steps),
                kd: Vec::with_capacity(steps),
            };
            n
        ],
        torque_limit: limit,
    };
    let mut state = scenario.initial_state.clone();
    state.t = 0.0;
    let mut ctrl = vec![ControllerState::default(); n];
    let mut torques = vec![0.0; n];

    for k in 0..steps {
        let t = k as f64 * scenario.dt;
        state.t = t;
        trace.t.push(t);
        for j in 0..n {
            let theta_ref = scenario.joint_references[j].value_at(t);
            let theta = state.q[j];
            let out = match &controllers[j] {
                Resolved::Pid(g) => pid_control_step(g, &ctrl[j], theta_ref, theta, &disc),
                Resolved::Adaptive(p) => control_step(p, &ctrl[j], theta_ref, theta, &disc),
            };
            ctrl[j] = out.state;
            let u = out.u.clamp(-limit, limit);
            if !u.is_finite() {
                return Err(HarnessError::SimulationDiverged { t });
            }
            torques[j] = u;
            let jt = &mut trace.joints[j];
            jt.theta.push(theta);
            jt.theta_ref.push(theta_ref);
            jt.u.push(u);
            jt.kp.push(out.kp);
            jt.kd.push(out.kd);
        }
        state = match step(&scenario.arm, &state, &torques, &scenario.base, scenario.dt) {
            Ok(s) => s,
            Err(DynamicsError::Diverged { .. }) => return Err(HarnessError::SimulationDiverged { t: t + scenario.dt }),
            Err(e) => return Err(e.into()),
        };
        if state.max_abs() > DIVERGENCE_BOUND {
            return Err(HarnessError::SimulationDiverged { t: t + scenario.dt });
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub p: f64,
    pub q: f64,
    /// Score only this many evenly spaced samples instead of every step.
    #[serde(default)]
    pub decimate_to_n: Option<usize>,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { p: 1.0, q: 0.5, decimate_to_n: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `Σ p (θ − θ_ref)²`
    pub tracking: f64,
    /// `Σ q u²`
    pub effort: f64,
    pub total: f64,
}

/// Sample indices scored for a trace of `len` rows.
pub fn scored_indices(len: usize, decimate_to_n: Option<usize>) -> Vec<usize> {
    match decimate_to_n {
        Some(n) if n > 0 && n < len => (0..n).map(|k| k * len / n).collect(),
        _ => (0..len).collect(),
    }
}

/// `Σₖ p (θₖ − θ_ref)² + q uₖ²` for one joint.
pub fn cost_breakdown(trace: &RolloutTrace, joint: usize, weights: &CostWeights) -> CostBreakdown {
    let jt = &trace.joints[joint];
    let mut tracking = 0.0;
    let mut effort = 0.0;
    for k in scored_indices(jt.theta.len(), weights.decimate_to_n) {
        let e = jt.theta[k] - jt.theta_ref[k];
        tracking += weights.p * e * e;
        effort += weights.q * jt.u[k] * jt.u[k];
    }
    CostBreakdown { tracking, effort, total: tracking + effort }
}

pub fn cost(trace: &RolloutTrace, joint: usize, p: f64, q: f64) -> f64 {
    cost_breakdown(trace, joint, &CostWeights { p, q, decimate_to_n: None }).total
}

/// Search box for one joint's adaptive controller, derived from its
/// Ziegler–Nichols gains. Coordinates are `(kp_min, kp_ratio, tau_p, kd_max,
/// tau_d)` with `kp_max = kp_min · kp_ratio`, so every point in the box is a
/// valid parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSearchBox {
    pub search: SearchBox,
    pub ki: f64,
}

impl AdaptiveSearchBox {
    pub fn decode(&self, x: &[f64]) -> NonlinearPidParams {
        NonlinearPidParams { kp_min: x[0], kp_max: x[0] * x[1], tau_p: x[2], kd_max: x[3], tau_d: x[4], ki: self.ki }
    }
}

pub const DEFAULT_KI_SCALE: f64 = 0.5;

pub fn zn_to_searchbox(gains: &PidGains) -> Result<AdaptiveSearchBox, HarnessError> {
    zn_to_searchbox_scaled(gains, DEFAULT_KI_SCALE)
}

pub fn zn_to_searchbox_scaled(gains: &PidGains, ki_scale: f64) -> Result<AdaptiveSearchBox, HarnessError> {
    if !(gains.kp > 0.0 && gains.kd > 0.0 && gains.ki >= 0.0 && gains.kp.is_finite() && gains.kd.is_finite()) {
        return Err(HarnessError::NonPositiveGains { kp: gains.kp, kd: gains.kd });
    }
    let dim = |name: &str, lower: f64, upper: f64| BoxDim { name: name.into(), lower, upper };
    let search = SearchBox::new(vec![
        dim("kp_min", 0.2 * gains.kp, gains.kp),
        dim("kp_ratio", 1.0, 3.0),
        dim("tau_p", 0.5, 20.0),
        dim("kd_max", 0.5 * gains.kd, 5.0 * gains.kd),
        dim("tau_d", 0.5, 50.0),
    ])?;
    Ok(AdaptiveSearchBox { search, ki: ki_scale * gains.ki })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSettings {
    pub seed: u64,
    pub budget_per_joint: usize,
    pub n_init: usize,
    pub weights: CostWeights,
    pub zn: ZnConfig,
    pub ki_scale: f64,
    /// Optional isotropic length-scale grid for the surrogate.
    pub length_scale_grid: Vec<f64>,
}

impl TuneSettings {
    pub fn new(seed: u64, budget_per_joint: usize) -> Self {
        Self {
            seed,
            budget_per_joint,
            n_init: 5,
            weights: CostWeights::default(),
            zn: ZnConfig::default(),
            ki_scale: DEFAULT_KI_SCALE,
            length_scale_grid: Vec::new(),
        }
    }
}

/// Ziegler–Nichols gains for every joint, probing from the scenario's initial
/// configuration with the other joints locked.
pub fn zn_tune_all(scenario: &Scenario, zn: &ZnConfig) -> Result<Vec<ZnResult>, HarnessError> {
    let cfg = ZnConfig { dt: scenario.dt, ..*zn };
    (0..scenario.n_joints())
        .map(|j| {
            let plant = FrozenJointPlant::new(&scenario.arm, scenario.initial_state.q.clone(), j)
                .map_err(|source| HarnessError::ZieglerNichols { joint: j, source })?;
            ziegler_nichols_tune(&plant, &cfg).map_err(|source| HarnessError::ZieglerNichols { joint: j, source })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointCampaign {
    pub joint: usize,
    pub search: AdaptiveSearchBox,
    pub trace: BoTrace,
    pub best: NonlinearPidParams,
    pub best_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagedTuneResult {
    pub zn: Vec<ZnResult>,
    pub baseline: ControllerAssignment,
    pub baseline_costs: Vec<CostBreakdown>,
    pub campaigns: Vec<JointCampaign>,
    pub tuned: ControllerAssignment,
    pub tuned_costs: Vec<CostBreakdown>,
}

pub fn per_joint_costs(trace: &RolloutTrace, weights: &CostWeights) -> Vec<CostBreakdown> {
    (0..trace.joints.len()).map(|j| cost_breakdown(trace, j, weights)).collect()
}

/// Ziegler–Nichols for every joint, then for each joint from the base
/// outwards: optimize its adaptive controller against its own cost on a full
/// rollout under the current assignment, and freeze the best parameters.
pub fn staged_tune(scenario: &Scenario, settings: &TuneSettings) -> Result<StagedTuneResult, HarnessError> {
    scenario.validate()?;
    let min_budget = settings.n_init + 1;
    if settings.budget_per_joint < min_budget {
        return Err(HarnessError::BudgetTooSmall { min: min_budget, got: settings.budget_per_joint });
    }
    let zn = zn_tune_all(scenario, &settings.zn)?;
    let gains: Vec<PidGains> = zn.iter().map(|r| r.gains).collect();
    let baseline = ControllerAssignment::baseline(&gains);
    let baseline_costs = per_joint_costs(&rollout(scenario, &baseline)?, &settings.weights);

    let mut current = baseline.clone();
    let mut campaigns = Vec::with_capacity(scenario.n_joints());
    for joint in 0..scenario.n_joints() {
        let search = zn_to_searchbox_scaled(&gains[joint], settings.ki_scale)?;
        let objective = |x: &[f64]| -> Result<f64, HarnessError> {
            let mut assignment = current.clone();
            assignment.joints[joint] = JointController::adaptive(search.decode(x));
            let trace = rollout(scenario, &assignment)?;
            Ok(cost_breakdown(&trace, joint, &settings.weights).total)
        };
        let mut bo = BoSettings::new(settings.budget_per_joint, settings.n_init, settings.seed.wrapping_add(joint as u64));
        bo.length_scale_grid = settings.length_scale_grid.clone();
        let trace = optimize_with(objective, &search.search, &bo)?;
        let best_record = trace.best().ok_or(HarnessError::SimulationDiverged { t: 0.0 })?.clone();
        let best = search.decode(&best_record.parameters);
        current.joints[joint] = JointController::adaptive(best);
        campaigns.push(JointCampaign { joint, search, trace, best, best_cost: best_record.cost });
    }
    let tuned_costs = per_joint_costs(&rollout(scenario, &current)?, &settings.weights);
    Ok(StagedTuneResult { zn, baseline, baseline_costs, campaigns, tuned: current, tuned_costs })
}
