//! On-disk formats: JSON configuration in, CSV traces out.
//!
//! Every CSV starts with a header row and prints floats with nine significant
//! digits. Joint indices in files are 1-based.

use std::io::{Read, Write};
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::BoTrace;
use crate::control::{ControlError, ZnResult};
use crate::dynamics::{ArmModel, BaseMotionProfile, ComplianceRow, JointState};
use crate::harness::{ControllerAssignment, CostBreakdown, CostWeights, ReferenceSchedule, RolloutTrace, Scenario};

pub const ROLLOUT_HEADER: [&str; 7] = ["t", "joint", "theta", "theta_ref", "u", "kp", "kd"];

/// Largest configuration grid accepted by [`parse_grid_spec`].
pub const MAX_GRID_POINTS: usize = 1_000_000;

/// A configuration problem, located by the dotted path of the offending key.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error("line {line}, column {column}: cannot parse {value:?}")]
    Field { line: u64, column: &'static str, value: String },
}

/// `printf("%.9g")`: nine significant digits, trailing zeros dropped,
/// exponent form outside `[1e-5, 1e9)`.
pub fn fmt_float(x: f64) -> String {
    const PREC: i32 = 9;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // The exponent after rounding to PREC digits decides the style.
    let sci = format!("{:.*e}", (PREC - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= PREC {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (PREC - 1 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        ConfigError { key: error_key(&path, &message), message }
    })?;
    de.end().map_err(|e| ConfigError::new("<document>", e.to_string()))?;
    Ok(value)
}

/// Path of the failing key. A missing field is reported on its parent, so
/// its name is lifted out of the message.
fn error_key(path: &str, message: &str) -> String {
    let named = message.strip_prefix("missing field `").and_then(|rest| rest.split('`').next());
    match (path, named) {
        (".", Some(field)) => field.to_string(),
        (".", None) => "<document>".to_string(),
        (p, Some(field)) => format!("{p}.{field}"),
        (p, None) => p.to_string(),
    }
}

fn default_duration() -> f64 {
    25.0
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateFile {
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qdot: Option<Vec<f64>>,
}

/// Scenario as written in JSON. Without `initial_state` the arm starts at
/// rest on its first reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub arm: ArmModel,
    #[serde(default = "BaseMotionProfile::at_rest")]
    pub base: BaseMotionProfile,
    pub joint_references: Vec<ReferenceSchedule>,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialStateFile>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        Self {
            arm: s.arm.clone(),
            base: s.base.clone(),
            joint_references: s.joint_references.clone(),
            duration: s.duration,
            dt: s.dt,
            initial_state: Some(InitialStateFile {
                q: s.initial_state.q.clone(),
                qdot: Some(s.initial_state.qdot.clone()),
            }),
        }
    }
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario, ConfigError> {
        self.arm.validate().map_err(|e| ConfigError::new("arm", e.to_string()))?;
        self.base.validate().map_err(|e| ConfigError::new("base", e.to_string()))?;
        let n = self.arm.n_links();
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(ConfigError::new("duration", "must be positive"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= self.duration) {
            return Err(ConfigError::new("dt", "must be positive and no longer than duration"));
        }
        if self.base.horizon() + 1e-9 < self.duration {
            return Err(ConfigError::new(
                "base.segments",
                format!("profile covers {} s but duration is {} s", self.base.horizon(), self.duration),
            ));
        }
        if self.joint_references.len() != n {
            return Err(ConfigError::new(
                "joint_references",
                format!("{} schedules for a {n}-joint arm", self.joint_references.len()),
            ));
        }
        for (j, sched) in self.joint_references.iter().enumerate() {
            if sched.0.is_empty() {
                return Err(ConfigError::new(format!("joint_references[{j}]"), "schedule is empty"));
            }
            let mut prev = f64::NEG_INFINITY;
            for (k, sp) in sched.0.iter().enumerate() {
                let key = format!("joint_references[{j}][{k}]");
                if !sp.value.is_finite() {
                    return Err(ConfigError::new(format!("{key}.value"), "must be finite"));
                }
                if !(sp.time >= 0.0 && sp.time <= self.duration) {
                    return Err(ConfigError::new(format!("{key}.time"), "must lie within [0, duration]"));
                }
                if sp.time < prev {
                    return Err(ConfigError::new(format!("{key}.time"), "setpoints must be sorted by time"));
                }
                prev = sp.time;
            }
        }
        let initial_state = match self.initial_state {
            None => JointState::at_rest(self.joint_references.iter().map(|s| s.value_at(0.0)).collect()),
            Some(init) => {
                let qdot = init.qdot.unwrap_or_else(|| vec![0.0; n]);
                for (key, v) in [("initial_state.q", &init.q), ("initial_state.qdot", &qdot)] {
                    if v.len() != n {
                        return Err(ConfigError::new(key, format!("{} entries for a {n}-joint arm", v.len())));
                    }
                    if !v.iter().all(|x| x.is_finite()) {
                        return Err(ConfigError::new(key, "entries must be finite"));
                    }
                }
                JointState { q: init.q, qdot, t: 0.0 }
            }
        };
        let scenario = Scenario {
            arm: self.arm,
            base: self.base,
            joint_references: self.joint_references,
            duration: self.duration,
            dt: self.dt,
            initial_state,
        };
        scenario.validate().map_err(|e| ConfigError::new("<scenario>", e.to_string()))?;
        Ok(scenario)
    }
}

pub fn parse_scenario_json(text: &str) -> Result<Scenario, ConfigError> {
    from_json::<ScenarioFile>(text)?.into_scenario()
}

pub fn scenario_to_json(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from(scenario)).expect("scenario serializes") + "\n"
}

/// Controllers file: `{"joints": [{"type": "baseline", "kp": .., "ki": .., "kd": ..}, ...]}`.
pub fn parse_controllers_json(text: &str) -> Result<ControllerAssignment, ConfigError> {
    let assignment: ControllerAssignment = from_json(text)?;
    for (j, c) in assignment.joints.iter().enumerate() {
        if let Err(ControlError::InvalidParameter { field, reason }) = c.validate() {
            return Err(ConfigError::new(format!("joints[{j}].{field}"), reason));
        }
    }
    Ok(assignment)
}

pub fn controllers_to_json(assignment: &ControllerAssignment) -> String {
    serde_json::to_string_pretty(assignment).expect("assignment serializes") + "\n"
}

fn default_seed() -> u64 {
    42
}

fn default_budget() -> usize {
    20
}

/// Tuning campaign settings. Paths are taken as written, relative to the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget_per_joint: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// 246 reproduces a 10 Hz scoring of a 25 s run.
    #[serde(default)]
    pub decimate_to_n: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { scenario: None, seed: default_seed(), budget_per_joint: default_budget(), out: None, decimate_to_n: None }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget_per_joint < 6 {
            return Err(ConfigError::new("budget_per_joint", format!("must be at least 6, got {}", self.budget_per_joint)));
        }
        if self.decimate_to_n == Some(0) {
            return Err(ConfigError::new("decimate_to_n", "must be positive"));
        }
        Ok(())
    }
}

pub fn parse_run_config_json(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = from_json(text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|k| if k + 1 == self.count { self.stop } else { self.start + k as f64 * step }).collect()
    }
}

/// One `start:stop:count` axis per joint, comma separated, for example
/// `-3.1:3.1:13,0:3.1:7`. A bare number is a single-value axis.
pub fn parse_grid_spec(spec: &str) -> Result<Vec<GridAxis>, ConfigError> {
    let mut axes = Vec::new();
    let mut total: usize = 1;
    for (j, part) in spec.split(',').enumerate() {
        let key = format!("grid[{j}]");
        let fields: Vec<&str> = part.trim().split(':').map(str::trim).collect();
        let num = |s: &str, what: &str| -> Result<f64, ConfigError> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(ConfigError::new(key.clone(), format!("{what} {s:?} is not a finite number"))),
            }
        };
        let axis = match fields.as_slice() {
            [v] => {
                let v = num(v, "value")?;
                GridAxis { start: v, stop: v, count: 1 }
            }
            [a, b, c] => {
                let count: usize = c
                    .parse()
                    .ok()
                    .filter(|&c| c > 0)
                    .ok_or_else(|| ConfigError::new(key.clone(), format!("count {c:?} is not a positive integer")))?;
                let (start, stop) = (num(a, "start")?, num(b, "stop")?);
                if !(stop - start).is_finite() {
                    return Err(ConfigError::new(key, format!("range {start}..{stop} is too wide")));
                }
                GridAxis { start, stop, count }
            }
            _ => return Err(ConfigError::new(key, format!("expected start:stop:count, got {part:?}"))),
        };
        total = total
            .checked_mul(axis.count)
            .filter(|&t| t <= MAX_GRID_POINTS)
            .ok_or_else(|| ConfigError::new("grid", format!("more than {MAX_GRID_POINTS} configurations")))?;
        axes.push(axis);
    }
    Ok(axes)
}

/// Cartesian product of the axes, first joint varying slowest.
pub fn grid_points(axes: &[GridAxis]) -> Vec<Vec<f64>> {
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        let values = axis.values();
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    points
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn write_rollout_csv<W: Write>(trace: &RolloutTrace, w: W) -> Result<(), FormatError> {
    let mut out = csv_writer(w);
    out.write_record(ROLLOUT_HEADER)?;
    for (k, t) in trace.t.iter().enumerate() {
        for (j, jt) in trace.joints.iter().enumerate() {
            out.write_record([
                fmt_float(*t),
                (j + 1).to_string(),
                fmt_float(jt.theta[k]),
                fmt_float(jt.theta_ref[k]),
                fmt_float(jt.u[k]),
                fmt_float(jt.kp[k]),
                fmt_float(jt.kd[k]),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutRow {
    pub t: f64,
    /// 1-based.
    pub joint: usize,
    pub theta: f64,
    pub theta_ref: f64,
    pub u: f64,
    pub kp: f64,
    pub kd: f64,
}

pub fn read_rollout_csv<R: Read>(r: R) -> Result<Vec<RolloutRow>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != ROLLOUT_HEADER {
        return Err(FormatError::Header { expected: ROLLOUT_HEADER.iter().map(|s| s.to_string()).collect(), found });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let float = |i: usize| -> Result<f64, FormatError> {
            let s = &rec[i];
            s.parse().map_err(|_| FormatError::Field { line, column: ROLLOUT_HEADER[i], value: s.to_string() })
        };
        let joint = rec[1]
            .parse()
            .ok()
            .filter(|&j: &usize| j >= 1)
            .ok_or_else(|| FormatError::Field { line, column: "joint", value: rec[1].to_string() })?;
        rows.push(RolloutRow {
            t: float(0)?,
            joint,
            theta: float(2)?,
            theta_ref: float(3)?,
            u: float(4)?,
            kp: float(5)?,
            kd: float(6)?,
        });
    }
    Ok(rows)
}

/// `iteration, <parameter columns>, cost, best_so_far`.
pub fn write_bo_trace_csv<W: Write>(trace: &BoTrace, w: W) -> Result<(), FormatError> {
    let mut out = csv_writer(w);
    let mut header = vec!["iteration".to_string()];
    header.extend(trace.parameter_names.iter().cloned());
    header.extend(["cost".to_string(), "best_so_far".to_string()]);
    out.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.parameters.iter().map(|v| fmt_float(*v)));
        row.push(fmt_float(r.cost));
        row.push(fmt_float(r.best_so_far));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `q1..qn, axis_major, axis_minor, major_x, major_y, minor_x, minor_y,
/// singular`; axis fields are left empty on singular rows.
pub fn write_compliance_csv<W: Write>(rows: &[ComplianceRow], n_joints: usize, w: W) -> Result<(), FormatError> {
    let mut out = csv_writer(w);
    let mut header: Vec<String> = (1..=n_joints).map(|j| format!("q{j}")).collect();
    header.extend(
        ["axis_major", "axis_minor", "major_x", "major_y", "minor_x", "minor_y", "singular"].map(str::to_string),
    );
    out.write_record(&header)?;
    for r in rows {
        let mut row: Vec<String> = r.q.iter().map(|v| fmt_float(*v)).collect();
        match &r.ellipsoid {
            Some(e) => {
                let [d0, d1] = e.directions;
                row.extend([e.semi_axes[0], e.semi_axes[1], d0.x, d0.y, d1.x, d1.y].map(fmt_float));
                row.push("false".into());
            }
            None => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push("true".into());
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-joint cost summary written next to a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub weights: CostWeights,
    pub joints: Vec<JointCostSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCostSummary {
    pub joint: usize,
    pub tracking: f64,
    pub effort: f64,
    pub total: f64,
    pub max_abs_u: f64,
}

impl CostSummary {
    pub fn new(trace: &RolloutTrace, costs: &[CostBreakdown], weights: CostWeights) -> Self {
        let joints = costs
            .iter()
            .enumerate()
            .map(|(j, c)| JointCostSummary {
                joint: j + 1,
                tracking: c.tracking,
                effort: c.effort,
                total: c.total,
                max_abs_u: trace.joints[j].u.iter().fold(0.0, |m, u| m.max(u.abs())),
            })
            .collect();
        Self { weights, joints }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZnJointReport {
    pub joint: usize,
    pub ultimate_gain: f64,
    pub ultimate_period: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

pub fn zn_report(results: &[ZnResult]) -> Vec<ZnJointReport> {
    results
        .iter()
        .enumerate()
        .map(|(j, r)| ZnJointReport {
            joint: j + 1,
            ultimate_gain: r.ultimate_gain,
            ultimate_period: r.ultimate_period,
            kp: r.gains.kp,
            ki: r.gains.ki,
            kd: r.gains.kd,
        })
        .collect()
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}
