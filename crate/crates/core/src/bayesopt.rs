//! Sequential Bayesian optimization with an Expected-Improvement acquisition.
//!
//! Costs are minimized. Internally the acquisition maximizes `f = −cost`, so an
//! improvement is a predicted cost below the best observed one. The surrogate
//! lives on the unit cube; [`SearchBox`] maps to and from parameter space.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gp::{GpError, GpModel, KernelParams, TargetScaling};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoError {
    #[error("invalid search box: {0}")]
    InvalidBox(String),
    #[error("budget {budget} and n_init {n_init} must satisfy budget >= n_init >= 1")]
    InvalidBudget { budget: usize, n_init: usize },
    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub dims: Vec<BoxDim>,
}

impl SearchBox {
    pub fn new(dims: Vec<BoxDim>) -> Result<Self, BoError> {
        let b = Self { dims };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BoError> {
        if self.dims.is_empty() {
            return Err(BoError::InvalidBox("no dimensions".into()));
        }
        for d in &self.dims {
            if !(d.lower.is_finite() && d.upper.is_finite() && d.lower < d.upper) {
                return Err(BoError::InvalidBox(format!("{}: need finite lower < upper", d.name)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.dims).map(|(v, d)| (v - d.lower) / (d.upper - d.lower)).collect()
    }

    /// Maps a unit-cube point into the box, clamping to the bounds.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.dims)
            .map(|(v, d)| (d.lower + v.clamp(0.0, 1.0) * (d.upper - d.lower)).clamp(d.lower, d.upper))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.dims).all(|(v, d)| *v >= d.lower && *v <= d.upper)
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                self.dims
                    .iter()
                    .enumerate()
                    .map(|(i, b)| if mask >> i & 1 == 1 { b.upper } else { b.lower })
                    .collect()
            })
            .collect()
    }
}

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[inline]
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement of a Gaussian `f ~ N(mean, variance)` over `f_best`,
/// maximization convention: `(f̄ − f_best) Φ(α) + √V φ(α)`, `α = (f̄ − f_best)/√V`.
/// Zero when the variance is zero.
pub fn expected_improvement_from_moments(mean: f64, variance: f64, f_best: f64) -> f64 {
    if !(variance > 0.0) {
        return 0.0;
    }
    let sd = variance.sqrt();
    let diff = mean - f_best;
    let alpha = diff / sd;
    (diff * std_normal_cdf(alpha) + sd * std_normal_pdf(alpha)).max(0.0)
}

/// EI at `x` for a model of costs, given the lowest cost observed so far.
pub fn expected_improvement(model: &GpModel, x: &[f64], best_cost: f64) -> Result<f64, GpError> {
    let p = model.posterior(x)?;
    Ok(expected_improvement_from_moments(-p.mean, p.variance, -best_cost))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSettings {
    pub n_candidates: usize,
    pub n_starts: usize,
    pub refine_passes: usize,
    pub initial_step: f64,
    pub step_shrink: f64,
}

impl Default for AcquisitionSettings {
    fn default() -> Self {
        Self { n_candidates: 1024, n_starts: 4, refine_passes: 20, initial_step: 0.1, step_shrink: 0.7 }
    }
}

/// Approximate EI maximizer over the box: random candidates, then coordinate
/// refinement from the best few. `model` must be trained on unit-cube inputs.
pub fn propose_next<R: Rng>(
    model: &GpModel,
    search: &SearchBox,
    best_cost: f64,
    rng: &mut R,
    settings: &AcquisitionSettings,
) -> Result<Vec<f64>, GpError> {
    let d = search.dim();
    let candidates: Vec<Vec<f64>> =
        (0..settings.n_candidates.max(1)).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let ei = |u: &[f64]| expected_improvement(model, u, best_cost);
    let scores = candidates.par_iter().map(|c| ei(c)).collect::<Result<Vec<f64>, _>>()?;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut best = (candidates[order[0]].clone(), scores[order[0]]);
    for &start in order.iter().take(settings.n_starts) {
        let mut x = candidates[start].clone();
        let mut fx = scores[start];
        let mut step = settings.initial_step;
        for _ in 0..settings.refine_passes {
            for i in 0..d {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[i] = (y[i] + dir * step).clamp(0.0, 1.0);
                    let fy = ei(&y)?;
                    if fy > fx {
                        x = y;
                        fx = fy;
                    }
                }
            }
            step *= settings.step_shrink;
        }
        if fx > best.1 {
            best = (x, fx);
        }
    }
    Ok(search.from_unit(&best.0))
}

/// `n` stratified points in `[0, 1]^d`: one per row and column stratum.
pub fn latin_hypercube<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, p) in perm.into_iter().enumerate() {
            points[i][j] = (p as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoSettings {
    pub budget: usize,
    pub n_init: usize,
    pub seed: u64,
    /// Kernel on unit-cube inputs and standardized costs.
    pub kernel: KernelParams,
    /// Isotropic length scales to choose from by marginal likelihood; empty
    /// keeps `kernel.length_scale`.
    pub length_scale_grid: Vec<f64>,
    pub acquisition: AcquisitionSettings,
    /// Cost recorded for the first failure when nothing has succeeded yet.
    pub first_failure_cost: f64,
    /// Failures cost this multiple of the worst successful cost so far.
    pub failure_factor: f64,
}

impl BoSettings {
    pub fn new(budget: usize, n_init: usize, seed: u64) -> Self {
        Self {
            budget,
            n_init,
            seed,
            kernel: KernelParams::isotropic(1.0, 0.2, 0.05),
            length_scale_grid: Vec::new(),
            acquisition: AcquisitionSettings::default(),
            first_failure_cost: 1e6,
            failure_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    /// 1-based.
    pub iteration: usize,
    pub parameters: Vec<f64>,
    pub cost: f64,
    pub best_so_far: f64,
    /// Set when the objective failed and `cost` is a penalty.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub seed: u64,
    pub parameter_names: Vec<String>,
    pub records: Vec<BoRecord>,
}

impl BoTrace {
    pub fn best(&self) -> Option<&BoRecord> {
        self.records.iter().filter(|r| !r.failed).min_by(|a, b| a.cost.total_cmp(&b.cost))
    }

    pub fn best_cost(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_so_far)
    }
}

struct Tracker {
    records: Vec<BoRecord>,
    worst_success: Option<f64>,
    best: f64,
}

impl Tracker {
    fn push<E>(&mut self, settings: &BoSettings, parameters: Vec<f64>, outcome: Result<f64, E>) -> f64 {
        let (cost, failed) = match outcome {
            Ok(c) if c.is_finite() => {
                self.worst_success = Some(self.worst_success.map_or(c, |w| w.max(c)));
                (c, false)
            }
            _ => match self.worst_success {
                Some(w) if w > 0.0 => (settings.failure_factor * w, true),
                _ => (settings.first_failure_cost, true),
            },
        };
        self.best = self.best.min(cost);
        self.records.push(BoRecord {
            iteration: self.records.len() + 1,
            parameters,
            cost,
            best_so_far: self.best,
            failed,
        });
        cost
    }
}

fn fit_surrogate(search: &SearchBox, records: &[BoRecord], settings: &BoSettings) -> Result<GpModel, GpError> {
    let x: Vec<Vec<f64>> = records.iter().map(|r| search.to_unit(&r.parameters)).collect();
    let y: Vec<f64> = records.iter().map(|r| r.cost).collect();
    if settings.length_scale_grid.is_empty() {
        return GpModel::fit_with(x, y, settings.kernel.clone(), TargetScaling::Standardize);
    }
    let mut best: Option<GpModel> = None;
    for &l in &settings.length_scale_grid {
        let kernel = KernelParams { length_scale: vec![l], ..settings.kernel.clone() };
        let m = GpModel::fit_with(x.clone(), y.clone(), kernel, TargetScaling::Standardize)?;
        if best.as_ref().is_none_or(|b| m.log_marginal_likelihood() > b.log_marginal_likelihood()) {
            best = Some(m);
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Minimizes a black-box cost over `search` with default surrogate settings.
pub fn optimize<F, E>(objective: F, search: &SearchBox, budget: usize, n_init: usize, seed: u64) -> Result<BoTrace, BoError>
where
    F: Fn(&[f64]) -> Result<f64, E> + Sync,
    E: Send,
{
    optimize_with(objective, search, &BoSettings::new(budget, n_init, seed))
}

/// Latin-hypercube initial design (evaluated in parallel), then one
/// EI-selected point per remaining iteration. Failed or non-finite
/// evaluations are recorded with a penalty cost and kept in the dataset.
pub fn optimize_with<F, E>(objective: F, search: &SearchBox, settings: &BoSettings) -> Result<BoTrace, BoError>
where
    F: Fn(&[f64]) -> Result<f64, E> + Sync,
    E: Send,
{
    search.validate()?;
    if !(settings.budget >= settings.n_init && settings.n_init >= 1) {
        return Err(BoError::InvalidBudget { budget: settings.budget, n_init: settings.n_init });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let initial: Vec<Vec<f64>> =
        latin_hypercube(settings.n_init, search.dim(), &mut rng).iter().map(|u| search.from_unit(u)).collect();
    let outcomes: Vec<Result<f64, E>> = initial.par_iter().map(|x| objective(x)).collect();

    let mut tracker = Tracker { records: Vec::with_capacity(settings.budget), worst_success: None, best: f64::INFINITY };
    for (x, r) in initial.into_iter().zip(outcomes) {
        tracker.push(settings, x, r);
    }
    while tracker.records.len() < settings.budget {
        let model = fit_surrogate(search, &tracker.records, settings)?;
        let x = propose_next(&model, search, tracker.best, &mut rng, &settings.acquisition)?;
        let r = objective(&x);
        tracker.push(settings, x, r);
    }
    Ok(BoTrace {
        seed: settings.seed,
        parameter_names: search.dims.iter().map(|d| d.name.clone()).collect(),
        records: tracker.records,
    })
}
