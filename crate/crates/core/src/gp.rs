//! Gaussian-process regression with a squared-exponential kernel.
//!
//! The model caches a Cholesky factor of `k(X, X) + σ_ε² I` and is rebuilt
//! from scratch on every insertion. Targets can optionally be standardized
//! (centered and scaled by their sample statistics) so that the zero prior
//! mean is a sensible default for strictly positive costs.

use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("input has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(&'static str),
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("kernel matrix is not positive definite (jitter up to {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub sigma_se: f64,
    /// One entry for an isotropic kernel, otherwise one per input dimension.
    pub length_scale: Vec<f64>,
    pub sigma_eps: f64,
}

impl KernelParams {
    pub fn isotropic(sigma_se: f64, length_scale: f64, sigma_eps: f64) -> Self {
        Self { sigma_se, length_scale: vec![length_scale], sigma_eps }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.sigma_se.is_finite() && self.sigma_se > 0.0) {
            return Err(GpError::InvalidKernel("sigma_se must be positive"));
        }
        if self.length_scale.is_empty() || !self.length_scale.iter().all(|l| l.is_finite() && *l > 0.0) {
            return Err(GpError::InvalidKernel("length scales must be positive"));
        }
        if !(self.sigma_eps.is_finite() && self.sigma_eps >= 0.0) {
            return Err(GpError::InvalidKernel("sigma_eps must be non-negative"));
        }
        Ok(())
    }

    fn check_dim(&self, d: usize) -> Result<(), GpError> {
        let n = self.length_scale.len();
        if n == 1 || n == d {
            Ok(())
        } else {
            Err(GpError::DimensionMismatch { expected: n, got: d })
        }
    }

    #[inline]
    fn scale(&self, i: usize) -> f64 {
        if self.length_scale.len() == 1 {
            self.length_scale[0]
        } else {
            self.length_scale[i]
        }
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| {
                let d = (x - y) / self.scale(i);
                d * d
            })
            .sum();
        self.sigma_se * self.sigma_se * (-0.5 * r2).exp()
    }
}

/// `σ_SE² exp(−‖(x − x′)/ℓ‖² / 2)`.
pub fn se_kernel(kernel: &KernelParams, x: &[f64], x_prime: &[f64]) -> Result<f64, GpError> {
    if x.len() != x_prime.len() {
        return Err(GpError::DimensionMismatch { expected: x.len(), got: x_prime.len() });
    }
    kernel.check_dim(x.len())?;
    Ok(kernel.eval(x, x_prime))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetScaling {
    /// Zero prior mean on raw targets.
    #[default]
    Raw,
    /// Zero prior mean on `(y − mean) / std`; predictions are mapped back.
    Standardize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kernel: KernelParams,
    scaling: TargetScaling,
    y_offset: f64,
    y_scale: f64,
    dim: Option<usize>,
    factor: Option<Cholesky<f64, Dyn>>,
    /// `Σ · y_std`
    alpha: DVector<f64>,
    jitter: f64,
}

const JITTER_START: f64 = 1e-10;
const JITTER_DOUBLINGS: u32 = 10;

impl GpModel {
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, kernel: KernelParams) -> Result<Self, GpError> {
        Self::fit_with(x, y, kernel, TargetScaling::Raw)
    }

    pub fn fit_with(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        kernel: KernelParams,
        scaling: TargetScaling,
    ) -> Result<Self, GpError> {
        kernel.validate()?;
        if x.len() != y.len() {
            return Err(GpError::LengthMismatch { inputs: x.len(), targets: y.len() });
        }
        let dim = x.first().map(Vec::len);
        if let Some(d) = dim {
            kernel.check_dim(d)?;
            if let Some(bad) = x.iter().find(|r| r.len() != d) {
                return Err(GpError::DimensionMismatch { expected: d, got: bad.len() });
            }
        }
        if !(x.iter().flatten().all(|v| v.is_finite()) && y.iter().all(|v| v.is_finite())) {
            return Err(GpError::NonFinite);
        }

        let (y_offset, y_scale) = match scaling {
            TargetScaling::Standardize if !y.is_empty() => {
                let n = y.len() as f64;
                let mean = y.iter().sum::<f64>() / n;
                let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                (mean, if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 })
            }
            _ => (0.0, 1.0),
        };

        let n = x.len();
        if n == 0 {
            return Ok(Self {
                x,
                y,
                kernel,
                scaling,
                y_offset,
                y_scale,
                dim,
                factor: None,
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }

        let s2 = kernel.sigma_se * kernel.sigma_se;
        let max_jitter = JITTER_START * s2 * f64::from(1u32 << JITTER_DOUBLINGS);
        // A repeated input without observation noise makes the Gram matrix
        // exactly singular; jitter is only meant to absorb rounding.
        if kernel.sigma_eps == 0.0 {
            for i in 0..n {
                if x[..i].iter().any(|prev| prev == &x[i]) {
                    return Err(GpError::NotPositiveDefinite { max_jitter });
                }
            }
        }

        let noise = kernel.sigma_eps * kernel.sigma_eps;
        let mut gram = DMatrix::from_fn(n, n, |i, j| kernel.eval(&x[i], &x[j]));
        for i in 0..n {
            gram[(i, i)] += noise;
        }
        let mut jitter = 0.0;
        let mut factor = Cholesky::new(gram.clone());
        let mut next = JITTER_START * s2;
        let mut tries = 0;
        while factor.is_none() && tries <= JITTER_DOUBLINGS {
            let mut g = gram.clone();
            for i in 0..n {
                g[(i, i)] += next;
            }
            factor = Cholesky::new(g);
            jitter = next;
            next *= 2.0;
            tries += 1;
        }
        let factor = factor.ok_or(GpError::NotPositiveDefinite { max_jitter })?;
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_offset) / y_scale));
        let alpha = factor.solve(&ys);
        Ok(Self { x, y, kernel, scaling, y_offset, y_scale, dim, factor: Some(factor), alpha, jitter })
    }

    /// Empty model: the posterior is the prior everywhere.
    pub fn prior(kernel: KernelParams, scaling: TargetScaling) -> Result<Self, GpError> {
        Self::fit_with(Vec::new(), Vec::new(), kernel, scaling)
    }

    /// Returns a new model trained on the current data plus `(x, y)`.
    pub fn add_sample(&self, x: Vec<f64>, y: f64) -> Result<Self, GpError> {
        let mut xs = self.x.clone();
        let mut ys = self.y.clone();
        xs.push(x);
        ys.push(y);
        Self::fit_with(xs, ys, self.kernel.clone(), self.scaling)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn scaling(&self) -> TargetScaling {
        self.scaling
    }

    /// Diagonal jitter that was needed to factorize, 0 if none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn posterior(&self, x_star: &[f64]) -> Result<Posterior, GpError> {
        match self.dim {
            Some(d) if d != x_star.len() => return Err(GpError::DimensionMismatch { expected: d, got: x_star.len() }),
            None => self.kernel.check_dim(x_star.len())?,
            _ => {}
        }
        let prior = self.kernel.sigma_se * self.kernel.sigma_se;
        let Some(factor) = &self.factor else {
            return Ok(Posterior { mean: self.y_offset, variance: prior * self.y_scale * self.y_scale });
        };
        let k_star = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.kernel.eval(xi, x_star)));
        let mean = k_star.dot(&self.alpha);
        let v = factor.l().solve_lower_triangular(&k_star).expect("Cholesky factor has a positive diagonal");
        let variance = (prior - v.dot(&v)).max(0.0);
        Ok(Posterior { mean: self.y_offset + self.y_scale * mean, variance: variance * self.y_scale * self.y_scale })
    }

    /// Log marginal likelihood of the (scaled) targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(factor) = &self.factor else { return 0.0 };
        let n = self.x.len();
        let ys = DVector::from_iterator(n, self.y.iter().map(|v| (v - self.y_offset) / self.y_scale));
        let log_det: f64 = factor.l().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * ys.dot(&self.alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}
