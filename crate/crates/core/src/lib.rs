//! Nonlinear adaptive PID tuning for the joints of a planar mobile
//! manipulator, driven by Gaussian-process Bayesian optimization.
//!
//! The pipeline: tune a constant-gain PID per joint with the Ziegler–Nichols
//! ultimate-gain method, derive a search box for the adaptive gain laws from
//! those gains, then replace and optimize the joint controllers one at a time
//! from the base outwards.

pub mod bayesopt;
pub mod control;
pub mod dynamics;
pub mod formats;
pub mod gp;
pub mod harness;
