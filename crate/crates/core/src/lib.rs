//! Polynomial-chaos Bayesian calibration of simulators whose inputs are
//! spatially varying random fields with uncertain covariance hyper-parameters.
//!
//! The crate is organised bottom-up:
//!
//! * [`chaos`]: Hermite chaos bases, Gauss quadrature and moment tensors.
//! * [`random_field`]: Karhunen-Loève modes of a squared-exponential kernel
//!   expanded over hyper-parameter space, and the chaos expansion of the field.
//! * [`nozzle`]: deterministic and stochastic-Galerkin quasi-1D Euler solvers.
//! * [`calibration`]: likelihood surrogates, Metropolis-Hastings sampling and
//!   credibility diagnostics.
//! * [`harness`]: run configuration, synthetic testbed, Monte Carlo baseline
//!   and the scripted experiments.

pub mod calibration;
pub mod chaos;
pub mod error;
pub mod harness;
pub mod nozzle;
pub mod random_field;
pub mod stats;

pub use error::{Error, Result};
