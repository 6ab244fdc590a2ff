//! Karhunen-Loève expansion of a Gaussian process whose covariance
//! hyper-parameters are themselves uncertain, and assembly of the resulting
//! field in Hermite chaos form.

mod field;
mod hyper;
mod kernel;
mod modes;

pub use field::{field_gpc, phi_hat, sample_field, GermLayout, GpcField, Polynomial};
pub use hyper::{
    germ_map_coefficients, hyper_to_pc, project_1d, HyperPrior, GERM_MAP_NODES, TRUNCATION_TAIL,
};
pub use kernel::{
    kernel_eval, CovarianceKernel, Eigenpairs, KernelForm, SpatialDiscretization, MIN_KERNEL_QUAD,
};
pub use modes::{expand_over_hyper, HyperAxis, KLModes, KlSettings, MIN_OVERLAP};
