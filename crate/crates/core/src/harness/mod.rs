//! Run configuration, synthetic testbed, Monte Carlo baseline, convergence
//! study and the scripted calibration scenarios, with CSV and JSON writers.
//!
//! Every emitted file carries the config hash. Apart from `timing.json` files
//! and the `cpu_time` column of the convergence table, re-running an unchanged
//! config reproduces every file byte for byte.

mod config;
mod experiment;
mod output;
mod propagation;

pub use config::{
    ConvergenceConfig, DiscrepancyConfig, HyperPriors, Injection, ObservationPlan, RunConfig,
    SamplerConfig, OUT_DIR_ENV, SCHEMA_VERSION,
};
pub use experiment::{
    calibrate_variant, config_diff, prepare, run_experiment, run_prepared, scenario_variants,
    AreaErrors, AreaSummary, CovarianceSummary, ExperimentOutcome, ExperimentReport, Histogram,
    HyperSummary, Prepared, RunReport, Scenario, Timing, Variant,
};
pub use output::{
    write_convergence, write_experiment, write_json, write_monte_carlo, write_propagation,
    write_summary,
};
pub use propagation::{
    build_prior_field, generate_testbed, gpc_propagate, mc_propagate, run_convergence_study,
    ConvergenceRow, FieldMoments, GridMoments, MomentErrors, MonteCarlo, PriorField, Propagation,
    Testbed,
};
