use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use super::propagation::{generate_testbed, gpc_propagate, Propagation, Testbed};
use crate::calibration::{
    posterior_field, posterior_hyper, prior_expectation, sample_posterior, Chain, CovarianceModel,
    CredibilityReport, DiscrepancyModel, HyperDefinition, HyperSamples, LikelihoodSurrogate,
    ObservationSet, PosteriorField, ResponseCredibility, VerdictThresholds,
};
use crate::nozzle::{extract_responses, Response, ResponseCoefficients};
use crate::random_field::HyperPrior;
use crate::stats::Family;
use crate::{Error, Result};

const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Baseline,
    PriorSensitivity,
    ModelError,
    DataError,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Baseline,
        Scenario::PriorSensitivity,
        Scenario::ModelError,
        Scenario::DataError,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::PriorSensitivity => "prior-sensitivity",
            Scenario::ModelError => "model-error",
            Scenario::DataError => "data-error",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown scenario '{s}', expected one of baseline, prior-sensitivity, model-error, data-error"
                ))
            })
    }
}

/// One calibration run of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: RunConfig,
}

fn family_label(f: &Family) -> String {
    match f {
        Family::Gamma { shape, scale } => format!("g-{shape}-{scale}"),
        Family::InverseGamma { shape, scale } => format!("ig-{shape}-{scale}"),
        Family::Normal { mean, std } => format!("n-{mean}-{std}"),
        Family::Fixed { value } => format!("fixed-{value}"),
    }
}

/// Resolved configs of every run of `scenario`, with-discrepancy runs first.
///
/// The baseline uses the baseline variance prior; prior sensitivity injects the
/// model error and sweeps the sensitivity variance priors; the error scenarios
/// inject their error and use the default variance prior.
pub fn scenario_variants(cfg: &RunConfig, scenario: Scenario) -> Vec<Variant> {
    let mut base = cfg.clone();
    base.injection.model_error = 1.0;
    base.injection.data_error = 1.0;
    match scenario {
        Scenario::Baseline => {}
        Scenario::PriorSensitivity | Scenario::ModelError => {
            base.injection.model_error = cfg.injection.factor
        }
        Scenario::DataError => base.injection.data_error = cfg.injection.factor,
    }
    let mut with = Vec::new();
    if scenario == Scenario::PriorSensitivity {
        for v in &cfg.discrepancy.sensitivity_variances {
            let mut c = base.clone();
            c.discrepancy.enabled = true;
            c.discrepancy.variance = *v;
            with.push(Variant {
                label: format!("discrepancy-{}", family_label(v)),
                config: c,
            });
        }
    } else {
        let mut c = base.clone();
        c.discrepancy.enabled = true;
        if scenario == Scenario::Baseline {
            c.discrepancy.variance = cfg.discrepancy.baseline_variance;
        }
        with.push(Variant {
            label: "with-discrepancy".into(),
            config: c,
        });
    }
    let mut without = base;
    without.discrepancy.enabled = false;
    with.push(Variant {
        label: "no-discrepancy".into(),
        config: without,
    });
    with
}

/// Dotted paths whose values differ between two configs.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    fn walk(a: &Value, b: &Value, path: &str, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let p = if path.is_empty() {
                        k.clone()
                    } else {
                        format!("{path}.{k}")
                    };
                    walk(
                        x.get(k).unwrap_or(&Value::Null),
                        y.get(k).unwrap_or(&Value::Null),
                        &p,
                        out,
                    );
                }
            }
            _ if a != b => out.push(path.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    let a = serde_json::to_value(a).expect("config serialises");
    let b = serde_json::to_value(b).expect("config serialises");
    walk(&a, &b, "", &mut out);
    out
}

/// Projection stage shared by every variant of every scenario.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub propagation: Propagation,
    pub testbed: Testbed,
    /// Simulator chaos coefficients at the observed nodes.
    pub simulator: ResponseCoefficients,
    pub seconds: f64,
}

/// Build the prior field, propagate it and generate the testbed.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let t0 = Instant::now();
    let propagation = gpc_propagate(cfg, cfg.kl.n_modes, cfg.order)?;
    let testbed = generate_testbed(cfg).map_err(|e| e.in_stage("testbed"))?;
    let mut xs: Vec<f64> = testbed
        .observations
        .responses
        .iter()
        .flat_map(|d| d.x.clone())
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let simulator = extract_responses(&propagation.state, &cfg.flow, &xs)
        .map_err(|e| e.in_stage("projection"))?;
    Ok(Prepared {
        config: cfg.clone(),
        propagation,
        testbed,
        simulator,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Discrete L1 and L2 norms of area differences, averaged over grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaErrors {
    pub prior_l1: f64,
    pub prior_l2: f64,
    pub posterior_l1: f64,
    pub posterior_l2: f64,
}

fn norms(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let l1 = a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / n;
    let l2 = (a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n).sqrt();
    (l1, l2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub truth: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub posterior: PosteriorField,
    pub errors: AreaErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub prior_density: Vec<f64>,
    pub posterior_density: Vec<f64>,
}

impl Histogram {
    fn new(h: &HyperSamples) -> Self {
        let (lo, hi) = (h.prior.lo, h.prior.hi);
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
            .map(|i| lo + width * i as f64)
            .collect();
        let mut counts = vec![0usize; HISTOGRAM_BINS];
        for &s in &h.samples {
            if width > 0.0 && s >= lo && s <= hi {
                counts[(((s - lo) / width) as usize).min(HISTOGRAM_BINS - 1)] += 1;
            }
        }
        let n = h.samples.len() as f64;
        let prior_density = edges
            .windows(2)
            .map(|e| {
                if width > 0.0 {
                    (h.prior.cdf(e[1]) - h.prior.cdf(e[0])) / width
                } else {
                    0.0
                }
            })
            .collect();
        let posterior_density = counts
            .iter()
            .map(|&c| {
                if width > 0.0 {
                    c as f64 / (n * width)
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            edges,
            prior_density,
            posterior_density,
        }
    }
}

/// Prior and posterior summary of one hyper-parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSummary {
    pub name: String,
    /// Set for discrepancy hyper-parameters.
    pub response: Option<Response>,
    pub dim: usize,
    pub prior_mean: f64,
    pub prior_median: f64,
    pub posterior_mean: f64,
    pub posterior_median: f64,
    /// `E[1/θ]`, reported for variances.
    pub prior_precision_mean: Option<f64>,
    pub posterior_precision_mean: Option<f64>,
    pub ks_to_prior: f64,
    pub histogram: Histogram,
}

impl HyperSummary {
    fn new(h: &HyperSamples, response: Option<Response>, variance: bool) -> Result<Self> {
        let (prior_precision_mean, posterior_precision_mean) = if variance {
            let post = h.samples.iter().map(|s| 1.0 / s).sum::<f64>() / h.samples.len() as f64;
            (Some(prior_expectation(&h.prior, |t| 1.0 / t)?), Some(post))
        } else {
            (None, None)
        };
        Ok(Self {
            name: h.name.clone(),
            response,
            dim: h.dim,
            prior_mean: h.prior.moments().0,
            prior_median: h.prior.from_germ(0.0),
            posterior_mean: h.mean(),
            posterior_median: h.median(),
            prior_precision_mean,
            posterior_precision_mean,
            ks_to_prior: h.ks_to_prior(),
            histogram: Histogram::new(h),
        })
    }
}

/// How a response covariance was evaluated during sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    pub response: Response,
    pub projected: bool,
    pub order: usize,
    pub median_inverse_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub discrepancy: bool,
    pub variance_prior: Option<Family>,
    pub corr_prior: Option<Family>,
    pub model_error: f64,
    pub data_error: f64,
    /// Config paths that differ from the scenario-free baseline run with the
    /// same discrepancy switch.
    pub config_diff: Vec<String>,
    pub germ_dim: usize,
    pub acceptance_rate: f64,
    pub final_step: f64,
    pub stalled_windows: usize,
    pub invalid_proposals: usize,
    /// Fraction of evaluations that fell back to direct factorisation.
    pub direct_rate: f64,
    pub covariance: Vec<CovarianceSummary>,
    pub area: AreaSummary,
    pub hypers: Vec<HyperSummary>,
    pub credibility: Option<CredibilityReport>,
}

impl RunReport {
    pub fn hyper(&self, name: &str) -> Option<&HyperSummary> {
        self.hypers.iter().find(|h| h.name == name)
    }
}

/// Wall times in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Field construction, stochastic solve and testbed.
    pub projection: f64,
    /// Surrogate construction and MCMC over all runs.
    pub sampling: f64,
    pub total: f64,
    pub runs: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub config_hash: String,
    pub config: RunConfig,
    pub runs: Vec<RunReport>,
    /// Kept out of the report file; written separately.
    #[serde(skip)]
    pub timing: Timing,
}

impl ExperimentReport {
    pub fn run(&self, label: &str) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.label == label)
    }
}

/// Report plus the retained chains, in run order.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub chains: Vec<Chain>,
}

fn discrepancy_name(r: Response, what: &str) -> String {
    format!("{}_discrepancy_{what}", r.name())
}

/// Likelihood surrogate, chain and summaries of one variant.
pub fn calibrate_variant(prepared: &Prepared, variant: &Variant) -> Result<(RunReport, Chain)> {
    let cfg = &variant.config;
    let prior = &prepared.propagation.prior;
    let mut simulator = prepared.simulator.clone();
    let inj = cfg.injection;
    for c in simulator.get_mut(inj.response) {
        c.iter_mut().for_each(|v| *v *= inj.model_error);
    }
    let mut observations: ObservationSet = prepared.testbed.observations.clone();
    if let Some(d) = observations.get_mut(inj.response) {
        d.values.iter_mut().for_each(|v| *v *= inj.data_error);
    }
    let base = prior.layout.germ_dim();
    let mut models = Vec::new();
    if cfg.discrepancy.enabled {
        let var = HyperPrior::new(cfg.discrepancy.variance)?;
        let corr = HyperPrior::new(cfg.discrepancy.corr)?;
        for (k, &r) in cfg.discrepancy.responses.iter().enumerate() {
            let mut m = DiscrepancyModel::new(r, var, corr, [base + 2 * k, base + 2 * k + 1]);
            m.mean = cfg.discrepancy.mean.clone();
            models.push(m);
        }
    }
    let surrogate = LikelihoodSurrogate::new(&observations, &simulator, &models, cfg.surrogate)
        .map_err(|e| e.in_stage("likelihood surrogate"))?;
    let (chain, stats) =
        sample_posterior(&surrogate, &cfg.mcmc_settings()).map_err(|e| e.in_stage("mcmc"))?;

    let field = &prior.field;
    let posterior = posterior_field(&chain, field, &cfg.quantiles)?;
    let truth: Vec<f64> = field.x.iter().map(|&x| cfg.true_area.value(x)).collect();
    let prior_mean = field.mean();
    let (prior_l1, prior_l2) = norms(&prior_mean, &truth);
    let (posterior_l1, posterior_l2) = norms(&posterior.mean, &truth);

    let [hv, hc] = prior.layout.hyper_dims();
    let [fv, fc] = cfg.field_prior.resolve()?;
    let mut defs = vec![
        (
            HyperDefinition {
                name: "field_variance".into(),
                dim: hv,
                prior: fv,
            },
            None,
            true,
        ),
        (
            HyperDefinition {
                name: "field_corr".into(),
                dim: hc,
                prior: fc,
            },
            None,
            false,
        ),
    ];
    for m in &models {
        defs.push((
            HyperDefinition {
                name: discrepancy_name(m.response, "variance"),
                dim: m.dims[0],
                prior: m.variance,
            },
            Some(m.response),
            true,
        ));
        defs.push((
            HyperDefinition {
                name: discrepancy_name(m.response, "corr"),
                dim: m.dims[1],
                prior: m.corr,
            },
            Some(m.response),
            false,
        ));
    }
    let plain: Vec<HyperDefinition> = defs.iter().map(|d| d.0.clone()).collect();
    let samples = posterior_hyper(&chain, &plain)?;
    let hypers = samples
        .iter()
        .zip(&defs)
        .map(|(s, d)| HyperSummary::new(s, d.1, d.2))
        .collect::<Result<Vec<_>>>()?;

    let credibility = if models.is_empty() {
        None
    } else {
        let thresholds = VerdictThresholds::default();
        let mut responses = Vec::with_capacity(models.len());
        for m in &models {
            let find = |what: &str| {
                let name = discrepancy_name(m.response, what);
                samples
                    .iter()
                    .find(|s| s.name == name)
                    .expect("defined above")
            };
            responses.push(
                ResponseCredibility::assess(
                    m.response,
                    find("variance"),
                    find("corr"),
                    &thresholds,
                )
                .map_err(|e| e.in_stage("credibility"))?,
            );
        }
        Some(CredibilityReport {
            thresholds,
            responses,
        })
    };

    let covariance = surrogate
        .terms
        .iter()
        .filter_map(|t| match &t.cov {
            CovarianceModel::Discrepancy(s) => Some(CovarianceSummary {
                response: t.response,
                projected: s.validation.projected,
                order: s.validation.order,
                median_inverse_error: s.validation.median_inverse_error,
            }),
            CovarianceModel::NoiseOnly { .. } => None,
        })
        .collect();

    let report = RunReport {
        label: variant.label.clone(),
        discrepancy: cfg.discrepancy.enabled,
        variance_prior: cfg.discrepancy.enabled.then_some(cfg.discrepancy.variance),
        corr_prior: cfg.discrepancy.enabled.then_some(cfg.discrepancy.corr),
        model_error: inj.model_error,
        data_error: inj.data_error,
        config_diff: Vec::new(),
        germ_dim: surrogate.germ_dim,
        acceptance_rate: chain.acceptance_rate(),
        final_step: chain.step,
        stalled_windows: chain.stalled_windows,
        invalid_proposals: chain.invalid,
        direct_rate: stats.direct_rate(),
        covariance,
        area: AreaSummary {
            truth,
            prior_mean,
            posterior,
            errors: AreaErrors {
                prior_l1,
                prior_l2,
                posterior_l1,
                posterior_l2,
            },
        },
        hypers,
        credibility,
    };
    Ok((report, chain))
}

/// Run every variant of `scenario` on an existing projection.
pub fn run_prepared(prepared: &Prepared, scenario: Scenario) -> Result<ExperimentOutcome> {
    let t0 = Instant::now();
    let cfg = &prepared.config;
    let baselines = scenario_variants(cfg, Scenario::Baseline);
    let mut runs = Vec::new();
    let mut chains = Vec::new();
    let mut timing = Timing {
        projection: prepared.seconds,
        ..Default::default()
    };
    for v in scenario_variants(cfg, scenario) {
        let t = Instant::now();
        let (mut report, chain) =
            calibrate_variant(prepared, &v).map_err(|e| e.in_stage("calibration"))?;
        let seconds = t.elapsed().as_secs_f64();
        timing.sampling += seconds;
        timing.runs.push((v.label.clone(), seconds));
        let reference = baselines
            .iter()
            .find(|b| b.config.discrepancy.enabled == v.config.discrepancy.enabled)
            .expect("baseline has both switches");
        report.config_diff = config_diff(&reference.config, &v.config);
        runs.push(report);
        chains.push(chain);
    }
    timing.total = prepared.seconds + t0.elapsed().as_secs_f64();
    Ok(ExperimentOutcome {
        report: ExperimentReport {
            scenario,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            runs,
            timing,
        },
        chains,
    })
}

/// Projection, testbed, surrogate, sampling and reporting for one scenario.
pub fn run_experiment(cfg: &RunConfig, scenario: Scenario) -> Result<ExperimentOutcome> {
    let prepared = prepare(cfg)?;
    run_prepared(&prepared, scenario)
}
