use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{McmcSettings, SurrogateSettings};
use crate::nozzle::{FlowConfig, Response};
use crate::random_field::{HyperPrior, KlSettings, Polynomial, MIN_KERNEL_QUAD};
use crate::stats::Family;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the configured output directory; nothing else is read from the
/// environment.
pub const OUT_DIR_ENV: &str = "GPC_CALIB_OUT_DIR";

/// Priors of the two covariance hyper-parameters `(σ², λ)` of a process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperPriors {
    pub variance: Family,
    pub corr: Family,
}

impl HyperPriors {
    pub fn resolve(&self) -> Result<[HyperPrior; 2]> {
        Ok([HyperPrior::new(self.variance)?, HyperPrior::new(self.corr)?])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscrepancyConfig {
    pub enabled: bool,
    pub responses: Vec<Response>,
    /// Variance prior in use; scenarios overwrite it from the fields below.
    pub variance: Family,
    pub corr: Family,
    pub baseline_variance: Family,
    pub sensitivity_variances: Vec<Family>,
    pub mean: Polynomial,
}

impl Default for DiscrepancyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            responses: Response::ALL.to_vec(),
            variance: Family::InverseGamma {
                shape: 6.0,
                scale: 2.0,
            },
            corr: Family::Gamma {
                shape: 6.0,
                scale: 2.0,
            },
            baseline_variance: Family::InverseGamma {
                shape: 9.0,
                scale: 0.5,
            },
            sensitivity_variances: vec![
                Family::InverseGamma {
                    shape: 6.0,
                    scale: 2.0,
                },
                Family::InverseGamma {
                    shape: 1.5,
                    scale: 2.0,
                },
            ],
            mean: Polynomial::new(Vec::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationPlan {
    pub responses: Vec<Response>,
    pub locations: Vec<f64>,
    /// Noise standard deviation as a fraction of the observed value; positive,
    /// since the likelihood needs a non-singular noise covariance.
    pub noise_fraction: f64,
}

impl Default for ObservationPlan {
    fn default() -> Self {
        Self {
            responses: Response::ALL.to_vec(),
            locations: vec![0.15, 0.35, 0.55, 0.75, 0.95],
            noise_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub samples: usize,
    pub burn_in: usize,
    pub step: f64,
    pub adapt: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            burn_in: 1_000,
            step: 0.1,
            adapt: true,
        }
    }
}

/// Artificial errors; a factor of 1 disables the injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Injection {
    pub response: Response,
    /// Factor used by the scenarios that inject an error.
    pub factor: f64,
    /// Scales the simulator chaos coefficients of `response`.
    pub model_error: f64,
    /// Scales the observed values of `response`.
    pub data_error: f64,
}

impl Default for Injection {
    fn default() -> Self {
        Self {
            response: Response::Pressure,
            factor: 1.5,
            model_error: 1.0,
            data_error: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub n_modes: Vec<usize>,
    pub orders: Vec<usize>,
    pub mc_samples: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            n_modes: vec![1, 2, 3, 4],
            orders: vec![1, 2],
            mc_samples: 1_000,
        }
    }
}

/// Everything a run depends on. All randomness derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub seed: u64,
    pub flow: FlowConfig,
    pub true_area: Polynomial,
    pub prior_mean_area: Polynomial,
    pub kl: KlSettings,
    pub order: usize,
    pub field_prior: HyperPriors,
    pub discrepancy: DiscrepancyConfig,
    pub observations: ObservationPlan,
    pub mcmc: SamplerConfig,
    pub surrogate: SurrogateSettings,
    pub mc_samples: usize,
    pub injection: Injection,
    pub convergence: ConvergenceConfig,
    /// Probability levels of the reported posterior bands.
    pub quantiles: Vec<f64>,
    /// Not part of the config hash.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            seed: 0,
            flow: FlowConfig::default(),
            true_area: Polynomial::new(vec![1.0, 0.0, 0.8]),
            prior_mean_area: Polynomial::new(vec![1.0, 0.5, 0.0, 0.3]),
            kl: KlSettings::default(),
            order: 2,
            field_prior: HyperPriors {
                variance: Family::InverseGamma {
                    shape: 9.0,
                    scale: 0.5,
                },
                corr: Family::Gamma {
                    shape: 5.0,
                    scale: 0.2,
                },
            },
            discrepancy: DiscrepancyConfig::default(),
            observations: ObservationPlan::default(),
            mcmc: SamplerConfig::default(),
            surrogate: SurrogateSettings::default(),
            mc_samples: 1_000,
            injection: Injection::default(),
            convergence: ConvergenceConfig::default(),
            quantiles: vec![0.05, 0.5, 0.95],
            out_dir: None,
        }
    }
}

fn unique(rs: &[Response]) -> bool {
    rs.iter().enumerate().all(|(i, r)| !rs[..i].contains(r))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl RunConfig {
    /// Read and validate a JSON config.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full-scale sample counts: 10⁵ retained draws after 10⁴ burn-in and
    /// 10⁴ Monte Carlo samples.
    pub fn full_scale(mut self) -> Self {
        self.mcmc.samples = 100_000;
        self.mcmc.burn_in = 10_000;
        self.mc_samples = 10_000;
        self.convergence.mc_samples = 10_000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        self.flow.validate()?;
        let length = self.flow.length;
        for (name, poly) in [
            ("true_area", &self.true_area),
            ("prior_mean_area", &self.prior_mean_area),
        ] {
            let grid = self.flow.grid();
            if poly.coeffs.iter().any(|c| !c.is_finite())
                || grid.iter().any(|&x| !(poly.value(x) > 0.0))
            {
                return Err(Error::Config(format!(
                    "{name} must be positive on the domain"
                )));
            }
        }
        if self.kl.n_modes == 0 || self.kl.spatial_size < self.kl.n_modes {
            return Err(Error::Config(format!(
                "KL needs 1 <= n_modes <= spatial_size, got {} and {}",
                self.kl.n_modes, self.kl.spatial_size
            )));
        }
        if self.kl.spatial_quad < MIN_KERNEL_QUAD {
            return Err(Error::Config(format!(
                "kl.spatial_quad must be at least {MIN_KERNEL_QUAD}, got {}",
                self.kl.spatial_quad
            )));
        }
        if self.kl.hyper_quad[0] < self.kl.hyper_size[0]
            || self.kl.hyper_quad[1] < self.kl.hyper_size[1]
        {
            return Err(Error::Config(
                "hyper quadrature needs at least as many nodes as basis functions".into(),
            ));
        }
        if self.order == 0 {
            return Err(Error::Config("basis order must be at least 1".into()));
        }
        self.field_prior.resolve()?;
        let d = &self.discrepancy;
        for f in [d.variance, d.corr, d.baseline_variance]
            .iter()
            .chain(&d.sensitivity_variances)
        {
            f.validate()?;
        }
        if !unique(&d.responses)
            || d.responses
                .iter()
                .any(|r| !self.observations.responses.contains(r))
        {
            return Err(Error::Config(
                "discrepancy responses must be unique and observed".into(),
            ));
        }
        if d.sensitivity_variances.is_empty() {
            return Err(Error::Config(
                "prior sensitivity needs at least one variance prior".into(),
            ));
        }
        let o = &self.observations;
        if o.responses.is_empty() || !unique(&o.responses) {
            return Err(Error::Config(
                "observed responses must be non-empty and unique".into(),
            ));
        }
        if o.locations.is_empty() || o.locations.iter().any(|&x| !(x > 0.0 && x < length)) {
            return Err(Error::Config(format!(
                "observation locations must lie inside (0, {length})"
            )));
        }
        positive("observations.noise_fraction", o.noise_fraction)?;
        self.mcmc_settings().validate()?;
        self.surrogate.validate()?;
        if self.mc_samples == 0 || self.convergence.mc_samples == 0 {
            return Err(Error::Config(
                "Monte Carlo needs at least one sample".into(),
            ));
        }
        let i = &self.injection;
        positive("injection.factor", i.factor)?;
        positive("injection.model_error", i.model_error)?;
        positive("injection.data_error", i.data_error)?;
        let c = &self.convergence;
        if c.n_modes.is_empty()
            || c.orders.is_empty()
            || c.n_modes.contains(&0)
            || c.orders.contains(&0)
        {
            return Err(Error::Config(
                "convergence lists must be non-empty and positive".into(),
            ));
        }
        if c.n_modes.iter().any(|&n| n > self.kl.spatial_size) {
            return Err(Error::Config(
                "convergence n_modes exceeds the spatial basis size".into(),
            ));
        }
        if self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::Config("quantile levels must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn mcmc_settings(&self) -> McmcSettings {
        McmcSettings {
            n_samples: self.mcmc.samples,
            n_burn: self.mcmc.burn_in,
            step: self.mcmc.step,
            seed: self.seed,
            adapt: self.mcmc.adapt,
        }
    }

    /// Hex SHA-256 of the canonical JSON of the config without `out_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output directory: environment override, then config, then `out`.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        }
    }
}
