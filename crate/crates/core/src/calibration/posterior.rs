use serde::{Deserialize, Serialize};

use super::mcmc::Chain;
use crate::chaos::{gauss_rule, RuleKind};
use crate::nozzle::Response;
use crate::random_field::{GpcField, HyperPrior, GERM_MAP_NODES};
use crate::stats::{ks_statistic, mean, sorted_quantile, variance};
use crate::{Error, Result};

/// Pointwise posterior summary of the calibrated field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorField {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub levels: Vec<f64>,
    /// `bands[l][g]` is the `levels[l]` quantile at node `g`.
    pub bands: Vec<Vec<f64>>,
}

/// Evaluate `field` at every retained draw and summarise pointwise.
pub fn posterior_field(chain: &Chain, field: &GpcField, levels: &[f64]) -> Result<PosteriorField> {
    if chain.is_empty() {
        return Err(Error::invalid("empty chain"));
    }
    let d = field.basis.germ_dim();
    if chain.dim < d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: chain.dim,
        });
    }
    let n = field.x.len();
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(chain.len()); n];
    for s in chain.iter() {
        for (g, v) in field.sample(&s[..d])?.into_iter().enumerate() {
            values[g].push(v);
        }
    }
    let mut bands = vec![Vec::with_capacity(n); levels.len()];
    let mut means = Vec::with_capacity(n);
    for v in &mut values {
        means.push(mean(v));
        v.sort_by(f64::total_cmp);
        for (b, &q) in bands.iter_mut().zip(levels) {
            b.push(sorted_quantile(v, q));
        }
    }
    Ok(PosteriorField {
        x: field.x.clone(),
        mean: means,
        levels: levels.to_vec(),
        bands,
    })
}

/// A hyper-parameter hosted by one germ dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperDefinition {
    pub name: String,
    pub dim: usize,
    pub prior: HyperPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSamples {
    pub name: String,
    pub dim: usize,
    pub prior: HyperPrior,
    pub samples: Vec<f64>,
}

impl HyperSamples {
    /// Kolmogorov-Smirnov distance to the prior law.
    pub fn ks_to_prior(&self) -> f64 {
        if self.prior.is_degenerate() {
            return 0.0;
        }
        ks_statistic(&self.samples, |t| self.prior.cdf(t))
    }

    pub fn mean(&self) -> f64 {
        mean(&self.samples)
    }

    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        sorted_quantile(&s, 0.5)
    }
}

/// Map every retained germ component through `θ = F⁻¹(Φ(ξ))`.
pub fn posterior_hyper(chain: &Chain, defs: &[HyperDefinition]) -> Result<Vec<HyperSamples>> {
    defs.iter()
        .map(|d| {
            if d.dim >= chain.dim {
                return Err(Error::invalid(format!(
                    "hyper-parameter {} lives on germ dimension {} of a {}-dimensional chain",
                    d.name, d.dim, chain.dim
                )));
            }
            Ok(HyperSamples {
                name: d.name.clone(),
                dim: d.dim,
                prior: d.prior,
                samples: chain.iter().map(|s| d.prior.from_germ(s[d.dim])).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    Gamma,
    InverseGamma,
}

/// Moment-matched `(α, β)` in the shape-scale convention of the priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub family: FitFamily,
    pub alpha: f64,
    pub beta: f64,
}

pub fn fit_from_moments(m: f64, var: f64, family: FitFamily) -> Result<FamilyFit> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::invalid(format!(
            "cannot fit a positive family to mean {m}"
        )));
    }
    // Relative floor so that round-off on constant samples still counts as zero.
    if !(var > 1e-24 * m * m && var.is_finite()) {
        return Err(Error::invalid(format!(
            "cannot fit a family to variance {var}"
        )));
    }
    let (alpha, beta) = match family {
        FitFamily::Gamma => (m * m / var, var / m),
        FitFamily::InverseGamma => {
            let a = m * m / var + 2.0;
            (a, m * (a - 1.0))
        }
    };
    Ok(FamilyFit {
        family,
        alpha,
        beta,
    })
}

pub fn fit_hyper_family(samples: &[f64], family: FitFamily) -> Result<FamilyFit> {
    if samples.len() < 100 {
        return Err(Error::invalid(format!(
            "{} samples are too few to fit a family",
            samples.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::invalid(format!("non-positive sample {s}")));
    }
    fit_from_moments(mean(samples), variance(samples), family)
}

/// Inverse-Gamma `(α, β)` matched to the moments of the precision `1/θ`,
/// which is Gamma with shape α and rate β. Unlike the direct moment fit this
/// can return `α < 1`.
pub fn fit_inverse_gamma_by_precision(samples: &[f64]) -> Result<FamilyFit> {
    if samples.len() < 100 {
        return Err(Error::invalid(format!(
            "{} samples are too few to fit a family",
            samples.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::invalid(format!("non-positive sample {s}")));
    }
    let precision: Vec<f64> = samples.iter().map(|s| 1.0 / s).collect();
    precision_fit(mean(&precision), variance(&precision))
}

fn precision_fit(m: f64, var: f64) -> Result<FamilyFit> {
    let g = fit_from_moments(m, var, FitFamily::Gamma)?;
    Ok(FamilyFit {
        family: FitFamily::InverseGamma,
        alpha: g.alpha,
        beta: 1.0 / g.beta,
    })
}

/// `E[g(θ)]` under the prior law as actually used (truncated).
pub fn prior_expectation(prior: &HyperPrior, g: impl Fn(f64) -> f64) -> Result<f64> {
    let rule = gauss_rule(RuleKind::Hermite, GERM_MAP_NODES)?;
    Ok(rule.integrate(|x| g(prior.from_germ(x))))
}

/// Fit of the prior law as actually used (truncated), comparable with fits of
/// posterior samples.
pub fn fit_prior(prior: &HyperPrior, family: FitFamily) -> Result<FamilyFit> {
    let (m, v) = prior.moments();
    fit_from_moments(m, v, family)
}

/// Prior counterpart of [`fit_inverse_gamma_by_precision`].
pub fn fit_prior_by_precision(prior: &HyperPrior) -> Result<FamilyFit> {
    let m = prior_expectation(prior, |t| 1.0 / t)?;
    let m2 = prior_expectation(prior, |t| 1.0 / (t * t))?;
    precision_fit(m, m2 - m * m)
}

/// Fits for the discrepancy variance (inverse-Gamma, by precision moments) and
/// correlation (Gamma).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyFits {
    pub variance: FamilyFit,
    pub corr: FamilyFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    AcceptImproved,
    #[serde(rename = "Reject-VerifyModel")]
    RejectVerifyModel,
    #[serde(rename = "Reject-ReviewData")]
    RejectReviewData,
    #[serde(rename = "Reject-Both")]
    RejectBoth,
    UseWithCaution,
    AcceptHighConfidence,
}

impl Verdict {
    pub const ALL: [Verdict; 6] = [
        Verdict::AcceptImproved,
        Verdict::RejectVerifyModel,
        Verdict::RejectReviewData,
        Verdict::RejectBoth,
        Verdict::UseWithCaution,
        Verdict::AcceptHighConfidence,
    ];

    pub fn is_reject(&self) -> bool {
        matches!(
            self,
            Verdict::RejectVerifyModel | Verdict::RejectReviewData | Verdict::RejectBoth
        )
    }
}

/// Numerical readings of "much greater than one" and "much less than".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictThresholds {
    /// `α ≫ 1` means `α ≥ much_greater`.
    pub much_greater: f64,
    /// `β ≪ α` means `β < much_less · α`.
    pub much_less: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            much_greater: 5.0,
            much_less: 0.1,
        }
    }
}

/// Credibility of the simulator for one response from the discrepancy fits.
///
/// Checked in order: `α_σ < 1` rejects, sub-classified by the correlation fit;
/// `α_σ ≫ 1, β_σ < α_σ` accepts with high confidence; `α_σ > 1, β_σ > α_σ`
/// calls for caution; otherwise a posterior `α_σ` above the prior one accepts
/// with improved confidence and anything else calls for caution.
pub fn credibility_verdict(
    prior: &DiscrepancyFits,
    posterior: &DiscrepancyFits,
    t: &VerdictThresholds,
) -> Verdict {
    let (a, b) = (posterior.variance.alpha, posterior.variance.beta);
    let (al, bl) = (posterior.corr.alpha, posterior.corr.beta);
    if a < 1.0 {
        if al < 1.0 || bl > al {
            Verdict::RejectVerifyModel
        } else if al > 1.0 && bl < t.much_less * al {
            Verdict::RejectReviewData
        } else {
            Verdict::RejectBoth
        }
    } else if a >= t.much_greater && b < a {
        Verdict::AcceptHighConfidence
    } else if a > 1.0 && b > a {
        Verdict::UseWithCaution
    } else if a > prior.variance.alpha {
        Verdict::AcceptImproved
    } else {
        Verdict::UseWithCaution
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCredibility {
    pub response: Response,
    pub prior: DiscrepancyFits,
    pub posterior: DiscrepancyFits,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibilityReport {
    pub thresholds: VerdictThresholds,
    pub responses: Vec<ResponseCredibility>,
}

impl ResponseCredibility {
    /// Fit prior and posterior discrepancy hyper-parameters of one response and
    /// classify them.
    pub fn assess(
        response: Response,
        variance: &HyperSamples,
        corr: &HyperSamples,
        thresholds: &VerdictThresholds,
    ) -> Result<Self> {
        let prior = DiscrepancyFits {
            variance: fit_prior_by_precision(&variance.prior)?,
            corr: fit_prior(&corr.prior, FitFamily::Gamma)?,
        };
        let posterior = DiscrepancyFits {
            variance: fit_inverse_gamma_by_precision(&variance.samples)?,
            corr: fit_hyper_family(&corr.samples, FitFamily::Gamma)?,
        };
        Ok(Self {
            response,
            prior,
            posterior,
            verdict: credibility_verdict(&prior, &posterior, thresholds),
        })
    }
}
