//! Posterior inference over the germ: a Gaussian likelihood with the
//! discrepancy marginalised out, chaos surrogates for the simulator responses
//! and for the determinant and inverse of each response covariance, random-walk
//! Metropolis-Hastings, and the credibility diagnostics read off the fitted
//! discrepancy hyper-parameter posteriors.

mod mcmc;
mod observations;
mod posterior;
mod surrogate;

use serde::{Deserialize, Serialize};

pub use mcmc::{metropolis_hastings, Chain, McmcSettings};
pub use observations::{ObservationSet, ResponseData};
pub use posterior::{
    credibility_verdict, fit_from_moments, fit_hyper_family, fit_inverse_gamma_by_precision,
    fit_prior, fit_prior_by_precision, posterior_field, posterior_hyper, prior_expectation,
    CredibilityReport, DiscrepancyFits, FamilyFit, FitFamily, HyperDefinition, HyperSamples,
    PosteriorField, ResponseCredibility, Verdict, VerdictThresholds,
};
pub use surrogate::{
    build_covariance_surrogate, CovarianceModel, CovarianceSurrogate, CovarianceTerms,
    DiscrepancyModel, LikelihoodSurrogate, LogLikelihood, ResponseTerm, SurrogateSettings,
    SurrogateValidation,
};

use crate::Result;

/// Proposal bookkeeping of a surrogate-driven chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplingStats {
    pub evaluations: usize,
    /// Evaluations where at least one covariance expansion was unusable and
    /// the covariance was factorised directly instead.
    pub direct_evaluations: usize,
}

impl SamplingStats {
    pub fn direct_rate(&self) -> f64 {
        self.direct_evaluations as f64 / self.evaluations.max(1) as f64
    }
}

/// Sample the germ posterior from the origin.
pub fn sample_posterior(
    surrogate: &LikelihoodSurrogate,
    settings: &McmcSettings,
) -> Result<(Chain, SamplingStats)> {
    let mut stats = SamplingStats::default();
    let chain = metropolis_hastings(
        |xi| {
            let l = surrogate.log_posterior(xi)?;
            stats.evaluations += 1;
            stats.direct_evaluations += usize::from(l.direct > 0);
            Ok(l.value)
        },
        &vec![0.0; surrogate.germ_dim],
        settings,
    )?;
    Ok((chain, stats))
}
