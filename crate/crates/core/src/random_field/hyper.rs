use serde::{Deserialize, Serialize};

use crate::chaos::{gauss_rule, hermite_values, ChaosBasis, RuleKind};
use crate::stats::{std_normal_cdf, Family};
use crate::{Error, Result};

/// Tail probability cut from each side of an unbounded prior.
pub const TRUNCATION_TAIL: f64 = 0.001;

/// Prior of one covariance hyper-parameter with its bounded support Θ.
///
/// Gamma and inverse-Gamma priors are truncated to the central 99.8% of their
/// mass; Normal priors keep that interval only as the Legendre domain and map
/// from the germ linearly; Fixed priors collapse Θ to a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub family: Family,
    pub lo: f64,
    pub hi: f64,
    mass_lo: f64,
    mass_hi: f64,
}

impl HyperPrior {
    pub fn new(family: Family) -> Result<Self> {
        family.validate()?;
        if let Family::Fixed { value } = family {
            return Ok(Self {
                family,
                lo: value,
                hi: value,
                mass_lo: 0.0,
                mass_hi: 1.0,
            });
        }
        let lo = family.quantile(TRUNCATION_TAIL)?;
        let hi = family.quantile(1.0 - TRUNCATION_TAIL)?;
        if matches!(family, Family::Gamma { .. } | Family::InverseGamma { .. }) && lo <= 0.0 {
            return Err(Error::Quantile(format!(
                "lower support bound {lo} is not positive"
            )));
        }
        Ok(Self {
            family,
            lo,
            hi,
            mass_lo: family.cdf(lo),
            mass_hi: family.cdf(hi),
        })
    }

    pub fn fixed(value: f64) -> Result<Self> {
        Self::new(Family::Fixed { value })
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.family, Family::Fixed { .. })
    }

    /// Whether the germ map is an exact polynomial of degree ≤ 1.
    pub fn has_linear_map(&self) -> bool {
        matches!(self.family, Family::Normal { .. } | Family::Fixed { .. })
    }

    /// Iso-probabilistic map from a standard normal germ component.
    pub fn from_germ(&self, xi: f64) -> f64 {
        match self.family {
            Family::Fixed { value } => value,
            Family::Normal { mean, std } => mean + std * xi,
            _ => {
                let u = self.mass_lo + std_normal_cdf(xi) * (self.mass_hi - self.mass_lo);
                self.family
                    .quantile(u)
                    .unwrap_or(if xi < 0.0 { self.lo } else { self.hi })
                    .clamp(self.lo, self.hi)
            }
        }
    }

    /// CDF of the prior law actually used (truncated where applicable).
    pub fn cdf(&self, theta: f64) -> f64 {
        match self.family {
            Family::Fixed { .. } | Family::Normal { .. } => self.family.cdf(theta),
            _ => {
                if theta <= self.lo {
                    0.0
                } else if theta >= self.hi {
                    1.0
                } else {
                    (self.family.cdf(theta) - self.mass_lo) / (self.mass_hi - self.mass_lo)
                }
            }
        }
    }

    /// Mean and variance of the prior law actually used.
    pub fn moments(&self) -> (f64, f64) {
        match self.family {
            Family::Fixed { value } => (value, 0.0),
            Family::Normal { mean, std } => (mean, std * std),
            _ => {
                let rule = gauss_rule(
                    RuleKind::Legendre {
                        a: self.lo,
                        b: self.hi,
                    },
                    200,
                )
                .expect("valid interval");
                let mass = self.mass_hi - self.mass_lo;
                let m = rule.integrate(|t| t * self.family.pdf(t)) / mass;
                let v = rule.integrate(|t| (t - m) * (t - m) * self.family.pdf(t)) / mass;
                (m, v)
            }
        }
    }
}

/// One-dimensional Hermite coefficients (degrees `0..=order`) of `g(ξ)` by
/// pseudo-spectral projection with `n_nodes` Gauss-Hermite nodes.
pub fn project_1d(g: impl Fn(f64) -> f64, order: usize, n_nodes: usize) -> Result<Vec<f64>> {
    let rule = gauss_rule(RuleKind::Hermite, n_nodes)?;
    let mut out = vec![0.0; order + 1];
    for (x, w) in rule.iter() {
        let gx = g(x);
        for (k, h) in hermite_values(x, order).iter().enumerate() {
            out[k] += w * gx * h;
        }
    }
    let mut fact = 1.0;
    for (k, o) in out.iter_mut().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        *o /= fact;
    }
    Ok(out)
}

/// Number of Gauss-Hermite nodes used to project germ maps.
pub const GERM_MAP_NODES: usize = 64;

/// 1-D Hermite coefficients of the germ map `θ(ξ)`.
pub fn germ_map_coefficients(prior: &HyperPrior, order: usize) -> Result<Vec<f64>> {
    match prior.family {
        Family::Fixed { value } => {
            let mut c = vec![0.0; order + 1];
            c[0] = value;
            Ok(c)
        }
        Family::Normal { mean, std } => {
            let mut c = vec![0.0; order + 1];
            c[0] = mean;
            if order >= 1 {
                c[1] = std;
            }
            Ok(c)
        }
        _ => {
            // Surface quantile failures rather than the clamped fallback.
            let rule = gauss_rule(RuleKind::Hermite, GERM_MAP_NODES)?;
            for &x in &rule.nodes {
                let u = prior.mass_lo + std_normal_cdf(x) * (prior.mass_hi - prior.mass_lo);
                prior.family.quantile(u)?;
            }
            project_1d(|x| prior.from_germ(x), order, GERM_MAP_NODES)
        }
    }
}

/// gPC coefficients of a hyper-parameter hosted by germ dimension `dim` of
/// `basis`; only pure terms in that dimension are nonzero.
pub fn hyper_to_pc(prior: &HyperPrior, basis: &ChaosBasis, dim: usize) -> Result<Vec<f64>> {
    if dim >= basis.germ_dim() {
        return Err(Error::invalid(format!(
            "germ dimension {dim} outside basis of dimension {}",
            basis.germ_dim()
        )));
    }
    let one_d = germ_map_coefficients(prior, basis.order())?;
    Ok(pure_terms(basis, dim, &one_d))
}

/// Place 1-D coefficients on the pure terms of `dim`.
pub(crate) fn pure_terms(basis: &ChaosBasis, dim: usize, one_d: &[f64]) -> Vec<f64> {
    basis
        .terms()
        .iter()
        .map(|t| {
            let d = t.degrees();
            let others = d.iter().enumerate().all(|(j, &v)| j == dim || v == 0);
            if others {
                one_d[d[dim]]
            } else {
                0.0
            }
        })
        .collect()
}
