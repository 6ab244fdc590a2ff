//! Distribution families for hyper-parameter priors, sample statistics and
//! seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::{Error, Result};

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Parametric family of a scalar hyper-parameter prior.
///
/// Gamma and inverse-Gamma use the shape-scale convention: Gamma(α, β) has
/// mean αβ, inverse-Gamma(α, β) has density ∝ x^{-α-1} e^{-β/x} and mean
/// β/(α-1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Gamma { shape: f64, scale: f64 },
    InverseGamma { shape: f64, scale: f64 },
    Normal { mean: f64, std: f64 },
    Fixed { value: f64 },
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Family::Gamma { shape, scale } | Family::InverseGamma { shape, scale } => {
                shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()
            }
            Family::Normal { mean, std } => mean.is_finite() && std > 0.0 && std.is_finite(),
            Family::Fixed { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid prior parameters: {self:?}"
            )))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Family::Gamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, x / scale)
                }
            }
            Family::InverseGamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_ur(shape, scale / x)
                }
            }
            Family::Normal { mean, std } => std_normal_cdf((x - mean) / std),
            Family::Fixed { value } => {
                if x < value {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Family::Gamma { shape, scale } => {
                if x <= 0.0 {
                    return 0.0;
                }
                ((shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()).exp()
            }
            Family::InverseGamma { shape, scale } => {
                if x <= 0.0 {
                    return 0.0;
                }
                (shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x).exp()
            }
            Family::Normal { mean, std } => {
                let z = (x - mean) / std;
                (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
            }
            Family::Fixed { .. } => 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Family::Gamma { shape, scale } => shape * scale,
            Family::InverseGamma { shape, scale } => {
                if shape > 1.0 {
                    scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            Family::Normal { mean, .. } => mean,
            Family::Fixed { value } => value,
        }
    }

    /// Inverse CDF by safeguarded Newton iteration in log space.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::Quantile(format!("probability {p} outside [0, 1]")));
        }
        match *self {
            Family::Normal { mean, std } => Ok(mean + std * std_normal_quantile(p)),
            Family::Fixed { value } => Ok(value),
            Family::Gamma { .. } | Family::InverseGamma { .. } => {
                if p == 0.0 {
                    return Ok(0.0);
                }
                if p == 1.0 {
                    return Ok(f64::INFINITY);
                }
                self.positive_quantile(p)
            }
        }
    }

    fn positive_quantile(&self, p: f64) -> Result<f64> {
        // Bracket in log space around the mean/scale.
        let center = match *self {
            Family::Gamma { shape, scale } => shape * scale,
            Family::InverseGamma { shape, scale } => scale / (shape + 1.0),
            _ => unreachable!(),
        };
        let (mut lo, mut hi) = (center.ln() - 1.0, center.ln() + 1.0);
        let mut guard = 0;
        while self.cdf(lo.exp()) > p {
            lo -= 2.0;
            guard += 1;
            if guard > 400 {
                return Err(Error::Quantile(format!(
                    "cannot bracket p={p} for {self:?}"
                )));
            }
        }
        while self.cdf(hi.exp()) < p {
            hi += 2.0;
            guard += 1;
            if guard > 400 {
                return Err(Error::Quantile(format!(
                    "cannot bracket p={p} for {self:?}"
                )));
            }
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let x = t.exp();
            let f = self.cdf(x) - p;
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            // d cdf / d t = pdf(x) * x
            let slope = self.pdf(x) * x;
            let mut next = if slope > 0.0 { t - f / slope } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() < 1e-15 * t.abs().max(1.0) || hi - lo < 1e-15 {
                return Ok(next.exp());
            }
            t = next;
        }
        Ok(t.exp())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolation quantile of already sorted data.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    }
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance `alpha` for `n` samples.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}

/// Independent deterministic random stream derived from a master seed and a label.
pub fn rng_for(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        let fams = [
            Family::Gamma {
                shape: 5.0,
                scale: 0.2,
            },
            Family::InverseGamma {
                shape: 9.0,
                scale: 0.5,
            },
            Family::InverseGamma {
                shape: 1.5,
                scale: 2.0,
            },
            Family::Gamma {
                shape: 6.0,
                scale: 2.0,
            },
        ];
        for f in fams {
            for &p in &[1e-6, 0.001, 0.1, 0.5, 0.9, 0.999, 1.0 - 1e-9] {
                let x = f.quantile(p).unwrap();
                assert!((f.cdf(x) - p).abs() < 1e-12, "{f:?} p={p}");
            }
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        let f = Family::InverseGamma {
            shape: 9.0,
            scale: 0.5,
        };
        let n = 200_000;
        let (a, b) = (1e-4, 2.0);
        let h = (b - a) / n as f64;
        let total: f64 = (0..n).map(|i| f.pdf(a + (i as f64 + 0.5) * h) * h).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let f = Family::Gamma {
            shape: 5.0,
            scale: 0.2,
        };
        let n = 1000;
        let xs: Vec<f64> = (0..n)
            .map(|i| f.quantile((i as f64 + 0.5) / n as f64).unwrap())
            .collect();
        assert!(ks_statistic(&xs, |x| f.cdf(x)) <= 0.5 / n as f64 + 1e-12);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        use rand::Rng;
        let a: u64 = rng_for(7, "mcmc").random();
        let b: u64 = rng_for(7, "mcmc").random();
        let c: u64 = rng_for(7, "testbed").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
