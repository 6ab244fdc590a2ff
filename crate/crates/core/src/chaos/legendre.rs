use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Legendre values P_0..P_max and derivatives P'_0..P'_max at `t ∈ [-1, 1]`.
pub fn legendre_values(t: f64, max_degree: usize) -> (Vec<f64>, Vec<f64>) {
    let mut p = Vec::with_capacity(max_degree + 1);
    let mut dp = Vec::with_capacity(max_degree + 1);
    p.push(1.0);
    dp.push(0.0);
    if max_degree >= 1 {
        p.push(t);
        dp.push(1.0);
    }
    for k in 1..max_degree {
        let kf = k as f64;
        p.push(((2.0 * kf + 1.0) * t * p[k] - kf * p[k - 1]) / (kf + 1.0));
        dp.push(dp[k - 1] + (2.0 * kf + 1.0) * p[k]);
    }
    (p, dp)
}

/// How the scaled Legendre polynomials are normalised on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// `∫_a^b φ_i φ_j dx = δ_ij`.
    Lebesgue,
    /// `∫_a^b φ_i φ_j dx / (b - a) = δ_ij`.
    Probability,
}

/// Scaled Legendre polynomials of degree `0..size` on an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendreBasis {
    pub a: f64,
    pub b: f64,
    pub size: usize,
    pub normalization: Normalization,
}

impl LegendreBasis {
    pub fn new(a: f64, b: f64, size: usize, normalization: Normalization) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::invalid(format!(
                "Legendre basis needs a < b, got [{a}, {b}]"
            )));
        }
        if size == 0 {
            return Err(Error::invalid(
                "Legendre basis needs at least one polynomial",
            ));
        }
        Ok(Self {
            a,
            b,
            size,
            normalization,
        })
    }

    pub fn to_reference(&self, x: f64) -> f64 {
        2.0 * (x - self.a) / (self.b - self.a) - 1.0
    }

    fn scale(&self, k: usize) -> f64 {
        let base = (2.0 * k as f64 + 1.0).sqrt();
        match self.normalization {
            Normalization::Lebesgue => base / (self.b - self.a).sqrt(),
            Normalization::Probability => base,
        }
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        let (p, _) = legendre_values(self.to_reference(x), self.size - 1);
        p.iter()
            .enumerate()
            .map(|(k, v)| v * self.scale(k))
            .collect()
    }

    pub fn derivatives(&self, x: f64) -> Vec<f64> {
        let (_, dp) = legendre_values(self.to_reference(x), self.size - 1);
        let jac = 2.0 / (self.b - self.a);
        dp.iter()
            .enumerate()
            .map(|(k, v)| v * self.scale(k) * jac)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{gauss_rule, RuleKind};
    use super::*;

    #[test]
    fn orthonormal_on_interval() {
        for norm in [Normalization::Lebesgue, Normalization::Probability] {
            let basis = LegendreBasis::new(0.2, 1.7, 8, norm).unwrap();
            let rule = gauss_rule(RuleKind::Legendre { a: 0.2, b: 1.7 }, 10).unwrap();
            let measure = match norm {
                Normalization::Lebesgue => 1.0,
                Normalization::Probability => 1.0 / 1.5,
            };
            for i in 0..8 {
                for j in 0..8 {
                    let ip: f64 = rule
                        .iter()
                        .map(|(x, w)| {
                            let v = basis.values(x);
                            w * measure * v[i] * v[j]
                        })
                        .sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - expect).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let basis = LegendreBasis::new(0.0, 1.0, 7, Normalization::Lebesgue).unwrap();
        let h = 1e-6;
        for &x in &[0.1, 0.45, 0.93] {
            let d = basis.derivatives(x);
            let plus = basis.values(x + h);
            let minus = basis.values(x - h);
            for k in 0..7 {
                let fd = (plus[k] - minus[k]) / (2.0 * h);
                assert!((d[k] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
