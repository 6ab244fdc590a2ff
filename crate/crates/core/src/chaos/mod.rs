//! Hermite chaos bases over a Gaussian germ, Legendre helpers, Gauss rules and
//! the multi-way Hermite moment tensors used by the Galerkin solvers.

mod cache;
mod legendre;
mod quadrature;
mod tensor;

use serde::{Deserialize, Serialize};

pub use cache::TensorCache;
pub use legendre::{legendre_values, LegendreBasis, Normalization};
pub use quadrature::{gauss_rule, tensor_rule, QuadratureRule, RuleKind};
pub use tensor::{moment_tensor, GalerkinProduct, MomentTensor};

use crate::{Error, Result};

/// Per-dimension polynomial degrees of one chaos term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn total_degree(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.0
    }
}

/// Probabilists' Hermite values He_0..He_max at `x` by the three-term recurrence.
pub fn hermite_values(x: f64, max_degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_degree + 1);
    out.push(1.0);
    if max_degree >= 1 {
        out.push(x);
    }
    for n in 1..max_degree {
        let next = x * out[n] - n as f64 * out[n - 1];
        out.push(next);
    }
    out
}

/// Total-order Hermite chaos basis over `germ_dim` independent standard normals.
///
/// Terms are graded by total degree; inside a degree they follow descending
/// lexicographic order, so `terms[0]` is the constant and `terms[1..=germ_dim]`
/// are the unit first-order indices in germ order (term `n + 1` equals `ξ_n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosBasis {
    germ_dim: usize,
    order: usize,
    terms: Vec<MultiIndex>,
    norms: Vec<f64>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn push_degree(dim: usize, degree: usize, prefix: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
    if prefix.len() == dim - 1 {
        prefix.push(degree);
        out.push(MultiIndex(prefix.clone()));
        prefix.pop();
        return;
    }
    for first in (0..=degree).rev() {
        prefix.push(first);
        push_degree(dim, degree - first, prefix, out);
        prefix.pop();
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl ChaosBasis {
    pub fn new(germ_dim: usize, order: usize) -> Result<Self> {
        if germ_dim == 0 {
            return Err(Error::invalid("chaos basis needs germ_dim >= 1"));
        }
        let mut terms = Vec::with_capacity(binomial(germ_dim + order, order));
        for degree in 0..=order {
            push_degree(
                germ_dim,
                degree,
                &mut Vec::with_capacity(germ_dim),
                &mut terms,
            );
        }
        let norms = terms
            .iter()
            .map(|t| t.0.iter().map(|&d| factorial(d)).product())
            .collect();
        Ok(Self {
            germ_dim,
            order,
            terms,
            norms,
        })
    }

    pub fn germ_dim(&self) -> usize {
        self.germ_dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of terms `P`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[MultiIndex] {
        &self.terms
    }

    pub fn term(&self, index: usize) -> &MultiIndex {
        &self.terms[index]
    }

    /// `<H_p^2>` for every term.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Index of a multi-index, if present.
    pub fn position(&self, index: &MultiIndex) -> Option<usize> {
        self.terms.iter().position(|t| t == index)
    }

    /// Index of the unit first-order term in germ dimension `dim`.
    pub fn first_order(&self, dim: usize) -> usize {
        debug_assert!(dim < self.germ_dim && self.order >= 1);
        dim + 1
    }

    pub fn evaluate(&self, term_index: usize, xi: &[f64]) -> Result<f64> {
        if term_index >= self.len() {
            return Err(Error::invalid(format!(
                "term index {term_index} out of range for basis of size {}",
                self.len()
            )));
        }
        self.check_germ(xi)?;
        Ok(self.terms[term_index]
            .0
            .iter()
            .zip(xi)
            .map(|(&d, &x)| hermite_values(x, d)[d])
            .product())
    }

    /// All basis polynomials at `xi`.
    pub fn evaluate_all(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_germ(xi)?;
        let tables: Vec<Vec<f64>> = xi.iter().map(|&x| hermite_values(x, self.order)).collect();
        Ok(self
            .terms
            .iter()
            .map(|t| t.0.iter().zip(&tables).map(|(&d, tab)| tab[d]).product())
            .collect())
    }

    /// Evaluate the expansion `Σ c_p H_p(ξ)`.
    pub fn reconstruct(&self, coeffs: &[f64], xi: &[f64]) -> Result<f64> {
        if coeffs.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: coeffs.len(),
            });
        }
        let h = self.evaluate_all(xi)?;
        Ok(h.iter().zip(coeffs).map(|(a, b)| a * b).sum())
    }

    /// Variance of an expansion: `Σ_{p>=1} c_p^2 <H_p^2>`.
    pub fn variance(&self, coeffs: &[f64]) -> f64 {
        coeffs
            .iter()
            .zip(&self.norms)
            .skip(1)
            .map(|(c, n)| c * c * n)
            .sum()
    }

    /// Position of every term of `sub` inside `self`, when `sub` lives on the
    /// leading `sub.germ_dim()` dimensions of this basis.
    pub fn embedding_of(&self, sub: &ChaosBasis) -> Result<Vec<usize>> {
        if sub.germ_dim > self.germ_dim || sub.order > self.order {
            return Err(Error::invalid(
                "sub-basis does not fit inside the target basis",
            ));
        }
        sub.terms
            .iter()
            .map(|t| {
                let mut full = t.0.clone();
                full.resize(self.germ_dim, 0);
                self.position(&MultiIndex(full))
                    .ok_or_else(|| Error::invalid("sub-basis term missing from target basis"))
            })
            .collect()
    }

    fn check_germ(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.germ_dim {
            return Err(Error::DimensionMismatch {
                expected: self.germ_dim,
                got: xi.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn term_counts() {
        assert_eq!(ChaosBasis::new(8, 2).unwrap().len(), 45);
        assert_eq!(ChaosBasis::new(1, 3).unwrap().len(), 4);
        assert_eq!(ChaosBasis::new(4, 2).unwrap().len(), 15);
        assert_eq!(ChaosBasis::new(3, 0).unwrap().len(), 1);
        assert!(ChaosBasis::new(0, 2).is_err());
    }

    #[test]
    fn ordering_and_norms() {
        let b = ChaosBasis::new(3, 2).unwrap();
        assert_eq!(b.term(0).0, vec![0, 0, 0]);
        assert_eq!(b.term(1).0, vec![1, 0, 0]);
        assert_eq!(b.term(2).0, vec![0, 1, 0]);
        assert_eq!(b.term(3).0, vec![0, 0, 1]);
        assert_eq!(b.term(4).0, vec![2, 0, 0]);
        assert_eq!(b.term(5).0, vec![1, 1, 0]);
        assert_eq!(b.norms()[4], 2.0);
        assert_eq!(b.norms()[5], 1.0);
        for t in b.terms() {
            assert!(t.total_degree() <= 2);
        }
    }

    #[test]
    fn evaluate_examples() {
        let b = ChaosBasis::new(3, 2).unwrap();
        let xi = [0.3, -1.2, 2.5];
        assert_eq!(b.evaluate(0, &xi).unwrap(), 1.0);
        for n in 0..3 {
            assert_eq!(b.evaluate(b.first_order(n), &xi).unwrap(), xi[n]);
        }
        let one = ChaosBasis::new(1, 2).unwrap();
        assert_eq!(one.evaluate(2, &[2.0]).unwrap(), 3.0);
        assert!(b.evaluate(0, &[1.0]).is_err());
        assert!(b.evaluate(99, &xi).is_err());
    }

    #[test]
    fn embedding_maps_leading_dims() {
        let full = ChaosBasis::new(4, 2).unwrap();
        let sub = ChaosBasis::new(2, 2).unwrap();
        let map = full.embedding_of(&sub).unwrap();
        for (i, &j) in map.iter().enumerate() {
            let mut t = sub.term(i).0.clone();
            t.resize(4, 0);
            assert_eq!(full.term(j).0, t);
        }
    }

    proptest! {
        #[test]
        fn orthogonality_by_quadrature(dim in 1usize..4, order in 0usize..4, i in 0usize..200, j in 0usize..200) {
            let b = ChaosBasis::new(dim, order).unwrap();
            let (i, j) = (i % b.len(), j % b.len());
            let rule = gauss_rule(RuleKind::Hermite, order + 1).unwrap();
            let rules = vec![&rule; dim];
            let (pts, wts) = tensor_rule(&rules);
            let ip: f64 = pts.iter().zip(&wts)
                .map(|(x, w)| w * b.evaluate(i, x).unwrap() * b.evaluate(j, x).unwrap())
                .sum();
            let expect = if i == j { b.norms()[i] } else { 0.0 };
            prop_assert!((ip - expect).abs() < 1e-12, "<H_{i} H_{j}> = {ip}");
        }
    }
}
