//! Gauss quadrature rules built with Golub-Welsch plus one Newton polish per
//! node; weights come from the Christoffel function of the orthonormal family,
//! which stays accurate for large node counts.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RuleKind {
    /// Probabilists' Gauss-Hermite: weight is the standard normal density.
    Hermite,
    /// Gauss-Legendre on `[a, b]` with unit weight.
    Legendre { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Off-diagonal Jacobi coefficient `b_k` (k >= 1) of the orthonormal family.
/// Both families are symmetric so the diagonal is zero.
fn jacobi_offdiag(kind: RuleKind, k: usize) -> f64 {
    let k = k as f64;
    match kind {
        RuleKind::Hermite => k.sqrt(),
        RuleKind::Legendre { .. } => k / (4.0 * k * k - 1.0).sqrt(),
    }
}

/// Orthonormal polynomial values p_0..p_{n-1} plus p_n and p_n' at `x`.
fn orthonormal_eval(kind: RuleKind, n: usize, x: f64) -> (f64, f64, f64) {
    let mut p_prev = 0.0;
    let mut p = 1.0;
    let mut d_prev = 0.0;
    let mut d = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += p * p;
        let b_k = if k == 0 { 0.0 } else { jacobi_offdiag(kind, k) };
        let b_next = jacobi_offdiag(kind, k + 1);
        let p_next = (x * p - b_k * p_prev) / b_next;
        let d_next = (p + x * d - b_k * d_prev) / b_next;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (sum_sq, p, d)
}

/// Build an `n_nodes` Gauss rule. Hermite weights sum to one; Legendre weights
/// sum to `b - a`.
pub fn gauss_rule(kind: RuleKind, n_nodes: usize) -> Result<QuadratureRule> {
    if n_nodes == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    if let RuleKind::Legendre { a, b } = kind {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::invalid(format!(
                "Gauss-Legendre interval [{a}, {b}] is not finite"
            )));
        }
        if a >= b {
            return Err(Error::invalid(format!(
                "Gauss-Legendre interval needs a < b, got [{a}, {b}]"
            )));
        }
    }

    let n = n_nodes;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = jacobi_offdiag(kind, k);
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let mut roots: Vec<f64> = SymmetricEigen::new(jacobi)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (i, &x0) in roots.iter().enumerate() {
        let (_, p, d) = orthonormal_eval(kind, n, x0);
        let mut x = if d != 0.0 { x0 - p / d } else { x0 };
        // Symmetric families: enforce exact antisymmetry of the node set.
        if n % 2 == 1 && i == n / 2 {
            x = 0.0;
        }
        let (sum_sq, _, _) = orthonormal_eval(kind, n, x);
        nodes.push(x);
        weights.push(1.0 / sum_sq);
    }
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }

    if let RuleKind::Legendre { a, b } = kind {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
            *x = mid + half * *x;
            *w *= b - a;
        }
    }

    Ok(QuadratureRule {
        kind,
        nodes,
        weights,
    })
}

/// Tensor product of one-dimensional rules; returns (points, weights).
pub fn tensor_rule(rules: &[&QuadratureRule]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut points = vec![Vec::with_capacity(rules.len())];
    let mut weights = vec![1.0];
    for rule in rules {
        let mut next_points = Vec::with_capacity(points.len() * rule.len());
        let mut next_weights = Vec::with_capacity(points.len() * rule.len());
        for (p, w) in points.iter().zip(&weights) {
            for (x, wx) in rule.iter() {
                let mut q = p.clone();
                q.push(x);
                next_points.push(q);
                next_weights.push(w * wx);
            }
        }
        points = next_points;
        weights = next_weights;
    }
    (points, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: bisection on the three-term Legendre recurrence.
    fn legendre_p(n: usize, x: f64) -> f64 {
        let (mut p0, mut p1) = (1.0, x);
        if n == 0 {
            return 1.0;
        }
        for k in 1..n {
            let k = k as f64;
            let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
            p0 = p1;
            p1 = p2;
        }
        p1
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn legendre_one_node_is_midpoint() {
        let r = gauss_rule(RuleKind::Legendre { a: -1.0, b: 1.0 }, 1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert!((r.weights[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn legendre_two_nodes_match_root_finder() {
        let r = gauss_rule(RuleKind::Legendre { a: -1.0, b: 1.0 }, 2).unwrap();
        let root = bisect(|x| legendre_p(2, x), 0.1, 1.0);
        assert!((root - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        assert!((r.nodes[1] - root).abs() < 1e-14);
        assert!((r.nodes[0] + root).abs() < 1e-14);
        for w in &r.weights {
            assert!((w - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_two_nodes_are_roots_of_he2() {
        let r = gauss_rule(RuleKind::Hermite, 2).unwrap();
        let root = bisect(|x| x * x - 1.0, 0.0, 3.0);
        assert!((r.nodes[1] - root).abs() < 1e-14);
        assert!((r.nodes[0] + root).abs() < 1e-14);
        assert!((r.weights[0] - 0.5).abs() < 1e-15);
        assert!((r.weights[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exactness_up_to_degree_2n_minus_1() {
        // Standard normal moments: E[x^k] = (k-1)!! for even k.
        let double_fact = |k: usize| (1..k).step_by(2).map(|v| v as f64).product::<f64>();
        for n in 1..=20 {
            let h = gauss_rule(RuleKind::Hermite, n).unwrap();
            for k in 0..2 * n {
                let exact = if k % 2 == 1 { 0.0 } else { double_fact(k) };
                // odd moments cancel terms of size ~ (k+1)!!
                let scale = double_fact(k + k % 2);
                let approx = h.integrate(|x| x.powi(k as i32));
                assert!(
                    (approx - exact).abs() <= 1e-12 * scale,
                    "hermite n={n} k={k}: {approx} vs {exact}"
                );
            }
            let l = gauss_rule(RuleKind::Legendre { a: 0.0, b: 2.0 }, n).unwrap();
            for k in 0..2 * n {
                let exact = 2f64.powi(k as i32 + 1) / (k as f64 + 1.0);
                let approx = l.integrate(|x| x.powi(k as i32));
                assert!(
                    (approx - exact).abs() <= 1e-12 * exact,
                    "legendre n={n} k={k}"
                );
            }
        }
    }

    #[test]
    fn weights_sum_and_nodes_increase() {
        for n in [1, 3, 8, 32, 64] {
            let h = gauss_rule(RuleKind::Hermite, n).unwrap();
            assert!((h.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            assert!(h.nodes.windows(2).all(|w| w[0] < w[1]));
            let l = gauss_rule(RuleKind::Legendre { a: 0.5, b: 3.0 }, n).unwrap();
            assert!((l.weights.iter().sum::<f64>() - 2.5).abs() < 1e-13);
            assert!(l.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn rejects_bad_intervals() {
        assert!(gauss_rule(
            RuleKind::Legendre {
                a: 0.0,
                b: f64::INFINITY
            },
            3
        )
        .is_err());
        assert!(gauss_rule(RuleKind::Legendre { a: 1.0, b: 1.0 }, 3).is_err());
        assert!(gauss_rule(RuleKind::Hermite, 0).is_err());
    }
}
