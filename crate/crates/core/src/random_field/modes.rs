use serde::{Deserialize, Serialize};

use super::hyper::HyperPrior;
use super::kernel::{CovarianceKernel, KernelForm, SpatialDiscretization};
use crate::chaos::{gauss_rule, LegendreBasis, Normalization, RuleKind};
use crate::{Error, Result};

/// Minimum overlap accepted when matching modes between adjacent Θ nodes.
pub const MIN_OVERLAP: f64 = 0.9;

/// One hyper-parameter axis of Θ with its Legendre basis φ_i.
/// A degenerate prior has a single constant polynomial and no basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperAxis {
    pub prior: HyperPrior,
    pub basis: Option<LegendreBasis>,
}

impl HyperAxis {
    pub fn new(prior: HyperPrior, size: usize) -> Result<Self> {
        let basis = if prior.is_degenerate() {
            None
        } else {
            Some(LegendreBasis::new(
                prior.lo,
                prior.hi,
                size,
                Normalization::Probability,
            )?)
        };
        Ok(Self { prior, basis })
    }

    pub fn size(&self) -> usize {
        self.basis.as_ref().map_or(1, |b| b.size)
    }

    pub fn values(&self, theta: f64) -> Vec<f64> {
        match &self.basis {
            Some(b) => b.values(theta),
            None => vec![1.0],
        }
    }

    /// Gauss-Legendre nodes on Θ with weights summing to one.
    fn nodes(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.basis {
            None => Ok((vec![self.prior.lo], vec![1.0])),
            Some(b) => {
                let rule = gauss_rule(RuleKind::Legendre { a: b.a, b: b.b }, n)?;
                let len = b.b - b.a;
                Ok((rule.nodes, rule.weights.iter().map(|w| w / len).collect()))
            }
        }
    }
}

/// KL eigenpairs expanded over the hyper-parameter box Θ = Θ_σ² × Θ_λ.
///
/// Hyper multi-indices are flattened row-major with the variance axis first.
/// `l[n][i]`, `s[n][i]` and `c[n][i][k]` are the expansion coefficients of
/// λ_n, √λ_n and the spatial coefficient d^n_k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KLModes {
    pub form: KernelForm,
    pub n_modes: usize,
    pub spatial: SpatialDiscretization,
    pub axes: [HyperAxis; 2],
    pub l: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub c: Vec<Vec<Vec<f64>>>,
    /// Θ nodes at which the GEP was solved, in traversal order.
    pub nodes: Vec<[f64; 2]>,
}

/// Settings of the KL expansion over Θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlSettings {
    pub n_modes: usize,
    pub spatial_size: usize,
    pub spatial_quad: usize,
    /// Legendre basis size L per hyper axis.
    pub hyper_size: [usize; 2],
    /// Gauss-Legendre nodes N_q per hyper axis, at least L.
    pub hyper_quad: [usize; 2],
}

impl Default for KlSettings {
    fn default() -> Self {
        Self {
            n_modes: 4,
            spatial_size: 12,
            spatial_quad: 32,
            hyper_size: [16, 32],
            hyper_quad: [16, 32],
        }
    }
}

/// Boustrophedon order over a tensor grid so consecutive nodes are adjacent.
fn snake_order(sizes: [usize; 2]) -> Vec<[usize; 2]> {
    let mut out = Vec::with_capacity(sizes[0] * sizes[1]);
    for a in 0..sizes[0] {
        for j in 0..sizes[1] {
            let b = if a % 2 == 0 { j } else { sizes[1] - 1 - j };
            out.push([a, b]);
        }
    }
    out
}

/// Solve the GEP at every Θ node, align modes and project onto φ_i.
pub fn expand_over_hyper(
    form: KernelForm,
    priors: [HyperPrior; 2],
    domain: (f64, f64),
    settings: &KlSettings,
) -> Result<KLModes> {
    let n_modes = settings.n_modes;
    if n_modes == 0 {
        return Err(Error::invalid("KL expansion needs at least one mode"));
    }
    if settings.spatial_size < n_modes {
        return Err(Error::invalid(format!(
            "spatial basis size {} is smaller than the number of modes {n_modes}",
            settings.spatial_size
        )));
    }
    for d in 0..2 {
        if settings.hyper_quad[d] < settings.hyper_size[d] {
            return Err(Error::invalid(format!(
                "hyper axis {d}: {} quadrature nodes cannot resolve {} polynomials",
                settings.hyper_quad[d], settings.hyper_size[d]
            )));
        }
    }
    let spatial = SpatialDiscretization::new(domain, settings.spatial_size, settings.spatial_quad)?;
    let axes = [
        HyperAxis::new(priors[0], settings.hyper_size[0])?,
        HyperAxis::new(priors[1], settings.hyper_size[1])?,
    ];
    let grids = [
        axes[0].nodes(settings.hyper_quad[0])?,
        axes[1].nodes(settings.hyper_quad[1])?,
    ];
    let sizes = [grids[0].0.len(), grids[1].0.len()];
    let order = snake_order(sizes);

    let k = spatial.size();
    let hyper_len = axes[0].size() * axes[1].size();
    let mut l = vec![vec![0.0; hyper_len]; n_modes];
    let mut c = vec![vec![vec![0.0; k]; hyper_len]; n_modes];
    let mut node_values: Vec<Vec<f64>> = Vec::with_capacity(order.len());
    let mut node_phi: Vec<(f64, Vec<f64>)> = Vec::with_capacity(order.len());
    let mut nodes = Vec::with_capacity(order.len());
    let mut previous: Option<Vec<Vec<f64>>> = None;

    for (q, &[a, b]) in order.iter().enumerate() {
        let theta = [grids[0].0[a], grids[1].0[b]];
        let weight = grids[0].1[a] * grids[1].1[b];
        let kernel = CovarianceKernel {
            form,
            variance: theta[0],
            corr: theta[1],
        };
        let pairs = spatial.solve_gep(&kernel)?;
        let (values, vectors) = match &previous {
            None => {
                let vectors: Vec<Vec<f64>> = pairs.vectors[..n_modes]
                    .iter()
                    .map(|d| {
                        // Reference sign: largest-magnitude coefficient positive.
                        let big =
                            d.iter()
                                .copied()
                                .fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m });
                        d.iter().map(|v| v * big.signum()).collect()
                    })
                    .collect();
                (pairs.values[..n_modes].to_vec(), vectors)
            }
            Some(prev) => align(&spatial, prev, &pairs.values, &pairs.vectors, q)?,
        };
        let phi = tensor_values(&axes, theta);
        for n in 0..n_modes {
            for (i, &p) in phi.iter().enumerate() {
                l[n][i] += weight * values[n] * p;
                for kk in 0..k {
                    c[n][i][kk] += weight * vectors[n][kk] * p;
                }
            }
        }
        node_phi.push((weight, phi));
        node_values.push(values);
        nodes.push(theta);
        previous = Some(vectors);
    }

    // √λ_n projected from the reconstructed eigenvalue at each node.
    let mut s = vec![vec![0.0; hyper_len]; n_modes];
    for (weight, phi) in &node_phi {
        for n in 0..n_modes {
            let lam: f64 = l[n].iter().zip(phi).map(|(a, b)| a * b).sum();
            let root = lam.max(0.0).sqrt();
            for (i, &p) in phi.iter().enumerate() {
                s[n][i] += weight * root * p;
            }
        }
    }

    Ok(KLModes {
        form,
        n_modes,
        spatial,
        axes,
        l,
        s,
        c,
        nodes,
    })
}

fn tensor_values(axes: &[HyperAxis; 2], theta: [f64; 2]) -> Vec<f64> {
    let a = axes[0].values(theta[0]);
    let b = axes[1].values(theta[1]);
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in &a {
        for y in &b {
            out.push(x * y);
        }
    }
    out
}

/// Greedy maximal-overlap matching of the previous node's modes against all
/// candidate eigenpairs at the current node.
fn align(
    spatial: &SpatialDiscretization,
    prev: &[Vec<f64>],
    values: &[f64],
    vectors: &[Vec<f64>],
    node: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut used = vec![false; vectors.len()];
    let mut out_values = Vec::with_capacity(prev.len());
    let mut out_vectors = Vec::with_capacity(prev.len());
    for (mode, p) in prev.iter().enumerate() {
        let mut best = (0usize, 0.0f64);
        for (j, v) in vectors.iter().enumerate() {
            if used[j] {
                continue;
            }
            let o = spatial.inner(p, v);
            if o.abs() > best.1.abs() {
                best = (j, o);
            }
        }
        if best.1.abs() < MIN_OVERLAP {
            return Err(Error::ModeAlignment {
                node,
                mode,
                overlap: best.1.abs(),
            });
        }
        used[best.0] = true;
        let sign = best.1.signum();
        out_values.push(values[best.0]);
        out_vectors.push(vectors[best.0].iter().map(|v| v * sign).collect());
    }
    Ok((out_values, out_vectors))
}

impl KLModes {
    pub fn hyper_values(&self, theta: [f64; 2]) -> Vec<f64> {
        tensor_values(&self.axes, theta)
    }

    pub fn eigenvalue(&self, n: usize, theta: [f64; 2]) -> f64 {
        dot(&self.l[n], &self.hyper_values(theta))
    }

    pub fn sqrt_eigenvalue(&self, n: usize, theta: [f64; 2]) -> f64 {
        dot(&self.s[n], &self.hyper_values(theta))
    }

    /// Spatial coefficients d^n(θ) reconstructed from the expansion.
    pub fn eigenvector(&self, n: usize, theta: [f64; 2]) -> Vec<f64> {
        let phi = self.hyper_values(theta);
        let mut d = vec![0.0; self.spatial.size()];
        for (ci, p) in self.c[n].iter().zip(&phi) {
            for (dk, ck) in d.iter_mut().zip(ci) {
                *dk += p * ck;
            }
        }
        d
    }

    pub fn eigenfunction(&self, n: usize, theta: [f64; 2], x: f64) -> f64 {
        self.spatial.eval(&self.eigenvector(n, theta), x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Family;
    use rand::Rng;

    fn baseline_priors() -> [HyperPrior; 2] {
        [
            HyperPrior::new(Family::InverseGamma {
                shape: 9.0,
                scale: 0.5,
            })
            .unwrap(),
            HyperPrior::new(Family::Gamma {
                shape: 5.0,
                scale: 0.2,
            })
            .unwrap(),
        ]
    }

    fn baseline() -> KLModes {
        expand_over_hyper(
            KernelForm::SquaredExponential,
            baseline_priors(),
            (0.0, 1.0),
            &KlSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn reconstruction_matches_node_solves() {
        let m = baseline();
        for &theta in &m.nodes {
            let kernel = CovarianceKernel::new(theta[0], theta[1]).unwrap();
            let direct = m.spatial.solve_gep(&kernel).unwrap();
            let mut recon: Vec<f64> = Vec::new();
            for n in 0..m.n_modes {
                let lam = m.eigenvalue(n, theta);
                recon.push(lam);
                assert!(lam >= 0.0);
                let rel = (lam - direct.values[n]).abs() / direct.values[n];
                assert!(rel <= 1e-6, "mode {n} at {theta:?}: rel {rel:e}");
                let d = m.eigenvector(n, theta);
                let norm = m.spatial.inner(&d, &d);
                assert!((norm - 1.0).abs() < 1e-8, "norm {norm}");
                let overlap = m.spatial.inner(&d, &direct.vectors[n]).abs();
                assert!((overlap - 1.0).abs() < 1e-6);
            }
            assert!(recon.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn sqrt_expansion_squares_to_eigenvalue() {
        let m = baseline();
        let mut rng = crate::stats::rng_for(3, "theta");
        let [a, b] = &m.axes;
        for _ in 0..200 {
            let theta = [
                rng.random_range(a.prior.lo..a.prior.hi),
                rng.random_range(b.prior.lo..b.prior.hi),
            ];
            for n in 0..m.n_modes {
                let s = m.sqrt_eigenvalue(n, theta);
                let lam = m.eigenvalue(n, theta);
                let direct = m
                    .spatial
                    .solve_gep(&CovarianceKernel::new(theta[0], theta[1]).unwrap())
                    .unwrap()
                    .values[n];
                assert!(
                    (s * s - lam).abs() <= 1e-4 * direct,
                    "mode {n} at {theta:?}: s²={} l={lam} direct={direct}",
                    s * s
                );
            }
        }
    }

    #[test]
    fn signs_agree_with_reference_node() {
        let m = baseline();
        let reference: Vec<Vec<f64>> = (0..m.n_modes)
            .map(|n| m.eigenvector(n, m.nodes[0]))
            .collect();
        for &theta in &m.nodes {
            for n in 0..m.n_modes {
                let d = m.eigenvector(n, theta);
                assert!(m.spatial.inner(&d, &reference[n]) > 0.0);
            }
        }
    }

    #[test]
    fn degenerate_priors_keep_constant_coefficients_only() {
        let priors = [
            HyperPrior::fixed(0.3).unwrap(),
            HyperPrior::fixed(1.2).unwrap(),
        ];
        let m = expand_over_hyper(
            KernelForm::SquaredExponential,
            priors,
            (0.0, 1.0),
            &KlSettings::default(),
        )
        .unwrap();
        let direct = m
            .spatial
            .solve_gep(&CovarianceKernel::new(0.3, 1.2).unwrap())
            .unwrap();
        for n in 0..m.n_modes {
            assert_eq!(m.l[n].len(), 1);
            assert_eq!(m.l[n][0], direct.values[n]);
            assert!((m.s[n][0] - direct.values[n].sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn trace_capture_at_prior_means() {
        let [a, b] = baseline_priors();
        let kernel = CovarianceKernel::new(a.moments().0, b.moments().0).unwrap();
        let disc = SpatialDiscretization::new((0.0, 1.0), 12, 32).unwrap();
        let pairs = disc.solve_gep(&kernel).unwrap();
        let captured: f64 = pairs.values[..4].iter().sum();
        assert!(captured >= 0.95 * kernel.variance * 1.0);
    }

    #[test]
    fn rejects_underresolved_settings() {
        let mut s = KlSettings::default();
        s.hyper_quad = [2, 16];
        assert!(expand_over_hyper(
            KernelForm::SquaredExponential,
            baseline_priors(),
            (0.0, 1.0),
            &s
        )
        .is_err());
        let mut s = KlSettings::default();
        s.spatial_size = 3;
        assert!(expand_over_hyper(
            KernelForm::SquaredExponential,
            baseline_priors(),
            (0.0, 1.0),
            &s
        )
        .is_err());
    }
}
