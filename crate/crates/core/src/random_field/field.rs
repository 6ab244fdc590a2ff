use serde::{Deserialize, Serialize};

use super::hyper::{project_1d, GERM_MAP_NODES};
use super::modes::KLModes;
use crate::chaos::{ChaosBasis, MomentTensor};
use crate::{Error, Result};

/// Polynomial profile `Σ a_k x^k`, used for mean and true area shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
    }
}

/// Spatial field in gPC form: `u(x; ξ) = Σ_p coeffs[g][p] H_p(ξ)` on a grid,
/// with the matching coefficients of `∂u/∂x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpcField {
    pub x: Vec<f64>,
    pub basis: ChaosBasis,
    pub coeffs: Vec<Vec<f64>>,
    pub slope: Vec<Vec<f64>>,
}

/// Germ dimensions: KL germs occupy `0..n_modes`, followed by the variance and
/// correlation hyper-parameter germs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GermLayout {
    pub n_modes: usize,
}

impl GermLayout {
    pub fn kl_dim(&self, n: usize) -> usize {
        n
    }

    pub fn hyper_dims(&self) -> [usize; 2] {
        [self.n_modes, self.n_modes + 1]
    }

    pub fn germ_dim(&self) -> usize {
        self.n_modes + 2
    }
}

/// gPC coefficients of every tensor Legendre polynomial φ_i(θ(ξ)) over Θ,
/// built from 1-D pseudo-spectral projections on each hyper germ.
pub fn phi_hat(modes: &KLModes, basis: &ChaosBasis, layout: GermLayout) -> Result<Vec<Vec<f64>>> {
    let order = basis.order();
    let mut one_d: Vec<Vec<Vec<f64>>> = Vec::with_capacity(2);
    for axis in &modes.axes {
        let mut per_poly = Vec::with_capacity(axis.size());
        for i in 0..axis.size() {
            let coeffs = match &axis.basis {
                None => {
                    let mut c = vec![0.0; order + 1];
                    c[0] = 1.0;
                    c
                }
                Some(b) => project_1d(
                    |xi| b.values(axis.prior.from_germ(xi))[i],
                    order,
                    GERM_MAP_NODES,
                )?,
            };
            per_poly.push(coeffs);
        }
        one_d.push(per_poly);
    }
    let [h0, h1] = layout.hyper_dims();
    let mut out = Vec::with_capacity(one_d[0].len() * one_d[1].len());
    for a in &one_d[0] {
        for b in &one_d[1] {
            let v = basis
                .terms()
                .iter()
                .map(|t| {
                    let d = t.degrees();
                    let pure = d
                        .iter()
                        .enumerate()
                        .all(|(j, &v)| v == 0 || j == h0 || j == h1);
                    if pure {
                        a[d[h0]] * b[d[h1]]
                    } else {
                        0.0
                    }
                })
                .collect();
            out.push(v);
        }
    }
    Ok(out)
}

/// Assemble the field's gPC coefficients on `grid` by contracting √λ_n, the
/// eigenfunction expansions and χ_n = ξ_n with the arity-4 moment tensor.
pub fn field_gpc(
    modes: &KLModes,
    basis: &ChaosBasis,
    layout: GermLayout,
    mean: &Polynomial,
    grid: &[f64],
    quartic: &MomentTensor,
) -> Result<GpcField> {
    if layout.n_modes != modes.n_modes || basis.germ_dim() != layout.germ_dim() {
        return Err(Error::invalid(format!(
            "germ layout needs {} dimensions for {} modes, basis has {}",
            layout.germ_dim(),
            modes.n_modes,
            basis.germ_dim()
        )));
    }
    if basis.order() < 1 {
        return Err(Error::invalid("field expansion needs basis order >= 1"));
    }
    if quartic.arity() != 4 || quartic.basis_size() != basis.len() {
        return Err(Error::invalid(
            "field assembly needs the arity-4 tensor of the basis",
        ));
    }
    let p_len = basis.len();
    let k_len = modes.spatial.size();
    let phi = phi_hat(modes, basis, layout)?;
    let combine = |weights: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; p_len];
        for (w, ph) in weights.iter().zip(&phi) {
            if *w != 0.0 {
                for (o, x) in v.iter_mut().zip(ph) {
                    *o += w * x;
                }
            }
        }
        v
    };

    // mode_k[n][k][p]: coefficient of ψ_k(x) H_p(ξ) in √λ_n e_n χ_n.
    let mut mode_k = vec![vec![vec![0.0; p_len]; k_len]; modes.n_modes];
    for n in 0..modes.n_modes {
        let s_hat = combine(&modes.s[n]);
        let mut unit = vec![0.0; p_len];
        unit[basis.first_order(layout.kl_dim(n))] = 1.0;
        for k in 0..k_len {
            let ck: Vec<f64> = modes.c[n].iter().map(|ci| ci[k]).collect();
            let e_hat = combine(&ck);
            mode_k[n][k] = quartic.contract(&[&s_hat, &e_hat, &unit], basis.norms())?;
        }
    }

    let mut coeffs = Vec::with_capacity(grid.len());
    let mut slope = Vec::with_capacity(grid.len());
    for &x in grid {
        let psi = modes.spatial.basis.values(x);
        let dpsi = modes.spatial.basis.derivatives(x);
        let mut u = vec![0.0; p_len];
        let mut du = vec![0.0; p_len];
        for per_mode in &mode_k {
            for (k, row) in per_mode.iter().enumerate() {
                for p in 0..p_len {
                    u[p] += psi[k] * row[p];
                    du[p] += dpsi[k] * row[p];
                }
            }
        }
        u[0] += mean.value(x);
        du[0] += mean.derivative(x);
        coeffs.push(u);
        slope.push(du);
    }
    Ok(GpcField {
        x: grid.to_vec(),
        basis: basis.clone(),
        coeffs,
        slope,
    })
}

impl GpcField {
    /// Field values on the grid at germ point `xi`.
    pub fn sample(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let h = self.basis.evaluate_all(xi)?;
        Ok(self.coeffs.iter().map(|c| dot(c, &h)).collect())
    }

    pub fn sample_slope(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let h = self.basis.evaluate_all(xi)?;
        Ok(self.slope.iter().map(|c| dot(c, &h)).collect())
    }

    pub fn mean(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c[0]).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| self.basis.variance(c)).collect()
    }

    /// `Cov(u(x_a), u(x_b))` from the expansion.
    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        self.coeffs[a]
            .iter()
            .zip(&self.coeffs[b])
            .zip(self.basis.norms())
            .skip(1)
            .map(|((x, y), n)| x * y * n)
            .sum()
    }
}

pub fn sample_field(field: &GpcField, xi: &[f64]) -> Result<Vec<f64>> {
    field.sample(xi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
