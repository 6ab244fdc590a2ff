use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::chaos::{gauss_rule, LegendreBasis, Normalization, RuleKind};
use crate::{Error, Result};

/// Covariance form. Only the squared exponential ships; the enum leaves room
/// for other stationary forms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelForm {
    #[default]
    SquaredExponential,
}

/// `C(x1, x2) = σ² exp(-λ (x1 - x2)²)`. `corr` is λ, an inverse squared length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceKernel {
    #[serde(default)]
    pub form: KernelForm,
    pub variance: f64,
    pub corr: f64,
}

impl CovarianceKernel {
    pub fn new(variance: f64, corr: f64) -> Result<Self> {
        let k = Self {
            form: KernelForm::SquaredExponential,
            variance,
            corr,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel variance must be positive, got {}",
                self.variance
            )));
        }
        if !(self.corr > 0.0 && self.corr.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel correlation parameter must be positive, got {}",
                self.corr
            )));
        }
        Ok(())
    }

    /// Unchecked evaluation; parameters are validated at construction.
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        match self.form {
            KernelForm::SquaredExponential => {
                let d = x1 - x2;
                self.variance * (-self.corr * d * d).exp()
            }
        }
    }
}

pub fn kernel_eval(kernel: &CovarianceKernel, x1: f64, x2: f64) -> Result<f64> {
    kernel.validate()?;
    Ok(kernel.eval(x1, x2))
}

/// Legendre-Galerkin discretisation of the Fredholm eigenproblem on a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDiscretization {
    pub basis: LegendreBasis,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// ψ_k at the quadrature nodes, row per node.
    psi: Vec<Vec<f64>>,
    mass: Vec<f64>,
}

/// Eigenpairs in descending order with B-orthonormal coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    /// `vectors[n][k]` is d^n_k.
    pub vectors: Vec<Vec<f64>>,
}

/// Fewest Gauss-Legendre nodes per axis accepted for the kernel integrals.
pub const MIN_KERNEL_QUAD: usize = 20;

impl SpatialDiscretization {
    /// `n_quad` Gauss-Legendre nodes per axis approximate the kernel integrals.
    pub fn new(domain: (f64, f64), size: usize, n_quad: usize) -> Result<Self> {
        if n_quad < MIN_KERNEL_QUAD {
            return Err(Error::invalid(format!(
                "kernel quadrature needs at least {MIN_KERNEL_QUAD} nodes per axis, got {n_quad}"
            )));
        }
        let basis = LegendreBasis::new(domain.0, domain.1, size, Normalization::Lebesgue)?;
        let rule = gauss_rule(
            RuleKind::Legendre {
                a: domain.0,
                b: domain.1,
            },
            n_quad,
        )?;
        let psi: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| basis.values(x)).collect();
        let mut mass = vec![0.0; size * size];
        for (row, &w) in psi.iter().zip(&rule.weights) {
            for k in 0..size {
                for l in 0..size {
                    mass[k * size + l] += w * row[k] * row[l];
                }
            }
        }
        Ok(Self {
            basis,
            nodes: rule.nodes,
            weights: rule.weights,
            psi,
            mass,
        })
    }

    pub fn size(&self) -> usize {
        self.basis.size
    }

    pub fn domain_length(&self) -> f64 {
        self.basis.b - self.basis.a
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.size(), self.size(), &self.mass)
    }

    pub fn stiffness_matrix(&self, kernel: &CovarianceKernel) -> DMatrix<f64> {
        let n = self.size();
        let q = self.nodes.len();
        // G[a][k] = Σ_b w_a w_b C(x_a, x_b) ψ_k(x_b)
        let mut g = vec![0.0; q * n];
        for a in 0..q {
            for b in 0..q {
                let c =
                    self.weights[a] * self.weights[b] * kernel.eval(self.nodes[a], self.nodes[b]);
                for k in 0..n {
                    g[a * n + k] += c * self.psi[b][k];
                }
            }
        }
        let mut a_mat = DMatrix::zeros(n, n);
        for a in 0..q {
            for k in 0..n {
                let pk = self.psi[a][k];
                for l in 0..n {
                    a_mat[(k, l)] += pk * g[a * n + l];
                }
            }
        }
        (&a_mat + a_mat.transpose()) * 0.5
    }

    /// Solve `A d = λ B d` for all eigenpairs, descending.
    pub fn solve_gep(&self, kernel: &CovarianceKernel) -> Result<Eigenpairs> {
        kernel.validate()?;
        let a = self.stiffness_matrix(kernel);
        let b = self.mass_matrix();
        let chol = b
            .cholesky()
            .ok_or_else(|| Error::LinearAlgebra("mass matrix is not positive definite".into()))?;
        let l = chol.l();
        let x = l
            .solve_lower_triangular(&a)
            .ok_or_else(|| Error::LinearAlgebra("triangular solve failed".into()))?;
        let c = l
            .solve_lower_triangular(&x.transpose())
            .ok_or_else(|| Error::LinearAlgebra("triangular solve failed".into()))?;
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let mut order: Vec<usize> = (0..self.size()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let top = eig.eigenvalues[order[0]];
        let tol = -1e-10 * top.abs().max(1.0);
        let mut values = Vec::with_capacity(order.len());
        let mut vectors = Vec::with_capacity(order.len());
        for (mode, &j) in order.iter().enumerate() {
            let mut v = eig.eigenvalues[j];
            if v < 0.0 {
                if v < tol {
                    return Err(Error::NegativeEigenvalue { mode, value: v });
                }
                v = 0.0;
            }
            let y = eig.eigenvectors.column(j).into_owned();
            let d = l
                .tr_solve_lower_triangular(&y)
                .ok_or_else(|| Error::LinearAlgebra("triangular solve failed".into()))?;
            values.push(v);
            vectors.push(d.iter().copied().collect());
        }
        Ok(Eigenpairs { values, vectors })
    }

    /// `∫ e_n e_m dx` for coefficient vectors.
    pub fn inner(&self, d1: &[f64], d2: &[f64]) -> f64 {
        let n = self.size();
        let mut s = 0.0;
        for k in 0..n {
            for l in 0..n {
                s += d1[k] * self.mass[k * n + l] * d2[l];
            }
        }
        s
    }

    /// `Σ_k d_k ψ_k(x)`.
    pub fn eval(&self, d: &[f64], x: f64) -> f64 {
        self.basis.values(x).iter().zip(d).map(|(p, c)| p * c).sum()
    }

    pub fn eval_derivative(&self, d: &[f64], x: f64) -> f64 {
        self.basis
            .derivatives(x)
            .iter()
            .zip(d)
            .map(|(p, c)| p * c)
            .sum()
    }
}
