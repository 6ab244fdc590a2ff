use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::observations::{ObservationSet, ResponseData};
use crate::chaos::{gauss_rule, tensor_rule, ChaosBasis, RuleKind};
use crate::nozzle::{Response, ResponseCoefficients};
use crate::random_field::{HyperPrior, Polynomial};
use crate::stats::{rng_for, sorted_quantile};
use crate::{Error, Result};

/// Zero-mean (by default) squared-exponential discrepancy of one response,
/// `Σ_δ(x₁, x₂) = σ² exp(-λ (x₁ - x₂)²)`, with its hyper-parameters hosted by
/// germ dimensions `dims = [σ² dim, λ dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyModel {
    pub response: Response,
    pub variance: HyperPrior,
    pub corr: HyperPrior,
    pub dims: [usize; 2],
    pub mean: Polynomial,
}

impl DiscrepancyModel {
    pub fn new(
        response: Response,
        variance: HyperPrior,
        corr: HyperPrior,
        dims: [usize; 2],
    ) -> Self {
        Self {
            response,
            variance,
            corr,
            dims,
            mean: Polynomial::new(Vec::new()),
        }
    }

    pub fn hyper_at(&self, xi: [f64; 2]) -> [f64; 2] {
        [self.variance.from_germ(xi[0]), self.corr.from_germ(xi[1])]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSettings {
    /// Starting degree of the determinant and inverse expansions.
    pub order: usize,
    /// Highest degree tried before falling back to direct factorisation.
    pub max_order: usize,
    /// Gauss-Hermite nodes per hyper-parameter germ, raised to at least `order + 2`.
    pub n_quad: usize,
    /// Largest accepted median relative Frobenius error of the inverse.
    pub inverse_tol: f64,
    /// Germ points of the validation set.
    pub validation_points: usize,
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        Self {
            order: 2,
            max_order: 10,
            n_quad: 12,
            inverse_tol: 1e-4,
            validation_points: 100,
        }
    }
}

impl SurrogateSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_order < self.order {
            return Err(Error::Config(format!(
                "max_order {} is below order {}",
                self.max_order, self.order
            )));
        }
        if self.n_quad < self.order + 2 {
            return Err(Error::Config(format!(
                "{} quadrature nodes per dimension cannot project degree {}",
                self.n_quad, self.order
            )));
        }
        if !(self.inverse_tol > 0.0) || self.validation_points == 0 {
            return Err(Error::Config(
                "surrogate validation needs a positive tolerance and points".into(),
            ));
        }
        Ok(())
    }
}

/// Squared radius of the central 99% of a 2-D standard normal.
const CHI2_2_99: f64 = 9.210340371976184;

/// Seeded germ points inside the 99%-mass disc.
fn validation_set(n: usize) -> Vec<[f64; 2]> {
    let mut rng = rng_for(0, "covariance-validation");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let xi: [f64; 2] = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
        if xi[0] * xi[0] + xi[1] * xi[1] <= CHI2_2_99 {
            out.push(xi);
        }
    }
    out
}

/// Outcome of checking a projected covariance against direct factorisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateValidation {
    pub order: usize,
    pub median_inverse_error: f64,
    /// Reconstructed determinant positive on the whole validation set.
    pub det_positive: bool,
    /// Reconstructed inverse symmetric positive definite at ξ = 0.
    pub spd_at_origin: bool,
    /// Whether the expansions are used; otherwise every evaluation factorises.
    pub projected: bool,
}

/// `Σ = Σ_δ(θ) + diag(σ_e²)` at the observation locations.
fn covariance_matrix(x: &[f64], noise_var: &[f64], theta: [f64; 2]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |a, b| {
        let d = x[a] - x[b];
        let k = theta[0] * (-theta[1] * d * d).exp();
        if a == b {
            k + noise_var[a]
        } else {
            k
        }
    })
}

/// Determinant and inverse expansions of one response covariance over the
/// two germ dimensions of its discrepancy hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSurrogate {
    pub model: DiscrepancyModel,
    pub basis: ChaosBasis,
    pub x: Vec<f64>,
    pub noise_var: Vec<f64>,
    /// `D̂_p`.
    pub det: Vec<f64>,
    /// `Î_p` as row-major `n × n` blocks, `inv[p n² + a n + b]`.
    pub inv: Vec<f64>,
    pub validation: SurrogateValidation,
}

/// Log-determinant and quadratic form of a covariance at one germ point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceTerms {
    pub log_det: f64,
    pub quad: f64,
    /// True when the surrogate was unusable and Σ was factorised directly.
    pub direct: bool,
}

/// Project `|Σ|` and `Σ⁻¹` of `data`'s covariance onto Hermite polynomials in
/// the model's two hyper-parameter germs, raising the degree from
/// `settings.order` until the expansions pass validation. When no degree up to
/// `settings.max_order` passes, the result evaluates `Σ` directly.
pub fn build_covariance_surrogate(
    model: &DiscrepancyModel,
    data: &ResponseData,
    settings: SurrogateSettings,
) -> Result<CovarianceSurrogate> {
    data.validate()?;
    settings.validate()?;
    let test_set = validation_set(settings.validation_points);
    let mut last = None;
    for order in settings.order..=settings.max_order {
        let mut s = project_covariance(model, data, order, settings.n_quad.max(order + 2))?;
        s.validation = s.check(&test_set)?;
        let v = s.validation;
        if v.det_positive && v.spd_at_origin && v.median_inverse_error <= settings.inverse_tol {
            s.validation.projected = true;
            return Ok(s);
        }
        last = Some(s);
    }
    Ok(last.expect("at least one order is tried"))
}

fn project_covariance(
    model: &DiscrepancyModel,
    data: &ResponseData,
    order: usize,
    n_quad: usize,
) -> Result<CovarianceSurrogate> {
    let basis = ChaosBasis::new(2, order)?;
    let rule = gauss_rule(RuleKind::Hermite, n_quad)?;
    let (points, weights) = tensor_rule(&[&rule, &rule]);
    let n = data.len();
    let noise_var: Vec<f64> = data.sigma.iter().map(|s| s * s).collect();
    let per_node: Vec<(f64, DMatrix<f64>)> = points
        .par_iter()
        .enumerate()
        .map(|(node, xi)| {
            let sigma = covariance_matrix(&data.x, &noise_var, model.hyper_at([xi[0], xi[1]]));
            let chol = Cholesky::new(sigma).ok_or(Error::NotPositiveDefinite { node })?;
            let det = chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|l| l * l)
                .product::<f64>();
            Ok((det, chol.inverse()))
        })
        .collect::<Result<_>>()?;
    let p = basis.len();
    let mut det = vec![0.0; p];
    let mut inv = vec![0.0; p * n * n];
    for ((xi, w), (d, m)) in points.iter().zip(&weights).zip(&per_node) {
        let h = basis.evaluate_all(xi)?;
        for (k, hk) in h.iter().enumerate() {
            let c = w * hk / basis.norms()[k];
            det[k] += c * d;
            let block = &mut inv[k * n * n..(k + 1) * n * n];
            for a in 0..n {
                for b in 0..n {
                    block[a * n + b] += c * m[(a, b)];
                }
            }
        }
    }
    Ok(CovarianceSurrogate {
        model: model.clone(),
        basis,
        x: data.x.clone(),
        noise_var,
        det,
        inv,
        validation: SurrogateValidation {
            order,
            median_inverse_error: f64::NAN,
            det_positive: false,
            spd_at_origin: false,
            projected: false,
        },
    })
}

impl CovarianceSurrogate {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Reconstructed `|Σ|` and `Σ⁻¹` at the local germ point.
    pub fn reconstruct(&self, xi: [f64; 2]) -> Result<(f64, DMatrix<f64>)> {
        let n = self.len();
        let h = self.basis.evaluate_all(&xi)?;
        let det = h.iter().zip(&self.det).map(|(a, b)| a * b).sum();
        let mut m = DMatrix::zeros(n, n);
        for (k, hk) in h.iter().enumerate() {
            let block = &self.inv[k * n * n..(k + 1) * n * n];
            for a in 0..n {
                for b in 0..n {
                    m[(a, b)] += hk * block[a * n + b];
                }
            }
        }
        Ok((det, m))
    }

    fn check(&self, test_set: &[[f64; 2]]) -> Result<SurrogateValidation> {
        let mut errs = Vec::with_capacity(test_set.len());
        let mut det_positive = true;
        for &xi in test_set {
            let (det, approx) = self.reconstruct(xi)?;
            det_positive &= det > 0.0;
            let exact = Cholesky::new(self.exact_covariance(xi))
                .ok_or(Error::NotPositiveDefinite { node: 0 })?
                .inverse();
            errs.push((approx - &exact).norm() / exact.norm());
        }
        errs.sort_by(f64::total_cmp);
        let (_, at0) = self.reconstruct([0.0, 0.0])?;
        let symmetric = (&at0 - at0.transpose()).norm() <= 1e-10 * at0.norm();
        Ok(SurrogateValidation {
            order: self.basis.order(),
            median_inverse_error: sorted_quantile(&errs, 0.5),
            det_positive,
            spd_at_origin: symmetric && Cholesky::new(at0).is_some(),
            projected: false,
        })
    }

    /// Exact `Σ` at the local germ point.
    pub fn exact_covariance(&self, xi: [f64; 2]) -> DMatrix<f64> {
        covariance_matrix(&self.x, &self.noise_var, self.model.hyper_at(xi))
    }

    /// `log|Σ|` and `rᵀΣ⁻¹r` from the expansions, falling back to a direct
    /// factorisation when the reconstructed determinant or form is not positive
    /// or when the expansions failed validation.
    pub fn terms(&self, xi: [f64; 2], r: &[f64]) -> Result<CovarianceTerms> {
        if !self.validation.projected {
            return self.direct_terms(xi, r);
        }
        let n = self.len();
        let h = self.basis.evaluate_all(&xi)?;
        let det: f64 = h.iter().zip(&self.det).map(|(a, b)| a * b).sum();
        if det > 0.0 {
            let mut quad = 0.0;
            for (k, hk) in h.iter().enumerate() {
                let block = &self.inv[k * n * n..(k + 1) * n * n];
                let mut s = 0.0;
                for a in 0..n {
                    let row = &block[a * n..(a + 1) * n];
                    s += r[a] * row.iter().zip(r).map(|(m, rb)| m * rb).sum::<f64>();
                }
                quad += hk * s;
            }
            if quad >= 0.0 {
                return Ok(CovarianceTerms {
                    log_det: det.ln(),
                    quad,
                    direct: false,
                });
            }
        }
        self.direct_terms(xi, r)
    }

    pub fn direct_terms(&self, xi: [f64; 2], r: &[f64]) -> Result<CovarianceTerms> {
        let chol = Cholesky::new(self.exact_covariance(xi))
            .ok_or(Error::NotPositiveDefinite { node: 0 })?;
        let log_det = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|l| l.ln())
                .sum::<f64>();
        let rv = DVector::from_column_slice(r);
        let quad = rv.dot(&chol.solve(&rv));
        Ok(CovarianceTerms {
            log_det,
            quad,
            direct: true,
        })
    }
}

/// Covariance of one response in the marginalised likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceModel {
    /// Measurement noise only: `Σ = diag(σ_e²)`.
    NoiseOnly {
        log_det: f64,
        inv_var: Vec<f64>,
    },
    Discrepancy(Box<CovarianceSurrogate>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTerm {
    pub response: Response,
    pub values: Vec<f64>,
    /// Simulator chaos coefficients `T̂_p(x_i)`, `[i][p]`.
    pub coeffs: Vec<Vec<f64>>,
    /// Discrepancy mean at the observation locations.
    pub offset: Vec<f64>,
    pub cov: CovarianceModel,
}

/// Log-likelihood at one germ point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    /// Responses whose covariance had to be factorised directly.
    pub direct: usize,
}

/// Marginalised Gaussian likelihood of the observations as a function of the
/// germ, with simulator responses and covariances in chaos form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSurrogate {
    /// Basis of the simulator expansions; hosts germ dimensions `0..basis.germ_dim()`.
    pub basis: ChaosBasis,
    pub germ_dim: usize,
    pub terms: Vec<ResponseTerm>,
}

impl LikelihoodSurrogate {
    /// `simulator` must hold every observed location; `discrepancy` lists the
    /// responses that carry a discrepancy term, the rest use noise only.
    pub fn new(
        observations: &ObservationSet,
        simulator: &ResponseCoefficients,
        discrepancy: &[DiscrepancyModel],
        settings: SurrogateSettings,
    ) -> Result<Self> {
        observations.validate()?;
        let basis = simulator.basis.clone();
        let mut germ_dim = basis.germ_dim();
        let mut used: Vec<usize> = Vec::new();
        for d in discrepancy {
            if observations.get(d.response).is_none() {
                return Err(Error::invalid(format!(
                    "discrepancy for unobserved {}",
                    d.response.name()
                )));
            }
            for &dim in &d.dims {
                if dim < basis.germ_dim() || used.contains(&dim) {
                    return Err(Error::invalid(format!(
                        "discrepancy germ dimension {dim} is already in use"
                    )));
                }
                used.push(dim);
                germ_dim = germ_dim.max(dim + 1);
            }
        }
        let mut terms = Vec::with_capacity(observations.responses.len());
        for data in &observations.responses {
            let all = simulator.get(data.response);
            let mut coeffs = Vec::with_capacity(data.len());
            for &x in &data.x {
                let at = simulator
                    .x
                    .iter()
                    .position(|s| (s - x).abs() < 1e-12)
                    .ok_or_else(|| {
                        Error::invalid(format!("no simulator coefficients at x = {x}"))
                    })?;
                if all[at].len() != basis.len() {
                    return Err(Error::DimensionMismatch {
                        expected: basis.len(),
                        got: all[at].len(),
                    });
                }
                coeffs.push(all[at].clone());
            }
            let model = discrepancy.iter().find(|d| d.response == data.response);
            let offset = match model {
                Some(m) => data.x.iter().map(|&x| m.mean.value(x)).collect(),
                None => vec![0.0; data.len()],
            };
            let cov = match model {
                Some(m) => CovarianceModel::Discrepancy(Box::new(build_covariance_surrogate(
                    m, data, settings,
                )?)),
                None => CovarianceModel::NoiseOnly {
                    log_det: data.sigma.iter().map(|s| 2.0 * s.ln()).sum(),
                    inv_var: data.sigma.iter().map(|s| 1.0 / (s * s)).collect(),
                },
            };
            terms.push(ResponseTerm {
                response: data.response,
                values: data.values.clone(),
                coeffs,
                offset,
                cov,
            });
        }
        Ok(Self {
            basis,
            germ_dim,
            terms,
        })
    }

    pub fn term(&self, response: Response) -> Option<&ResponseTerm> {
        self.terms.iter().find(|t| t.response == response)
    }

    /// Predicted response means `μ_j(ξ)` in term order.
    pub fn means(&self, xi: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(xi)?;
        let h = self.basis.evaluate_all(&xi[..self.basis.germ_dim()])?;
        Ok(self
            .terms
            .iter()
            .map(|t| {
                t.coeffs
                    .iter()
                    .zip(&t.offset)
                    .map(|(c, o)| c.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + o)
                    .collect()
            })
            .collect())
    }

    fn check(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.germ_dim {
            return Err(Error::DimensionMismatch {
                expected: self.germ_dim,
                got: xi.len(),
            });
        }
        Ok(())
    }

    fn evaluate(&self, xi: &[f64], direct: bool) -> Result<LogLikelihood> {
        let means = self.means(xi)?;
        let mut value = 0.0;
        let mut fallbacks = 0;
        for (t, mu) in self.terms.iter().zip(&means) {
            let r: Vec<f64> = t.values.iter().zip(mu).map(|(y, m)| y - m).collect();
            let (log_det, quad) = match &t.cov {
                CovarianceModel::NoiseOnly { log_det, inv_var } => (
                    *log_det,
                    r.iter().zip(inv_var).map(|(r, w)| r * r * w).sum(),
                ),
                CovarianceModel::Discrepancy(s) => {
                    let local = [xi[s.model.dims[0]], xi[s.model.dims[1]]];
                    let c = if direct {
                        s.direct_terms(local, &r)?
                    } else {
                        s.terms(local, &r)?
                    };
                    if c.direct && !direct && s.validation.projected {
                        fallbacks += 1;
                    }
                    (c.log_det, c.quad)
                }
            };
            value -= 0.5 * (r.len() as f64 * (2.0 * PI).ln() + log_det + quad);
        }
        Ok(LogLikelihood {
            value,
            direct: fallbacks,
        })
    }

    /// Gaussian log-density of the observations given `ξ`, using the
    /// covariance expansions.
    pub fn log_likelihood(&self, xi: &[f64]) -> Result<LogLikelihood> {
        self.evaluate(xi, false)
    }

    /// As [`log_likelihood`](Self::log_likelihood) with every covariance
    /// factorised exactly.
    pub fn log_likelihood_direct(&self, xi: &[f64]) -> Result<f64> {
        Ok(self.evaluate(xi, true)?.value)
    }

    /// Log-likelihood plus the standard normal germ prior, up to a constant.
    pub fn log_posterior(&self, xi: &[f64]) -> Result<LogLikelihood> {
        let mut l = self.log_likelihood(xi)?;
        l.value -= 0.5 * xi.iter().map(|x| x * x).sum::<f64>();
        Ok(l)
    }

    pub fn log_posterior_direct(&self, xi: &[f64]) -> Result<f64> {
        Ok(self.log_likelihood_direct(xi)? - 0.5 * xi.iter().map(|x| x * x).sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::hermite_values;
    use crate::stats::Family;

    fn data(n: usize, sigma: f64) -> ResponseData {
        let x: Vec<f64> = (0..n).map(|i| 0.15 + 0.2 * i as f64).collect();
        ResponseData {
            response: Response::Pressure,
            requested_x: x.clone(),
            x,
            nodes: (0..n).collect(),
            values: vec![1.0; n],
            sigma: vec![sigma; n],
        }
    }

    #[test]
    fn disabled_discrepancy_gives_constant_expansions() {
        let d = data(3, 0.02);
        let model = DiscrepancyModel::new(
            Response::Pressure,
            HyperPrior::fixed(0.0).unwrap(),
            HyperPrior::new(Family::Gamma {
                shape: 6.0,
                scale: 2.0,
            })
            .unwrap(),
            [6, 7],
        );
        let s = build_covariance_surrogate(&model, &d, SurrogateSettings::default()).unwrap();
        assert!(s.validation.projected);
        assert_eq!(s.validation.order, 2);
        let det0 = 0.02f64.powi(6);
        assert!((s.det[0] - det0).abs() < 1e-12 * det0);
        assert!(s.det[1..].iter().all(|c| c.abs() < 1e-12 * det0));
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a == b { 1.0 / 0.0004 } else { 0.0 };
                assert!((s.inv[a * 3 + b] - expect).abs() < 1e-9);
            }
        }
        assert!(s.inv[9..].iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn single_observation_inverse_matches_scalar_projection() {
        let d = data(1, 0.1);
        let var = HyperPrior::new(Family::InverseGamma {
            shape: 6.0,
            scale: 2.0,
        })
        .unwrap();
        let corr = HyperPrior::new(Family::Gamma {
            shape: 6.0,
            scale: 2.0,
        })
        .unwrap();
        let model = DiscrepancyModel::new(Response::Pressure, var, corr, [0, 1]);
        let settings = SurrogateSettings {
            max_order: 2,
            ..Default::default()
        };
        let s = build_covariance_surrogate(&model, &d, settings).unwrap();
        // Only the σ² germ matters for a single point.
        let rule = gauss_rule(RuleKind::Hermite, 12).unwrap();
        for deg in 0..=2 {
            let oracle: f64 = rule
                .iter()
                .map(|(x, w)| w * hermite_values(x, 2)[deg] / (var.from_germ(x) + 0.01))
                .sum::<f64>()
                / (1..=deg).product::<usize>() as f64;
            let k = s
                .basis
                .terms()
                .iter()
                .position(|t| t.degrees() == [deg, 0])
                .unwrap();
            assert!(
                (s.inv[k] - oracle).abs() < 1e-12 * oracle.abs().max(1.0),
                "degree {deg}"
            );
        }
        for (k, t) in s.basis.terms().iter().enumerate() {
            if t.degrees()[1] > 0 {
                assert!(s.inv[k].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_only_likelihood_is_gaussian_density() {
        let basis = ChaosBasis::new(1, 1).unwrap();
        let sim = ResponseCoefficients {
            x: vec![0.5],
            basis: basis.clone(),
            density: vec![vec![1.0, 0.1]],
            velocity: vec![vec![0.0, 0.0]],
            pressure: vec![vec![0.0, 0.0]],
            temperature: vec![vec![0.0, 0.0]],
        };
        let obs = ObservationSet {
            responses: vec![ResponseData {
                response: Response::Density,
                requested_x: vec![0.5],
                x: vec![0.5],
                nodes: vec![50],
                values: vec![1.05],
                sigma: vec![0.02],
            }],
        };
        let l = LikelihoodSurrogate::new(&obs, &sim, &[], SurrogateSettings::default()).unwrap();
        let xi = 0.3;
        let r: f64 = 1.05 - (1.0 + 0.1 * xi);
        let expect = -0.5 * (2.0 * PI * 0.0004).ln() - 0.5 * r * r / 0.0004;
        assert!((l.log_likelihood(&[xi]).unwrap().value - expect).abs() < 1e-12);
        assert!(l.log_likelihood(&[0.0, 1.0]).is_err());
    }
}
