use gpc_calib::calibration::{
    build_covariance_surrogate, metropolis_hastings, posterior_field, posterior_hyper,
    sample_posterior, Chain, CovarianceModel, DiscrepancyModel, HyperDefinition,
    LikelihoodSurrogate, McmcSettings, ObservationSet, ResponseData, SurrogateSettings,
};
use gpc_calib::chaos::ChaosBasis;
use gpc_calib::nozzle::{Response, ResponseCoefficients};
use gpc_calib::random_field::{GpcField, HyperPrior};
use gpc_calib::stats::{ks_critical, rng_for, Family};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

const LOCATIONS: [f64; 5] = [0.15, 0.35, 0.55, 0.75, 0.95];

fn pressure_data(sigma: f64) -> ResponseData {
    ResponseData {
        response: Response::Pressure,
        requested_x: LOCATIONS.to_vec(),
        x: LOCATIONS.to_vec(),
        nodes: vec![15, 35, 55, 75, 95],
        values: vec![0.9, 0.8, 0.7, 0.6, 0.5],
        sigma: vec![sigma; 5],
    }
}

fn baseline_discrepancy(dims: [usize; 2]) -> DiscrepancyModel {
    DiscrepancyModel::new(
        Response::Pressure,
        HyperPrior::new(Family::InverseGamma {
            shape: 9.0,
            scale: 0.5,
        })
        .unwrap(),
        HyperPrior::new(Family::Gamma {
            shape: 6.0,
            scale: 2.0,
        })
        .unwrap(),
        dims,
    )
}

/// Simulator coefficients linear in a `dim`-dimensional germ for one response.
fn linear_simulator(
    response: Response,
    x: &[f64],
    rows: &[Vec<f64>],
    dim: usize,
) -> ResponseCoefficients {
    let basis = ChaosBasis::new(dim, 1).unwrap();
    let zeros = vec![vec![0.0; basis.len()]; x.len()];
    let mut sim = ResponseCoefficients {
        x: x.to_vec(),
        basis,
        density: zeros.clone(),
        velocity: zeros.clone(),
        pressure: zeros.clone(),
        temperature: zeros,
    };
    sim.get_mut(response).clone_from_slice(rows);
    sim
}

fn prior_draws(n: usize, dim: usize, stream: &str) -> Vec<Vec<f64>> {
    let mut rng = rng_for(9, stream);
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

#[test]
fn reconstructed_inverse_tracks_direct_inverse() {
    let settings = SurrogateSettings {
        order: 6,
        max_order: 6,
        ..Default::default()
    };
    let s = build_covariance_surrogate(
        &baseline_discrepancy([0, 1]),
        &pressure_data(0.05),
        settings,
    )
    .unwrap();
    let mut errs: Vec<f64> = prior_draws(100, 2, "inverse")
        .iter()
        .map(|xi| {
            let xi = [xi[0], xi[1]];
            let (_, approx) = s.reconstruct(xi).unwrap();
            let exact = s.exact_covariance(xi).try_inverse().unwrap();
            (approx - &exact).norm() / exact.norm()
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    let median = 0.5 * (errs[49] + errs[50]);
    assert!(median <= 1e-2, "median relative Frobenius error {median}");
}

#[test]
fn unvalidated_expansion_is_replaced_by_direct_factorisation() {
    let fixed = SurrogateSettings {
        max_order: 2,
        ..Default::default()
    };
    let s = build_covariance_surrogate(&baseline_discrepancy([0, 1]), &pressure_data(0.01), fixed)
        .unwrap();
    assert!(!s.validation.projected);
    assert!(s.validation.median_inverse_error > fixed.inverse_tol);
    let r = [0.01, -0.02, 0.015, 0.0, 0.005];
    for xi in prior_draws(20, 2, "fallback") {
        let xi = [xi[0], xi[1]];
        assert_eq!(s.terms(xi, &r).unwrap(), s.direct_terms(xi, &r).unwrap());
    }
}

/// Discrepancy priors with a 10% coefficient of variation.
fn narrow_discrepancy(dims: [usize; 2]) -> DiscrepancyModel {
    DiscrepancyModel::new(
        Response::Pressure,
        HyperPrior::new(Family::Gamma {
            shape: 100.0,
            scale: 5e-4,
        })
        .unwrap(),
        HyperPrior::new(Family::Gamma {
            shape: 100.0,
            scale: 0.12,
        })
        .unwrap(),
        dims,
    )
}

/// Observations of one response at the five default locations, simulator
/// linear in the first two germs and discrepancy on germs 2 and 3.
fn discrepancy_toy(sigma: f64) -> LikelihoodSurrogate {
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|i| vec![0.88 - 0.1 * i as f64, 0.01 * (i as f64 + 1.0), -0.005])
        .collect();
    let sim = linear_simulator(Response::Pressure, &LOCATIONS, &rows, 2);
    let obs = ObservationSet {
        responses: vec![pressure_data(sigma)],
    };
    LikelihoodSurrogate::new(
        &obs,
        &sim,
        &[narrow_discrepancy([2, 3])],
        SurrogateSettings::default(),
    )
    .unwrap()
}

#[test]
fn surrogate_log_posterior_tracks_direct_evaluation() {
    let l = discrepancy_toy(0.05);
    match &l.terms[0].cov {
        CovarianceModel::Discrepancy(s) => assert!(s.validation.projected, "{:?}", s.validation),
        CovarianceModel::NoiseOnly { .. } => panic!("discrepancy expected"),
    }
    let mut worst: f64 = 0.0;
    for xi in prior_draws(100, 4, "log-post") {
        let a = l.log_posterior(&xi).unwrap().value;
        let b = l.log_posterior_direct(&xi).unwrap();
        worst = worst.max((a - b).abs());
    }
    assert!(worst <= 1e-2, "largest absolute difference {worst}");
}

#[test]
fn without_observations_only_the_prior_remains() {
    let basis = ChaosBasis::new(3, 2).unwrap();
    let sim = ResponseCoefficients {
        x: vec![],
        basis,
        density: vec![],
        velocity: vec![],
        pressure: vec![],
        temperature: vec![],
    };
    let l = LikelihoodSurrogate::new(
        &ObservationSet { responses: vec![] },
        &sim,
        &[],
        SurrogateSettings::default(),
    )
    .unwrap();
    let values: Vec<f64> = prior_draws(20, 3, "empty")
        .iter()
        .map(|xi| l.log_posterior(xi).unwrap().value + 0.5 * xi.iter().map(|x| x * x).sum::<f64>())
        .collect();
    assert!(values.iter().all(|v| *v == values[0]));
}

fn noise_only_toy() -> LikelihoodSurrogate {
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|i| {
            vec![
                0.9 - 0.1 * i as f64,
                0.02 * (i as f64 + 1.0),
                0.01 * (5 - i) as f64,
            ]
        })
        .collect();
    let sim = linear_simulator(Response::Pressure, &LOCATIONS, &rows, 2);
    let mut data = pressure_data(0.01);
    data.values = vec![0.93, 0.84, 0.77, 0.64, 0.56];
    LikelihoodSurrogate::new(
        &ObservationSet {
            responses: vec![data],
        },
        &sim,
        &[],
        SurrogateSettings::default(),
    )
    .unwrap()
}

#[test]
fn moving_the_mean_toward_data_never_lowers_the_likelihood() {
    // With a deterministic covariance, pulling μ toward Y along a straight
    // line shrinks the residual and the quadratic form.
    let l = noise_only_toy();
    let rows = &l.terms[0].coeffs;
    let b = DMatrix::from_fn(5, 2, |i, j| rows[i][j + 1]);
    let r0 = DVector::from_fn(5, |i, _| l.terms[0].values[i] - rows[i][0]);
    // ξ* minimises |r0 - Bξ|.
    let target = (b.transpose() * &b).try_inverse().unwrap() * b.transpose() * &r0;
    let start = DVector::from_vec(vec![-2.0, 1.5]);
    let mut last = f64::NEG_INFINITY;
    for k in 0..=20 {
        let t = k as f64 / 20.0;
        let xi = &start + (&target - &start) * t;
        let v = l.log_likelihood(xi.as_slice()).unwrap().value;
        assert!(v >= last - 1e-12, "step {k}");
        last = v;
    }
}

#[test]
fn deterministic_covariance_surrogate_is_exact() {
    let l = noise_only_toy();
    for xi in prior_draws(50, 2, "exact") {
        let a = l.log_posterior(&xi).unwrap().value;
        let b = l.log_posterior_direct(&xi).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }
    // A fixed discrepancy projects exactly as well.
    let rows = l.terms[0].coeffs.clone();
    let sim = linear_simulator(Response::Pressure, &LOCATIONS, &rows, 2);
    let model = DiscrepancyModel::new(
        Response::Pressure,
        HyperPrior::fixed(0.04).unwrap(),
        HyperPrior::fixed(3.0).unwrap(),
        [2, 3],
    );
    let obs = ObservationSet {
        responses: vec![pressure_data(0.01)],
    };
    let l = LikelihoodSurrogate::new(&obs, &sim, &[model], SurrogateSettings::default()).unwrap();
    for xi in prior_draws(50, 4, "exact-fixed") {
        let a = l.log_posterior(&xi).unwrap().value;
        let b = l.log_posterior_direct(&xi).unwrap();
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn marginal_likelihood_matches_brute_force_integration() {
    let (y, mu, se, sd) = (1.3, 1.1, 0.15, 0.25);
    let sim = linear_simulator(Response::Density, &[0.5], &[vec![mu, 0.0]], 1);
    let obs = ObservationSet {
        responses: vec![ResponseData {
            response: Response::Density,
            requested_x: vec![0.5],
            x: vec![0.5],
            nodes: vec![50],
            values: vec![y],
            sigma: vec![se],
        }],
    };
    let model = DiscrepancyModel::new(
        Response::Density,
        HyperPrior::fixed(sd * sd).unwrap(),
        HyperPrior::fixed(1.0).unwrap(),
        [1, 2],
    );
    let l = LikelihoodSurrogate::new(&obs, &sim, &[model], SurrogateSettings::default()).unwrap();
    let implemented = l.log_likelihood(&[0.0, 0.0, 0.0]).unwrap().value.exp();
    // ∫ N(y; μ + δ, σ_e²) N(δ; 0, σ_δ²) dδ by the midpoint rule.
    let normal =
        |x: f64, s: f64| (-0.5 * x * x / (s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let (lo, hi, n) = (-12.0 * sd, 12.0 * sd, 200_000);
    let h = (hi - lo) / n as f64;
    let brute: f64 = (0..n)
        .map(|i| {
            let d = lo + (i as f64 + 0.5) * h;
            normal(y - mu - d, se) * normal(d, sd) * h
        })
        .sum();
    assert!(
        (implemented - brute).abs() <= 1e-6,
        "{implemented} vs {brute}"
    );
}

/// Batch-means standard error of the mean of a correlated series.
fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs
        .chunks_exact(size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / (means.len() - 1) as f64;
    (var / means.len() as f64).sqrt()
}

#[test]
fn standard_normal_target_moments() {
    let s = McmcSettings {
        n_samples: 100_000,
        n_burn: 2_000,
        step: 0.1,
        seed: 21,
        adapt: true,
    };
    let c =
        metropolis_hastings(|x| Ok(-0.5 * (x[0] * x[0] + x[1] * x[1])), &[0.0, 0.0], &s).unwrap();
    for d in 0..2 {
        let col = c.column(d);
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (col.len() - 1) as f64;
        assert!(m.abs() <= 0.05, "mean {m}");
        assert!((v - 1.0).abs() <= 0.1, "variance {v}");
    }
    let rate = c.acceptance_rate();
    assert!(rate > 0.0 && rate < 1.0);
}

#[test]
fn conjugate_linear_gaussian_posterior_is_recovered() {
    let rows = vec![
        vec![0.2, 1.0, 0.3],
        vec![-0.1, 0.4, -0.8],
        vec![0.5, -0.6, 0.2],
    ];
    let x = [0.2, 0.5, 0.8];
    let sim = linear_simulator(Response::Velocity, &x, &rows, 2);
    let se = 0.5;
    let y = vec![0.9, -0.4, 0.7];
    let obs = ObservationSet {
        responses: vec![ResponseData {
            response: Response::Velocity,
            requested_x: x.to_vec(),
            x: x.to_vec(),
            nodes: vec![20, 50, 80],
            values: y.clone(),
            sigma: vec![se; 3],
        }],
    };
    let l = LikelihoodSurrogate::new(&obs, &sim, &[], SurrogateSettings::default()).unwrap();
    // Closed form: Σ_post = (I + BᵀB/σ²)⁻¹, m = Σ_post Bᵀ(y - a)/σ².
    let b = DMatrix::from_fn(3, 2, |i, j| rows[i][j + 1]);
    let r = DVector::from_fn(3, |i, _| y[i] - rows[i][0]);
    let cov = (DMatrix::identity(2, 2) + b.transpose() * &b / (se * se))
        .try_inverse()
        .unwrap();
    let mean = &cov * b.transpose() * r / (se * se);

    let settings = McmcSettings {
        n_samples: 10_000,
        n_burn: 1_000,
        step: 0.1,
        seed: 5,
        adapt: true,
    };
    let (chain, _) = sample_posterior(&l, &settings).unwrap();
    let cols = [chain.column(0), chain.column(1)];
    let m: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    for d in 0..2 {
        let se = batch_se(&cols[d], 50);
        assert!(
            (m[d] - mean[d]).abs() <= 3.0 * se,
            "mean {d}: {} vs {} (se {se})",
            m[d],
            mean[d]
        );
    }
    for (a, bb) in [(0, 0), (0, 1), (1, 1)] {
        let prods: Vec<f64> = cols[a]
            .iter()
            .zip(&cols[bb])
            .map(|(u, v)| (u - m[a]) * (v - m[bb]))
            .collect();
        let c = prods.iter().sum::<f64>() / prods.len() as f64;
        let se = batch_se(&prods, 50);
        assert!(
            (c - cov[(a, bb)]).abs() <= 3.0 * se,
            "cov ({a},{bb}): {c} vs {} (se {se})",
            cov[(a, bb)]
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn constant_log_likelihood_shift_leaves_chain_unchanged(shift in -50.0f64..50.0, seed in 0u64..1000) {
        let l = noise_only_toy();
        let s = McmcSettings { n_samples: 500, n_burn: 100, step: 0.1, seed, adapt: true };
        let a = metropolis_hastings(|x| Ok(l.log_posterior(x)?.value), &[0.0, 0.0], &s).unwrap();
        let b = metropolis_hastings(|x| Ok(l.log_posterior(x)?.value + shift), &[0.0, 0.0], &s).unwrap();
        prop_assert_eq!(a.samples, b.samples);
    }
}

fn field_on(basis: &ChaosBasis, x: &[f64]) -> GpcField {
    let p = basis.len();
    let coeffs: Vec<Vec<f64>> = x
        .iter()
        .map(|&xg| {
            (0..p)
                .map(|k| {
                    if k == 0 {
                        1.0 + xg
                    } else {
                        0.05 * xg / k as f64
                    }
                })
                .collect()
        })
        .collect();
    GpcField {
        x: x.to_vec(),
        basis: basis.clone(),
        slope: coeffs.clone(),
        coeffs,
    }
}

fn chain_from(rows: &[Vec<f64>]) -> Chain {
    Chain {
        dim: rows[0].len(),
        samples: rows.concat(),
        log_post: vec![0.0; rows.len()],
        accepted: 0,
        step: 0.1,
        seed: 0,
        stalled_windows: 0,
        invalid: 0,
    }
}

#[test]
fn posterior_field_of_origin_chain_is_prior_at_origin() {
    let basis = ChaosBasis::new(2, 2).unwrap();
    let x = [0.0, 0.5, 1.0];
    let field = field_on(&basis, &x);
    let chain = chain_from(&vec![vec![0.0, 0.0, 0.7]; 10]);
    let post = posterior_field(&chain, &field, &[0.05, 0.5, 0.95]).unwrap();
    let at0 = field.sample(&[0.0, 0.0]).unwrap();
    for g in 0..3 {
        assert!((post.mean[g] - at0[g]).abs() < 1e-14);
    }
}

#[test]
fn quantile_bands_are_ordered() {
    let basis = ChaosBasis::new(2, 2).unwrap();
    let x: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let field = field_on(&basis, &x);
    let chain = chain_from(&prior_draws(500, 2, "bands"));
    let post = posterior_field(&chain, &field, &[0.05, 0.5, 0.95]).unwrap();
    for g in 0..x.len() {
        assert!(post.bands[0][g] <= post.bands[1][g] && post.bands[1][g] <= post.bands[2][g]);
    }
}

#[test]
fn prior_only_chain_reproduces_hyper_priors() {
    let s = McmcSettings {
        n_samples: 200_000,
        n_burn: 2_000,
        step: 1.0,
        seed: 17,
        adapt: true,
    };
    let c =
        metropolis_hastings(|x| Ok(-0.5 * (x[0] * x[0] + x[1] * x[1])), &[0.0, 0.0], &s).unwrap();
    // Thin to nearly independent draws.
    let thinned: Vec<Vec<f64>> = c.iter().step_by(100).map(|r| r.to_vec()).collect();
    let thinned = chain_from(&thinned);
    let defs = [
        HyperDefinition {
            name: "variance".into(),
            dim: 0,
            prior: HyperPrior::new(Family::InverseGamma {
                shape: 9.0,
                scale: 0.5,
            })
            .unwrap(),
        },
        HyperDefinition {
            name: "corr".into(),
            dim: 1,
            prior: HyperPrior::new(Family::Gamma {
                shape: 5.0,
                scale: 0.2,
            })
            .unwrap(),
        },
    ];
    let crit = ks_critical(thinned.len(), 0.01);
    for h in posterior_hyper(&thinned, &defs).unwrap() {
        let d = h.ks_to_prior();
        assert!(d <= crit, "{}: KS {d} > {crit}", h.name);
    }
}
