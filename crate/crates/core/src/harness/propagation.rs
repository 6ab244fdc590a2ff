use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::calibration::{ObservationSet, ResponseData};
use crate::chaos::{moment_tensor, ChaosBasis};
use crate::nozzle::{
    deterministic_solve, extract_responses, nearest_node, stochastic_solve, DeterministicSolution,
    ProductMode, Response, StochasticState,
};
use crate::random_field::{
    expand_over_hyper, field_gpc, CovarianceKernel, GermLayout, GpcField, HyperPrior, KLModes,
    KernelForm, KlSettings, SpatialDiscretization,
};
use crate::stats::{mean, rng_for, variance};
use crate::{Error, Result};

/// Redraws allowed for one Monte Carlo sample before the prior is declared
/// incompatible with positive areas.
const MAX_REDRAWS: usize = 1000;

/// Synthetic experiment: the flow through the true area and noisy samples of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Testbed {
    pub solution: DeterministicSolution,
    pub observations: ObservationSet,
}

/// Solve the flow through `cfg.true_area` and observe each planned response at
/// the grid nodes nearest to the planned locations, with independent Gaussian
/// noise of standard deviation `noise_fraction · |value|`.
pub fn generate_testbed(cfg: &RunConfig) -> Result<Testbed> {
    let grid = cfg.flow.grid();
    let area: Vec<f64> = grid.iter().map(|&x| cfg.true_area.value(x)).collect();
    let slope: Vec<f64> = grid.iter().map(|&x| cfg.true_area.derivative(x)).collect();
    let solution = deterministic_solve(&area, &slope, &cfg.flow)?;
    let mut rng = rng_for(cfg.seed, "testbed");
    let plan = &cfg.observations;
    let mut responses = Vec::with_capacity(plan.responses.len());
    for &r in &plan.responses {
        let profile = solution.responses.get(r);
        let mut values = Vec::with_capacity(plan.locations.len());
        let mut sigma = Vec::with_capacity(plan.locations.len());
        for &x in &plan.locations {
            let v = profile[nearest_node(&grid, x)];
            let s = plan.noise_fraction * v.abs();
            let z: f64 = rng.sample(StandardNormal);
            values.push(v + s * z);
            sigma.push(s);
        }
        responses.push(ResponseData::on_grid(
            r,
            &grid,
            &plan.locations,
            values,
            sigma,
        )?);
    }
    Ok(Testbed {
        solution,
        observations: ObservationSet { responses },
    })
}

/// Pointwise mean and variance of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl FieldMoments {
    fn from_samples(per_node: &[Vec<f64>]) -> Self {
        Self {
            mean: per_node.iter().map(|v| mean(v)).collect(),
            variance: per_node
                .iter()
                .map(|v| if v.len() < 2 { 0.0 } else { variance(v) })
                .collect(),
        }
    }
}

/// Area and response moments on the flow grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMoments {
    pub x: Vec<f64>,
    pub area: FieldMoments,
    pub density: FieldMoments,
    pub velocity: FieldMoments,
    pub pressure: FieldMoments,
    pub temperature: FieldMoments,
}

impl GridMoments {
    pub fn get(&self, r: Response) -> &FieldMoments {
        match r {
            Response::Density => &self.density,
            Response::Velocity => &self.velocity,
            Response::Pressure => &self.pressure,
            Response::Temperature => &self.temperature,
        }
    }

    /// Columns `x`, then `<field>_mean,<field>_variance` for the area and every response.
    pub fn write_csv(&self, w: impl std::io::Write, config_hash: &str) -> Result<()> {
        let mut w = w;
        writeln!(w, "# config_hash={config_hash}").map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["x".to_string(), "area_mean".into(), "area_variance".into()];
        for r in Response::ALL {
            header.push(format!("{}_mean", r.name()));
            header.push(format!("{}_variance", r.name()));
        }
        out.write_record(&header)?;
        for (g, x) in self.x.iter().enumerate() {
            let mut row = vec![
                x.to_string(),
                self.area.mean[g].to_string(),
                self.area.variance[g].to_string(),
            ];
            for r in Response::ALL {
                row.push(self.get(r).mean[g].to_string());
                row.push(self.get(r).variance[g].to_string());
            }
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Prior area field in chaos form with the KL modes it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorField {
    pub modes: KLModes,
    pub layout: GermLayout,
    pub field: GpcField,
}

/// KL expansion over the hyper-parameter priors and chaos assembly of the area
/// field on the flow grid, with `n_modes` modes and basis order `order`.
pub fn build_prior_field(cfg: &RunConfig, n_modes: usize, order: usize) -> Result<PriorField> {
    let kl = KlSettings { n_modes, ..cfg.kl };
    let modes = expand_over_hyper(
        KernelForm::SquaredExponential,
        cfg.field_prior.resolve()?,
        (0.0, cfg.flow.length),
        &kl,
    )?;
    let layout = GermLayout { n_modes };
    let basis = ChaosBasis::new(layout.germ_dim(), order)?;
    let quartic = moment_tensor(&basis, 4)?;
    let field = field_gpc(
        &modes,
        &basis,
        layout,
        &cfg.prior_mean_area,
        &cfg.flow.grid(),
        &quartic,
    )?;
    Ok(PriorField {
        modes,
        layout,
        field,
    })
}

/// Stochastic Galerkin solution with its moments on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub prior: PriorField,
    pub state: StochasticState,
    pub moments: GridMoments,
    /// Wall time of the field construction.
    pub field_seconds: f64,
    /// Wall time of the stochastic solve alone.
    pub solve_seconds: f64,
}

pub fn gpc_propagate(cfg: &RunConfig, n_modes: usize, order: usize) -> Result<Propagation> {
    let t0 = Instant::now();
    let prior =
        build_prior_field(cfg, n_modes, order).map_err(|e| e.in_stage("field construction"))?;
    let field_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let state = stochastic_solve(&prior.field, &cfg.flow, ProductMode::Pairwise)
        .map_err(|e| e.in_stage("stochastic solve"))?;
    let solve_seconds = t1.elapsed().as_secs_f64();
    let grid = cfg.flow.grid();
    let coeffs = extract_responses(&state, &cfg.flow, &grid)?;
    let moments_of = |r: Response| FieldMoments {
        mean: coeffs.mean(r),
        variance: coeffs.variance(r),
    };
    let moments = GridMoments {
        x: grid,
        area: FieldMoments {
            mean: prior.field.mean(),
            variance: prior.field.variance(),
        },
        density: moments_of(Response::Density),
        velocity: moments_of(Response::Velocity),
        pressure: moments_of(Response::Pressure),
        temperature: moments_of(Response::Temperature),
    };
    Ok(Propagation {
        prior,
        state,
        moments,
        field_seconds,
        solve_seconds,
    })
}

/// Monte Carlo ensemble statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub moments: GridMoments,
    pub n_modes: usize,
    pub requested: usize,
    /// Samples whose flow solve succeeded and enter the moments.
    pub used: usize,
    /// Area realisations redrawn because they were not positive everywhere.
    pub redrawn: usize,
    pub failures: usize,
    /// How each realisation's KL modes were obtained.
    pub kl_method: String,
    pub seconds: f64,
}

impl MonteCarlo {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.requested as f64
    }
}

struct Draw {
    area: Vec<f64>,
    solution: Option<DeterministicSolution>,
    redrawn: usize,
}

/// One hierarchical prior area realisation: `θ` from the truncated priors, the
/// Galerkin eigenproblem solved at `θ`, and `n_modes` standard normal KL weights.
fn draw_area(
    cfg: &RunConfig,
    spatial: &SpatialDiscretization,
    n_modes: usize,
    grid: &[f64],
    priors: &[HyperPrior; 2],
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let [pv, pc] = priors;
    for redraw in 0..MAX_REDRAWS {
        let theta = [
            pv.from_germ(rng.sample(StandardNormal)),
            pc.from_germ(rng.sample(StandardNormal)),
        ];
        let pairs = spatial.solve_gep(&CovarianceKernel::new(theta[0], theta[1])?)?;
        let chi: Vec<f64> = (0..n_modes).map(|_| rng.sample(StandardNormal)).collect();
        let mut area = Vec::with_capacity(grid.len());
        let mut slope = Vec::with_capacity(grid.len());
        for &x in grid {
            let (mut a, mut s) = (
                cfg.prior_mean_area.value(x),
                cfg.prior_mean_area.derivative(x),
            );
            for (n, c) in chi.iter().enumerate() {
                let w = pairs.values[n].sqrt() * c;
                a += w * spatial.eval(&pairs.vectors[n], x);
                s += w * spatial.eval_derivative(&pairs.vectors[n], x);
            }
            area.push(a);
            slope.push(s);
        }
        if area.iter().all(|a| *a > 0.0) {
            return Ok((area, slope, redraw));
        }
    }
    Err(Error::invalid(format!(
        "no positive area realisation in {MAX_REDRAWS} draws; the prior is incompatible with the flow model"
    )))
}

/// Monte Carlo propagation of the hierarchical prior through the deterministic
/// solver. Sample `i` uses its own random stream, so results do not depend on
/// the thread count.
pub fn mc_propagate(cfg: &RunConfig, n_samples: usize, n_modes: usize) -> Result<MonteCarlo> {
    if n_samples == 0 {
        return Err(Error::Config(
            "Monte Carlo needs at least one sample".into(),
        ));
    }
    let t0 = Instant::now();
    let grid = cfg.flow.grid();
    let spatial = SpatialDiscretization::new(
        (0.0, cfg.flow.length),
        cfg.kl.spatial_size,
        cfg.kl.spatial_quad,
    )?;
    if n_modes > spatial.size() {
        return Err(Error::Config(format!(
            "{n_modes} modes requested from a spatial basis of size {}",
            spatial.size()
        )));
    }
    let priors = cfg.field_prior.resolve()?;
    let draws: Vec<Draw> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(cfg.seed, &format!("mc-{i}"));
            let (area, slope, redrawn) =
                draw_area(cfg, &spatial, n_modes, &grid, &priors, &mut rng)?;
            let solution = deterministic_solve(&area, &slope, &cfg.flow).ok();
            Ok(Draw {
                area,
                solution,
                redrawn,
            })
        })
        .collect::<Result<_>>()?;
    let n = grid.len();
    let mut area = vec![Vec::with_capacity(n_samples); n];
    let mut per_response: Vec<Vec<Vec<f64>>> = vec![vec![Vec::with_capacity(n_samples); n]; 4];
    let (mut used, mut redrawn, mut failures) = (0, 0, 0);
    for d in &draws {
        redrawn += d.redrawn;
        let Some(sol) = &d.solution else {
            failures += 1;
            continue;
        };
        used += 1;
        for g in 0..n {
            area[g].push(d.area[g]);
        }
        for (k, r) in Response::ALL.iter().enumerate() {
            for (g, v) in sol.responses.get(*r).iter().enumerate() {
                per_response[k][g].push(*v);
            }
        }
    }
    if used == 0 {
        return Err(Error::NotConverged {
            steps: cfg.flow.max_steps,
            residual: f64::NAN,
        }
        .in_stage("monte carlo"));
    }
    let moments = GridMoments {
        x: grid,
        area: FieldMoments::from_samples(&area),
        density: FieldMoments::from_samples(&per_response[0]),
        velocity: FieldMoments::from_samples(&per_response[1]),
        pressure: FieldMoments::from_samples(&per_response[2]),
        temperature: FieldMoments::from_samples(&per_response[3]),
    };
    Ok(MonteCarlo {
        moments,
        n_modes,
        requested: n_samples,
        used,
        redrawn,
        failures,
        kl_method: "direct Galerkin eigen-solve per hyper-parameter draw".into(),
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Grid-averaged absolute differences of the response means and variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    /// Per response in `Response::ALL` order.
    pub mean: [f64; 4],
    pub variance: [f64; 4],
}

impl MomentErrors {
    pub fn between(a: &GridMoments, b: &GridMoments) -> Self {
        let l1 = |u: &[f64], v: &[f64]| {
            u.iter().zip(v).map(|(p, q)| (p - q).abs()).sum::<f64>() / u.len() as f64
        };
        let mut e = Self {
            mean: [0.0; 4],
            variance: [0.0; 4],
        };
        for (k, r) in Response::ALL.iter().enumerate() {
            e.mean[k] = l1(&a.get(*r).mean, &b.get(*r).mean);
            e.variance[k] = l1(&a.get(*r).variance, &b.get(*r).variance);
        }
        e
    }

    pub fn max_mean(&self) -> f64 {
        self.mean.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_variance(&self) -> f64 {
        self.variance.iter().copied().fold(0.0, f64::max)
    }
}

/// One cell of the convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_modes: usize,
    pub order: usize,
    /// Field construction plus stochastic solve.
    pub cpu_time: f64,
    pub l1_mean_err: f64,
    pub l1_var_err: f64,
}

/// Galerkin propagation for every `(n_modes, order)` pair against one Monte
/// Carlo reference built with the largest mode count. Cells run concurrently on
/// the rayon pool and come back in list order, modes outermost.
pub fn run_convergence_study(
    cfg: &RunConfig,
    n_modes: &[usize],
    orders: &[usize],
    n_mc: usize,
) -> Result<(Vec<ConvergenceRow>, MonteCarlo)> {
    if n_modes.is_empty() || orders.is_empty() {
        return Err(Error::Config("convergence lists must be non-empty".into()));
    }
    let reference_modes = *n_modes.iter().max().expect("non-empty");
    let reference = mc_propagate(cfg, n_mc, reference_modes)
        .map_err(|e| e.in_stage("monte carlo reference"))?;
    let cells: Vec<(usize, usize)> = n_modes
        .iter()
        .flat_map(|&n| orders.iter().map(move |&p| (n, p)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(n, p)| {
            let prop = gpc_propagate(cfg, n, p)?;
            let e = MomentErrors::between(&prop.moments, &reference.moments);
            Ok(ConvergenceRow {
                n_modes: n,
                order: p,
                cpu_time: prop.field_seconds + prop.solve_seconds,
                l1_mean_err: e.max_mean(),
                l1_var_err: e.max_variance(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, reference))
}
