use serde::{Deserialize, Serialize};

use super::{subtract_dissipation, FlowConfig, Responses, Rk4};
use crate::{Error, Result};

/// Time-marching solver for one area profile.
#[derive(Debug, Clone)]
pub struct DeterministicSolver {
    cfg: FlowConfig,
    area: Vec<f64>,
    /// A'/A on the grid.
    w: Vec<f64>,
    q: Vec<f64>,
    rk: Rk4,
    flux: Vec<f64>,
    pa: Vec<f64>,
    steps: usize,
    residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicSolution {
    pub x: Vec<f64>,
    pub area: Vec<f64>,
    /// Conserved variables, `q[3 i + v]`.
    pub q: Vec<f64>,
    pub responses: Responses,
    pub steps: usize,
    pub residual: f64,
}

impl DeterministicSolution {
    /// `ρvA` at every grid node.
    pub fn mass_flux(&self) -> Vec<f64> {
        self.q.chunks_exact(3).map(|c| c[1]).collect()
    }
}

impl DeterministicSolver {
    pub fn new(area: &[f64], slope: &[f64], cfg: &FlowConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_points();
        if area.len() != n || slope.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: area.len().min(slope.len()),
            });
        }
        if let Some(i) = area.iter().position(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::invalid(format!(
                "area must be positive, got {} at node {i}",
                area[i]
            )));
        }
        if let Some(i) = slope.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!(
                "area slope is not finite at node {i}"
            )));
        }
        let inflow = cfg.inflow();
        let e = inflow.energy_density(cfg.gamma);
        let mut q = Vec::with_capacity(3 * n);
        for &a in area {
            q.extend_from_slice(&[inflow.rho * a, inflow.rho * inflow.v * a, e * a]);
        }
        Ok(Self {
            cfg: *cfg,
            area: area.to_vec(),
            w: area.iter().zip(slope).map(|(a, s)| s / a).collect(),
            q,
            rk: Rk4::new(3 * n),
            flux: vec![0.0; 3 * n],
            pa: vec![0.0; n],
            steps: 0,
            residual: f64::INFINITY,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.q
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One RK4 step; returns `max |ΔQ| / Δt`.
    pub fn step(&mut self) -> Result<f64> {
        let Self {
            cfg,
            w,
            q,
            rk,
            flux,
            pa,
            ..
        } = self;
        let n = w.len();
        let gm1 = cfg.gamma - 1.0;
        let inv2dx = 0.5 / cfg.dx;
        let c4 = cfg.eps4 * cfg.wave_speed() / cfg.dx;
        let res = rk.step(q, cfg.dt, |q, out| {
            for i in 0..n {
                let (q1, q2, q3) = (q[3 * i], q[3 * i + 1], q[3 * i + 2]);
                let r = 1.0 / q1;
                let v = q2 * r;
                let k = q2 * v;
                let p = gm1 * (q3 - 0.5 * k);
                pa[i] = p;
                flux[3 * i] = q2;
                flux[3 * i + 1] = k + p;
                flux[3 * i + 2] = (q3 + p) * v;
            }
            out[..3].iter_mut().for_each(|o| *o = 0.0);
            for i in 1..n - 1 {
                for var in 0..3 {
                    out[3 * i + var] =
                        -(flux[3 * (i + 1) + var] - flux[3 * (i - 1) + var]) * inv2dx;
                }
                if c4 != 0.0 {
                    subtract_dissipation(q, i, n, c4, &mut out[3 * i..3 * i + 3]);
                }
                out[3 * i + 1] += pa[i] * w[i];
            }
            // Supersonic outflow: one-sided second-order update, no dissipation.
            for var in 0..3 {
                let f = |j: usize| flux[3 * j + var];
                out[3 * (n - 1) + var] = -(3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) * inv2dx;
            }
            out[3 * (n - 1) + 1] += pa[n - 1] * w[n - 1];
            Ok(())
        })?;
        self.steps += 1;
        self.residual = res;
        self.check_physical()?;
        Ok(res)
    }

    fn check_physical(&self) -> Result<()> {
        let gm1 = self.cfg.gamma - 1.0;
        if !self.residual.is_finite() {
            return Err(Error::BlowUp {
                step: self.steps,
                reason: "non-finite state".into(),
            });
        }
        for (i, c) in self.q.chunks_exact(3).enumerate() {
            let p = gm1 * (c[2] - 0.5 * c[1] * c[1] / c[0]);
            if !(c[0] > 0.0) || !(p > 0.0) {
                return Err(Error::BlowUp {
                    step: self.steps,
                    reason: format!("non-positive density or pressure at node {i}"),
                });
            }
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<DeterministicSolution> {
        while self.steps < self.cfg.max_steps {
            if self.step()? < self.cfg.steady_tol {
                return Ok(self.solution());
            }
        }
        Err(Error::NotConverged {
            steps: self.steps,
            residual: self.residual,
        })
    }

    pub fn solution(&self) -> DeterministicSolution {
        let inflow = self.cfg.inflow();
        let gm1 = self.cfg.gamma - 1.0;
        let n = self.area.len();
        let mut r = Responses {
            density: Vec::with_capacity(n),
            velocity: Vec::with_capacity(n),
            pressure: Vec::with_capacity(n),
            temperature: Vec::with_capacity(n),
        };
        for (c, &a) in self.q.chunks_exact(3).zip(&self.area) {
            let rho = c[0] / a;
            let v = c[1] / c[0];
            let p = gm1 * (c[2] - 0.5 * c[1] * v) / a;
            r.density.push(rho / inflow.rho);
            r.velocity.push(v / inflow.v);
            r.pressure.push(p / inflow.p);
            r.temperature.push((p / rho) / inflow.temperature());
        }
        DeterministicSolution {
            x: self.cfg.grid(),
            area: self.area.clone(),
            q: self.q.clone(),
            responses: r,
            steps: self.steps,
            residual: self.residual,
        }
    }
}

/// March to steady state for the area profile `area` with slope `slope`.
pub fn deterministic_solve(
    area: &[f64],
    slope: &[f64],
    cfg: &FlowConfig,
) -> Result<DeterministicSolution> {
    DeterministicSolver::new(area, slope, cfg)?.run()
}
