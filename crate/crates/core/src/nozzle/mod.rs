//! Quasi-one-dimensional Euler flow through a nozzle: a deterministic solver
//! and its stochastic Galerkin counterpart over a Hermite chaos basis.
//!
//! Conserved variables are `q1 = ρA`, `q2 = ρvA`, `q3 = ρEA`. Space is
//! discretised by central differences with linear fourth-difference
//! dissipation and time is marched with classical RK4 to a steady state.
//! Supersonic inflow pins all three variables; the outflow node is advanced
//! with a one-sided second-order flux difference.

mod deterministic;
mod rk4;
mod stochastic;

use serde::{Deserialize, Serialize};

pub use deterministic::{deterministic_solve, DeterministicSolution, DeterministicSolver};
pub use rk4::Rk4;
pub use stochastic::{
    extract_responses, galerkin_reciprocal, stochastic_solve, ProductMode, ResponseCoefficients,
    StochasticSolver, StochasticState,
};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub gamma: f64,
    pub mach_in: f64,
    pub p_in: f64,
    pub rho_in: f64,
    /// Domain is `[0, length]`.
    pub length: f64,
    pub dx: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub steady_tol: f64,
    pub eps4: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            gamma: 1.4,
            mach_in: 1.5,
            p_in: 1.0,
            rho_in: 1.0,
            length: 1.0,
            dx: 0.01,
            dt: 0.002,
            max_steps: 200_000,
            steady_tol: 1e-8,
            eps4: 1.0 / 64.0,
        }
    }
}

/// Primitive inflow state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inflow {
    pub rho: f64,
    pub v: f64,
    pub p: f64,
    pub sound_speed: f64,
}

impl Inflow {
    pub fn temperature(&self) -> f64 {
        self.p / self.rho
    }

    /// `ρE = P/(γ-1) + ρv²/2`.
    pub fn energy_density(&self, gamma: f64) -> f64 {
        self.p / (gamma - 1.0) + 0.5 * self.rho * self.v * self.v
    }
}

impl FlowConfig {
    pub fn n_points(&self) -> usize {
        (self.length / self.dx).round() as usize + 1
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.n_points() - 1;
        (0..=n).map(|i| self.length * i as f64 / n as f64).collect()
    }

    pub fn inflow(&self) -> Inflow {
        let a = (self.gamma * self.p_in / self.rho_in).sqrt();
        Inflow {
            rho: self.rho_in,
            v: self.mach_in * a,
            p: self.p_in,
            sound_speed: a,
        }
    }

    /// Reference wave speed `|v| + a` at the inflow.
    pub fn wave_speed(&self) -> f64 {
        let s = self.inflow();
        s.v.abs() + s.sound_speed
    }

    pub fn cfl(&self) -> f64 {
        self.wave_speed() * self.dt / self.dx
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma - 1", self.gamma - 1.0),
            ("p_in", self.p_in),
            ("rho_in", self.rho_in),
            ("length", self.length),
            ("dx", self.dx),
            ("dt", self.dt),
            ("steady_tol", self.steady_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.mach_in > 1.0) {
            return Err(Error::Config(format!(
                "inflow must be supersonic, got Mach {}",
                self.mach_in
            )));
        }
        let cells = self.length / self.dx;
        if (cells - cells.round()).abs() > 1e-9 * cells || cells.round() < 4.0 {
            return Err(Error::Config(format!(
                "dx = {} must divide the domain into at least 4 cells",
                self.dx
            )));
        }
        if self.cfl() >= 1.0 {
            return Err(Error::Config(format!(
                "CFL {} at inflow must be below 1",
                self.cfl()
            )));
        }
        if !(self.eps4 >= 0.0 && self.eps4.is_finite()) {
            return Err(Error::Config(format!(
                "eps4 must be non-negative, got {}",
                self.eps4
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Flow responses reported by the solvers, normalised by inflow values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Density,
    Velocity,
    Pressure,
    Temperature,
}

impl Response {
    pub const ALL: [Response; 4] = [
        Response::Density,
        Response::Velocity,
        Response::Pressure,
        Response::Temperature,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Response::Density => "density",
            Response::Velocity => "velocity",
            Response::Pressure => "pressure",
            Response::Temperature => "temperature",
        }
    }
}

/// Normalised response profiles on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responses {
    pub density: Vec<f64>,
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    pub temperature: Vec<f64>,
}

impl Responses {
    pub fn get(&self, r: Response) -> &[f64] {
        match r {
            Response::Density => &self.density,
            Response::Velocity => &self.velocity,
            Response::Pressure => &self.pressure,
            Response::Temperature => &self.temperature,
        }
    }
}

/// Index of the grid node nearest to `x`.
pub fn nearest_node(grid: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, g) in grid.iter().enumerate() {
        if (g - x).abs() < (grid[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// `δ⁴` at interior node `i` of a field with stride `stride`, using quadratic
/// extrapolation for the ghost values beyond either end.
#[inline]
pub(crate) fn fourth_difference(
    q: &[f64],
    i: usize,
    n_points: usize,
    stride: usize,
    off: usize,
) -> f64 {
    let at = |j: usize| q[j * stride + off];
    let left2 = if i >= 2 {
        at(i - 2)
    } else {
        3.0 * at(0) - 3.0 * at(1) + at(2)
    };
    let right2 = if i + 2 < n_points {
        at(i + 2)
    } else {
        3.0 * at(n_points - 1) - 3.0 * at(n_points - 2) + at(n_points - 3)
    };
    left2 - 4.0 * at(i - 1) + 6.0 * at(i) - 4.0 * at(i + 1) + right2
}

/// `out -= c δ⁴q` over every component of interior node `i`, where the node
/// blocks of `q` have length `out.len()`.
pub(crate) fn subtract_dissipation(q: &[f64], i: usize, n_points: usize, c: f64, out: &mut [f64]) {
    let b = out.len();
    if i >= 2 && i + 2 < n_points {
        let node = |j: usize| &q[j * b..(j + 1) * b];
        let (m2, m1, c0, p1, p2) = (node(i - 2), node(i - 1), node(i), node(i + 1), node(i + 2));
        for (e, o) in out.iter_mut().enumerate() {
            *o -= c * (m2[e] - 4.0 * m1[e] + 6.0 * c0[e] - 4.0 * p1[e] + p2[e]);
        }
    } else {
        for (e, o) in out.iter_mut().enumerate() {
            *o -= c * fourth_difference(q, i, n_points, b, e);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = FlowConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_points(), 101);
        assert!(c.cfl() < 0.7);
        let g = c.grid();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 1.0);
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let subsonic = FlowConfig {
            mach_in: 0.8,
            ..Default::default()
        };
        assert!(subsonic.validate().is_err());
        let big_dt = FlowConfig {
            dt: 0.01,
            ..Default::default()
        };
        assert!(big_dt.validate().is_err());
        let odd_dx = FlowConfig {
            dx: 0.013,
            ..Default::default()
        };
        assert!(odd_dx.validate().is_err());
    }

    #[test]
    fn fourth_difference_annihilates_cubics() {
        let q: Vec<f64> = (0..10)
            .map(|i| (i as f64).powi(3) - 2.0 * i as f64)
            .collect();
        for i in 2..8 {
            assert!(fourth_difference(&q, i, 10, 1, 0).abs() < 1e-9);
        }
        // Quadratics stay annihilated with extrapolated ghosts.
        let quad: Vec<f64> = (0..10)
            .map(|i| 3.0 - 0.5 * i as f64 + 0.25 * (i * i) as f64)
            .collect();
        for i in 1..9 {
            assert!(fourth_difference(&quad, i, 10, 1, 0).abs() < 1e-12);
        }
        // The block form matches the scalar form, ghosts included.
        let pairs: Vec<f64> = (0..20).map(|k| ((k * k) as f64).sin()).collect();
        for i in 1..9 {
            let mut out = [1.0, 2.0];
            subtract_dissipation(&pairs, i, 10, 0.5, &mut out);
            for e in 0..2 {
                let expect = [1.0, 2.0][e] - 0.5 * fourth_difference(&pairs, i, 10, 2, e);
                assert!((out[e] - expect).abs() < 1e-14);
            }
        }
    }
}
