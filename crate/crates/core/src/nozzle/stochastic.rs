use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{nearest_node, subtract_dissipation, FlowConfig, Response, Rk4};
use crate::chaos::{moment_tensor, ChaosBasis, GalerkinProduct, MomentTensor};
use crate::random_field::GpcField;
use crate::{Error, Result};

/// Largest accepted `(max L_ii / min L_ii)²` in a Galerkin division.
const MAX_DIVISION_CONDITION: f64 = 1e12;

/// How the higher-order products in the stochastic flux are truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductMode {
    /// Chained pairwise Galerkin products, re-projected after every factor.
    #[default]
    Pairwise,
    /// Single projection of each full product through arity-4 and arity-6 tensors.
    Exact,
}

/// Galerkin reciprocal of one expansion: solves `M(q) r = e₀`.
pub fn galerkin_reciprocal(q: &[f64], product: &GalerkinProduct) -> Result<Vec<f64>> {
    let p = product.size();
    if q.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: q.len(),
        });
    }
    let mut m = vec![0.0; p * p];
    let mut r = vec![0.0; p];
    reciprocal_into(q, product, &mut m, &mut r)?;
    Ok(r)
}

/// `m` is `P×P` scratch and ends up holding the Cholesky factor of `M(q)`;
/// the reciprocal lands in `r`.
pub(crate) fn reciprocal_into(
    q: &[f64],
    product: &GalerkinProduct,
    m: &mut [f64],
    r: &mut [f64],
) -> Result<()> {
    cholesky_factor(q, product, m)?;
    let p = product.size();
    r[..p].iter_mut().for_each(|v| *v = 0.0);
    r[0] = product.norms()[0];
    cholesky_solve(m, p, r);
    Ok(())
}

/// Cholesky factor of `M(q)`. `M` is symmetric, so row k doubles as column k;
/// `L` is kept column-wise with column j in `m[j p + j..(j + 1) p]` and the
/// diagonal slot holding `1 / L_jj`.
fn cholesky_factor(q: &[f64], product: &GalerkinProduct, m: &mut [f64]) -> Result<()> {
    let p = product.size();
    if !(q[0] > 0.0) {
        return Err(Error::SingularDivision {
            condition: f64::INFINITY,
        });
    }
    product.multiplication_matrix_into(q, m);
    let (mut dmax, mut dmin) = (0.0f64, f64::INFINITY);
    for j in 0..p {
        let (head, tail) = m.split_at_mut((j + 1) * p);
        let col = &mut head[j * p + j..];
        let d = col[0];
        if !(d > 0.0) {
            return Err(Error::SingularDivision {
                condition: f64::INFINITY,
            });
        }
        let l = d.sqrt();
        dmax = dmax.max(l);
        dmin = dmin.min(l);
        let inv = 1.0 / l;
        col.iter_mut().for_each(|v| *v *= inv);
        col[0] = inv;
        let col = &col[1..];
        // Right-looking update of the trailing columns.
        for (t, lk) in col.iter().enumerate() {
            let k = j + 1 + t;
            let dst = &mut tail[(k - j - 1) * p + k..(k - j) * p];
            for (d, c) in dst.iter_mut().zip(&col[t..]) {
                *d -= lk * c;
            }
        }
    }
    let condition = (dmax / dmin).powi(2);
    if condition > MAX_DIVISION_CONDITION {
        return Err(Error::SingularDivision { condition });
    }
    Ok(())
}

/// Overwrite `b` with `(L Lᵀ)⁻¹ b`.
fn cholesky_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for j in 0..p {
        let col = &l[j * p + j..(j + 1) * p];
        let y = b[j] * col[0];
        b[j] = y;
        for (bi, v) in b[j + 1..p].iter_mut().zip(&col[1..]) {
            *bi -= y * v;
        }
    }
    for i in (0..p).rev() {
        let col = &l[i * p + i..(i + 1) * p];
        let s: f64 = col[1..].iter().zip(&b[i + 1..p]).map(|(v, x)| v * x).sum();
        b[i] = (b[i] - s) * col[0];
    }
}

/// Per-node Galerkin division warm-started from the previous stage and
/// refined against a lagged Cholesky factor, refactoring when refinement
/// stalls. Every returned reciprocal satisfies `|q∘r - e₀|∞ ≤ REFINE_TOL`.
struct Division {
    p: usize,
    factors: Vec<f64>,
    r: Vec<f64>,
    ready: Vec<bool>,
    t: Vec<f64>,
    c: Vec<f64>,
    refactors: usize,
}

const REFINE_TOL: f64 = 1e-13;
const MAX_REFINE: usize = 3;
const STALE_CONTRACTION: f64 = 1e-4;

impl Division {
    fn new(n: usize, p: usize) -> Self {
        Self {
            p,
            factors: vec![0.0; n * p * p],
            r: vec![0.0; n * p],
            ready: vec![false; n],
            t: vec![0.0; p],
            c: vec![0.0; p],
            refactors: 0,
        }
    }

    fn reciprocal(&mut self, node: usize, q: &[f64], product: &GalerkinProduct) -> Result<&[f64]> {
        let p = self.p;
        let l = &mut self.factors[node * p * p..(node + 1) * p * p];
        let r = &mut self.r[node * p..(node + 1) * p];
        if self.ready[node] {
            let norms = product.norms();
            let mut last = f64::INFINITY;
            for _ in 0..MAX_REFINE {
                product.multiply_into(q, r, &mut self.t);
                let mut err = 0.0f64;
                for k in 0..p {
                    let d = if k == 0 { 1.0 } else { 0.0 } - self.t[k];
                    err = err.max(d.abs());
                    self.c[k] = d * norms[k];
                }
                if err <= REFINE_TOL {
                    return Ok(r);
                }
                // A stale factor contracts slowly; refactor instead.
                if err > STALE_CONTRACTION * last {
                    break;
                }
                last = err;
                cholesky_solve(l, p, &mut self.c);
                for (x, d) in r.iter_mut().zip(&self.c) {
                    *x += d;
                }
            }
        }
        reciprocal_into(q, product, l, r)?;
        self.ready[node] = true;
        self.refactors += 1;
        Ok(r)
    }
}

/// Converged chaos coefficients of the conserved variables, `q[(3 i + v) P + p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticState {
    pub x: Vec<f64>,
    pub basis: ChaosBasis,
    pub area: GpcField,
    pub q: Vec<f64>,
    pub steps: usize,
    pub residual: f64,
    pub mean_residual: f64,
}

impl StochasticState {
    pub fn coefficients(&self, node: usize, var: usize) -> &[f64] {
        let p = self.basis.len();
        let o = (3 * node + var) * p;
        &self.q[o..o + p]
    }
}

struct ExactTensors {
    t4: MomentTensor,
    t6: MomentTensor,
    /// Galerkin reciprocal of the area per node.
    recip_area: Vec<Vec<f64>>,
}

struct Scratch {
    flux: Vec<f64>,
    source: Vec<f64>,
    division: Division,
    v: Vec<f64>,
    k: Vec<f64>,
    pa: Vec<f64>,
    tmp: Vec<f64>,
}

/// Stochastic Galerkin time-marching solver over the basis of the area field.
pub struct StochasticSolver {
    cfg: FlowConfig,
    area: GpcField,
    product: GalerkinProduct,
    /// `Â' ∘ recip(Â)` per node, `w[i P + p]`.
    w: Vec<f64>,
    exact: Option<ExactTensors>,
    q: Vec<f64>,
    prev_mean: Vec<f64>,
    rk: Rk4,
    scratch: Scratch,
    steps: usize,
    residual: f64,
    mean_residual: f64,
}

impl StochasticSolver {
    pub fn new(area: &GpcField, cfg: &FlowConfig, mode: ProductMode) -> Result<Self> {
        let product = GalerkinProduct::new(&area.basis)?;
        Self::with_product(area, cfg, mode, product)
    }

    /// Reuse a prebuilt pairwise product over `area.basis`.
    pub fn with_product(
        area: &GpcField,
        cfg: &FlowConfig,
        mode: ProductMode,
        product: GalerkinProduct,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_points();
        let p = area.basis.len();
        if area.x.len() != n || area.coeffs.len() != n || area.slope.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: area.x.len(),
            });
        }
        if product.size() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: product.size(),
            });
        }
        let grid = cfg.grid();
        if let Some(i) = (0..n).find(|&i| (area.x[i] - grid[i]).abs() > 1e-12) {
            return Err(Error::invalid(format!(
                "area field node {i} at x = {} does not match the flow grid",
                area.x[i]
            )));
        }
        for (i, (c, s)) in area.coeffs.iter().zip(&area.slope).enumerate() {
            if c.len() != p || s.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: c.len().min(s.len()),
                });
            }
            if !(c[0] > 0.0) || c.iter().chain(s).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "area mean must be positive and finite at node {i}"
                )));
            }
        }

        let mut m = vec![0.0; p * p];
        let mut ra = vec![0.0; p];
        let mut w = vec![0.0; n * p];
        let mut recip_area = Vec::with_capacity(n);
        for i in 0..n {
            reciprocal_into(&area.coeffs[i], &product, &mut m, &mut ra)?;
            product.multiply_into(&area.slope[i], &ra, &mut w[i * p..(i + 1) * p]);
            recip_area.push(ra.clone());
        }
        let exact = match mode {
            ProductMode::Pairwise => None,
            ProductMode::Exact => Some(ExactTensors {
                t4: moment_tensor(&area.basis, 4)?,
                t6: moment_tensor(&area.basis, 6)?,
                recip_area,
            }),
        };

        // Deterministic inflow state times Â.
        let inflow = cfg.inflow();
        let e = inflow.energy_density(cfg.gamma);
        let mut q = vec![0.0; 3 * n * p];
        for i in 0..n {
            for (var, scale) in [inflow.rho, inflow.rho * inflow.v, e]
                .into_iter()
                .enumerate()
            {
                let o = (3 * i + var) * p;
                for (dst, a) in q[o..o + p].iter_mut().zip(&area.coeffs[i]) {
                    *dst = scale * a;
                }
            }
        }
        let prev_mean = (0..3 * n).map(|j| q[j * p]).collect();
        Ok(Self {
            cfg: *cfg,
            area: area.clone(),
            product,
            w,
            exact,
            q,
            prev_mean,
            rk: Rk4::new(3 * n * p),
            scratch: Scratch {
                flux: vec![0.0; 3 * n * p],
                source: vec![0.0; n * p],
                division: Division::new(n, p),
                v: vec![0.0; p],
                k: vec![0.0; p],
                pa: vec![0.0; p],
                tmp: vec![0.0; p],
            },
            steps: 0,
            residual: f64::INFINITY,
            mean_residual: f64::INFINITY,
        })
    }

    /// Cholesky refactorizations performed by the Galerkin division so far.
    pub fn refactorizations(&self) -> usize {
        self.scratch.division.refactors
    }

    pub fn basis_size(&self) -> usize {
        self.product.size()
    }

    pub fn state(&self) -> &[f64] {
        &self.q
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One RK4 step; returns `max |ΔQ̂| / Δt` over every coefficient.
    pub fn step(&mut self) -> Result<f64> {
        let Self {
            cfg,
            area,
            product,
            w,
            exact,
            q,
            rk,
            scratch,
            ..
        } = self;
        let p = product.size();
        let n = area.x.len();
        let gm1 = cfg.gamma - 1.0;
        let gamma = cfg.gamma;
        let inv2dx = 0.5 / cfg.dx;
        let c4 = cfg.eps4 * cfg.wave_speed() / cfg.dx;
        let norms = area.basis.norms();
        let res = rk.step(q, cfg.dt, |q, out| {
            let Scratch {
                flux,
                source,
                division,
                v,
                k,
                pa,
                tmp,
            } = scratch;
            for i in 0..n {
                let base = 3 * i * p;
                let q1 = &q[base..base + p];
                let q2 = &q[base + p..base + 2 * p];
                let q3 = &q[base + 2 * p..base + 3 * p];
                let r = division.reciprocal(i, q1, product)?;
                let f = &mut flux[base..base + 3 * p];
                let g = &mut source[i * p..(i + 1) * p];
                match exact {
                    None => {
                        product.multiply_into(q2, r, v);
                        product.multiply_into(q2, v, k);
                        for j in 0..p {
                            pa[j] = gm1 * (q3[j] - 0.5 * k[j]);
                            f[j] = q2[j];
                            f[p + j] = k[j] + pa[j];
                            tmp[j] = q3[j] + pa[j];
                        }
                        product.multiply_into(tmp, v, &mut f[2 * p..]);
                        product.multiply_into(pa, &w[i * p..(i + 1) * p], g);
                    }
                    Some(t) => {
                        let kk = t.t4.contract(&[q2, q2, r], norms)?;
                        let qv = t.t4.contract(&[q3, q2, r], norms)?;
                        let kv = t.t6.contract(&[q2, q2, q2, r, r], norms)?;
                        let slope = &area.slope[i];
                        let ra = &t.recip_area[i];
                        let ew = t.t4.contract(&[q3, slope, ra], norms)?;
                        let kw = t.t6.contract(&[q2, q2, r, slope, ra], norms)?;
                        for j in 0..p {
                            let pj = gm1 * (q3[j] - 0.5 * kk[j]);
                            f[j] = q2[j];
                            f[p + j] = kk[j] + pj;
                            f[2 * p + j] = gamma * qv[j] - 0.5 * gm1 * kv[j];
                            g[j] = gm1 * (ew[j] - 0.5 * kw[j]);
                        }
                    }
                }
            }
            out[..3 * p].iter_mut().for_each(|o| *o = 0.0);
            let b = 3 * p;
            for i in 1..n - 1 {
                let dst = &mut out[i * b..(i + 1) * b];
                let (left, right) = (&flux[(i - 1) * b..i * b], &flux[(i + 1) * b..(i + 2) * b]);
                for ((d, l), r) in dst.iter_mut().zip(left).zip(right) {
                    *d = -(r - l) * inv2dx;
                }
                if c4 != 0.0 {
                    subtract_dissipation(q, i, n, c4, dst);
                }
                for (d, g) in dst[p..2 * p].iter_mut().zip(&source[i * p..(i + 1) * p]) {
                    *d += g;
                }
            }
            for var in 0..3 {
                let f = |j: usize| &flux[(3 * j + var) * p..(3 * j + var + 1) * p];
                let (a, b, c) = (f(n - 1), f(n - 2), f(n - 3));
                let o = (3 * (n - 1) + var) * p;
                for j in 0..p {
                    out[o + j] = -(3.0 * a[j] - 4.0 * b[j] + c[j]) * inv2dx;
                }
            }
            let o = (3 * (n - 1) + 1) * p;
            for j in 0..p {
                out[o + j] += source[(n - 1) * p + j];
            }
            Ok(())
        })?;
        self.steps += 1;
        self.residual = res;
        let mut mean_res = 0.0f64;
        for (j, prev) in self.prev_mean.iter_mut().enumerate() {
            let now = self.q[j * p];
            mean_res = mean_res.max((now - *prev).abs());
            *prev = now;
        }
        self.mean_residual = mean_res / self.cfg.dt;
        self.check_physical()?;
        Ok(res)
    }

    fn check_physical(&self) -> Result<()> {
        if !self.residual.is_finite() {
            return Err(Error::BlowUp {
                step: self.steps,
                reason: "non-finite state".into(),
            });
        }
        let p = self.product.size();
        let gm1 = self.cfg.gamma - 1.0;
        for i in 0..self.area.x.len() {
            let c = |var: usize| self.q[(3 * i + var) * p];
            let pressure = gm1 * (c(2) - 0.5 * c(1) * c(1) / c(0));
            if !(c(0) > 0.0) || !(pressure > 0.0) {
                return Err(Error::BlowUp {
                    step: self.steps,
                    reason: format!("non-positive mean density or pressure at node {i}"),
                });
            }
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<StochasticState> {
        while self.steps < self.cfg.max_steps {
            let res = self.step()?;
            if res < self.cfg.steady_tol && self.mean_residual < self.cfg.steady_tol {
                return Ok(self.into_state());
            }
        }
        Err(Error::NotConverged {
            steps: self.steps,
            residual: self.residual,
        })
    }

    pub fn into_state(self) -> StochasticState {
        StochasticState {
            x: self.area.x.clone(),
            basis: self.area.basis.clone(),
            area: self.area,
            q: self.q,
            steps: self.steps,
            residual: self.residual,
            mean_residual: self.mean_residual,
        }
    }
}

/// March the stochastic Galerkin system to steady state.
pub fn stochastic_solve(
    area: &GpcField,
    cfg: &FlowConfig,
    mode: ProductMode,
) -> Result<StochasticState> {
    StochasticSolver::new(area, cfg, mode)?.run()
}

/// Normalised response chaos coefficients at selected nodes, `[node][p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCoefficients {
    pub x: Vec<f64>,
    pub basis: ChaosBasis,
    pub density: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
    pub pressure: Vec<Vec<f64>>,
    pub temperature: Vec<Vec<f64>>,
}

impl ResponseCoefficients {
    pub fn get(&self, r: Response) -> &[Vec<f64>] {
        match r {
            Response::Density => &self.density,
            Response::Velocity => &self.velocity,
            Response::Pressure => &self.pressure,
            Response::Temperature => &self.temperature,
        }
    }

    pub fn get_mut(&mut self, r: Response) -> &mut [Vec<f64>] {
        match r {
            Response::Density => &mut self.density,
            Response::Velocity => &mut self.velocity,
            Response::Pressure => &mut self.pressure,
            Response::Temperature => &mut self.temperature,
        }
    }

    pub fn mean(&self, r: Response) -> Vec<f64> {
        self.get(r).iter().map(|c| c[0]).collect()
    }

    pub fn variance(&self, r: Response) -> Vec<f64> {
        self.get(r).iter().map(|c| self.basis.variance(c)).collect()
    }

    /// Columns `x`, then `<response>_<p>` for every response and chaos term.
    pub fn write_csv(&self, w: impl Write, config_hash: Option<&str>) -> Result<()> {
        let mut w = w;
        if let Some(h) = config_hash {
            writeln!(w, "# config_hash={h}").map_err(|e| Error::Io {
                path: "<csv>".into(),
                source: e,
            })?;
        }
        let mut out = csv::Writer::from_writer(w);
        let p = self.basis.len();
        let mut header = vec!["x".to_string()];
        for r in Response::ALL {
            header.extend((0..p).map(|j| format!("{}_{j}", r.name())));
        }
        out.write_record(&header)?;
        for (node, x) in self.x.iter().enumerate() {
            let mut row = vec![x.to_string()];
            for r in Response::ALL {
                row.extend(self.get(r)[node].iter().map(|c| c.to_string()));
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

/// Response coefficients at the grid nodes nearest to `locations`.
pub fn extract_responses(
    state: &StochasticState,
    cfg: &FlowConfig,
    locations: &[f64],
) -> Result<ResponseCoefficients> {
    let p = state.basis.len();
    let product = GalerkinProduct::new(&state.basis)?;
    let inflow = cfg.inflow();
    let gm1 = cfg.gamma - 1.0;
    let mut m = vec![0.0; p * p];
    let mut r = vec![0.0; p];
    let mut ra = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut k = vec![0.0; p];
    let mut out = ResponseCoefficients {
        x: Vec::with_capacity(locations.len()),
        basis: state.basis.clone(),
        density: Vec::new(),
        velocity: Vec::new(),
        pressure: Vec::new(),
        temperature: Vec::new(),
    };
    for &x in locations {
        if !(x >= state.x[0] && x <= state.x[state.x.len() - 1]) {
            return Err(Error::invalid(format!(
                "location {x} lies outside the grid"
            )));
        }
        let i = nearest_node(&state.x, x);
        let (q1, q2, q3) = (
            state.coefficients(i, 0),
            state.coefficients(i, 1),
            state.coefficients(i, 2),
        );
        reciprocal_into(q1, &product, &mut m, &mut r)?;
        reciprocal_into(&state.area.coeffs[i], &product, &mut m, &mut ra)?;
        product.multiply_into(q2, &r, &mut v);
        product.multiply_into(q2, &v, &mut k);
        let pa: Vec<f64> = q3
            .iter()
            .zip(&k)
            .map(|(e, k)| gm1 * (e - 0.5 * k))
            .collect();
        let mut rho = product.multiply(q1, &ra);
        let mut pressure = product.multiply(&pa, &ra);
        let mut temp = product.multiply(&pa, &r);
        rho.iter_mut().for_each(|c| *c /= inflow.rho);
        v.iter_mut().for_each(|c| *c /= inflow.v);
        pressure.iter_mut().for_each(|c| *c /= inflow.p);
        temp.iter_mut().for_each(|c| *c /= inflow.temperature());
        out.x.push(state.x[i]);
        out.density.push(rho);
        out.velocity.push(v.clone());
        out.pressure.push(pressure);
        out.temperature.push(temp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{deterministic_solve, DeterministicSolver};
    use super::*;
    use crate::chaos::{gauss_rule, hermite_values, RuleKind};
    use crate::random_field::Polynomial;

    fn area_field(
        cfg: &FlowConfig,
        basis: &ChaosBasis,
        mean: &Polynomial,
        modes: &[(usize, Polynomial)],
    ) -> GpcField {
        let x = cfg.grid();
        let p = basis.len();
        let mut coeffs = vec![vec![0.0; p]; x.len()];
        let mut slope = vec![vec![0.0; p]; x.len()];
        for (g, &xg) in x.iter().enumerate() {
            coeffs[g][0] = mean.value(xg);
            slope[g][0] = mean.derivative(xg);
            for (term, poly) in modes {
                coeffs[g][*term] = poly.value(xg);
                slope[g][*term] = poly.derivative(xg);
            }
        }
        GpcField {
            x,
            basis: basis.clone(),
            coeffs,
            slope,
        }
    }

    fn divergent() -> Polynomial {
        Polynomial::new(vec![1.0, 0.0, 0.8])
    }

    #[test]
    fn reciprocal_of_constant_is_exact() {
        let basis = ChaosBasis::new(3, 2).unwrap();
        let prod = GalerkinProduct::new(&basis).unwrap();
        let mut q = vec![0.0; basis.len()];
        q[0] = 2.5;
        let r = galerkin_reciprocal(&q, &prod).unwrap();
        assert!((r[0] - 0.4).abs() < 1e-15);
        assert!(r[1..].iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn reciprocal_times_input_is_one() {
        let basis = ChaosBasis::new(4, 3).unwrap();
        let prod = GalerkinProduct::new(&basis).unwrap();
        let q: Vec<f64> = (0..basis.len())
            .map(|i| {
                if i == 0 {
                    1.3
                } else {
                    0.04 * ((i * 7 % 11) as f64 - 5.0) / 5.0
                }
            })
            .collect();
        let mut m = vec![0.0; q.len() * q.len()];
        let mut r = vec![0.0; q.len()];
        reciprocal_into(&q, &prod, &mut m, &mut r).unwrap();
        let one = prod.multiply(&q, &r);
        let err: f64 = one
            .iter()
            .enumerate()
            .map(|(i, c)| (c - if i == 0 { 1.0 } else { 0.0 }).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-8, "{err}");
        // Linear-system residual.
        prod.multiplication_matrix_into(&q, &mut m);
        let n = q.len();
        for k in 0..n {
            let row: f64 = (0..n).map(|p| m[k * n + p] * r[p]).sum();
            let rhs = if k == 0 { 1.0 } else { 0.0 };
            assert!((row - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn reciprocal_matches_pseudo_spectral_projection() {
        let basis = ChaosBasis::new(1, 2).unwrap();
        let prod = GalerkinProduct::new(&basis).unwrap();
        let r = galerkin_reciprocal(&[1.0, 0.1, 0.0], &prod).unwrap();
        let rule = gauss_rule(RuleKind::Hermite, 40).unwrap();
        for (k, rk) in r.iter().enumerate() {
            let oracle =
                rule.integrate(|x| hermite_values(x, 2)[k] / (1.0 + 0.1 * x)) / basis.norms()[k];
            assert!((rk - oracle).abs() < 1e-3, "term {k}: {rk} vs {oracle}");
        }
    }

    #[test]
    fn singular_division_is_reported() {
        let basis = ChaosBasis::new(1, 3).unwrap();
        let prod = GalerkinProduct::new(&basis).unwrap();
        assert!(matches!(
            galerkin_reciprocal(&[0.0, 1.0, 0.0, 0.0], &prod),
            Err(Error::SingularDivision { .. })
        ));
        assert!(matches!(
            galerkin_reciprocal(&[1.0, 3.0, 0.0, 0.0], &prod),
            Err(Error::SingularDivision { .. })
        ));
    }

    #[test]
    fn zero_variance_area_tracks_deterministic_solver_every_step() {
        let cfg = FlowConfig::default();
        let basis = ChaosBasis::new(2, 2).unwrap();
        let p = basis.len();
        let field = area_field(&cfg, &basis, &divergent(), &[]);
        let mut det = DeterministicSolver::new(
            &field.mean(),
            &field.slope.iter().map(|s| s[0]).collect::<Vec<_>>(),
            &cfg,
        )
        .unwrap();
        let mut sto = StochasticSolver::new(&field, &cfg, ProductMode::Pairwise).unwrap();
        for step in 0..400 {
            det.step().unwrap();
            sto.step().unwrap();
            for (j, d) in det.state().iter().enumerate() {
                let s = &sto.state()[j * p..(j + 1) * p];
                assert!(
                    (s[0] - d).abs() <= 1e-12 * d.abs().max(1.0),
                    "step {step}, entry {j}"
                );
                assert!(s[1..].iter().all(|c| c.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn zero_variance_responses_equal_deterministic() {
        let cfg = FlowConfig::default();
        let basis = ChaosBasis::new(2, 1).unwrap();
        let field = area_field(&cfg, &basis, &divergent(), &[]);
        let state = stochastic_solve(&field, &cfg, ProductMode::Pairwise).unwrap();
        let det = deterministic_solve(
            &field.mean(),
            &field.slope.iter().map(|s| s[0]).collect::<Vec<_>>(),
            &cfg,
        )
        .unwrap();
        let grid = cfg.grid();
        let resp = extract_responses(&state, &cfg, &grid).unwrap();
        for r in Response::ALL {
            for (i, c) in resp.get(r).iter().enumerate() {
                assert!(
                    (c[0] - det.responses.get(r)[i]).abs() < 1e-9,
                    "{r:?} at {i}"
                );
                assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
            }
        }
        assert!(resp.velocity[100][0] > resp.velocity[0][0]);
    }

    #[test]
    fn exact_and_pairwise_products_agree_for_small_spread() {
        let cfg = FlowConfig::default();
        let basis = ChaosBasis::new(2, 2).unwrap();
        let field = area_field(
            &cfg,
            &basis,
            &divergent(),
            &[
                (1, Polynomial::new(vec![0.0, 0.02, 0.03])),
                (2, Polynomial::new(vec![0.0, -0.01, 0.0, 0.02])),
            ],
        );
        let a = stochastic_solve(&field, &cfg, ProductMode::Pairwise).unwrap();
        let b = stochastic_solve(&field, &cfg, ProductMode::Exact).unwrap();
        let locs = [0.15, 0.55, 0.95];
        let ra = extract_responses(&a, &cfg, &locs).unwrap();
        let rb = extract_responses(&b, &cfg, &locs).unwrap();
        for r in Response::ALL {
            let (ma, mb) = (ra.mean(r), rb.mean(r));
            let (va, vb) = (ra.variance(r), rb.variance(r));
            for i in 0..locs.len() {
                assert!((ma[i] - mb[i]).abs() < 1e-4 * mb[i].abs(), "{r:?} mean");
                assert!(
                    (va[i] - vb[i]).abs() < 2e-2 * vb[i] + 1e-12,
                    "{r:?} var {} vs {}",
                    va[i],
                    vb[i]
                );
            }
        }
    }

    #[test]
    fn csv_has_one_column_per_response_and_mode() {
        let cfg = FlowConfig::default();
        let basis = ChaosBasis::new(1, 1).unwrap();
        let field = area_field(
            &cfg,
            &basis,
            &divergent(),
            &[(1, Polynomial::new(vec![0.0, 0.0, 0.02]))],
        );
        let state = stochastic_solve(&field, &cfg, ProductMode::Pairwise).unwrap();
        let resp = extract_responses(&state, &cfg, &[0.25, 0.75]).unwrap();
        let mut buf = Vec::new();
        resp.write_csv(&mut buf, Some("abc")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_hash=abc");
        assert_eq!(
            lines[1],
            "x,density_0,density_1,velocity_0,velocity_1,pressure_0,pressure_1,temperature_0,temperature_1"
        );
        assert_eq!(lines.len(), 4);
        assert!(extract_responses(&state, &cfg, &[1.5]).is_err());
    }
}
