use crate::Result;

/// Classical four-stage Runge-Kutta stepper with reusable buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: Vec<f64>,
    stage: Vec<f64>,
    acc: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Self {
            k: vec![0.0; len],
            stage: vec![0.0; len],
            acc: vec![0.0; len],
        }
    }

    /// Advance `q` by `dt`; returns `max |Δq| / dt`.
    pub fn step(
        &mut self,
        q: &mut [f64],
        dt: f64,
        mut rhs: impl FnMut(&[f64], &mut [f64]) -> Result<()>,
    ) -> Result<f64> {
        let Self { k, stage, acc } = self;
        acc.copy_from_slice(q);
        let coeffs = [
            (0.5, 1.0 / 6.0),
            (0.5, 1.0 / 3.0),
            (1.0, 1.0 / 3.0),
            (0.0, 1.0 / 6.0),
        ];
        stage.copy_from_slice(q);
        for (s, &(next, weight)) in coeffs.iter().enumerate() {
            let input: &[f64] = if s == 0 { q } else { stage };
            rhs(input, k)?;
            for i in 0..q.len() {
                acc[i] += dt * weight * k[i];
                stage[i] = q[i] + dt * next * k[i];
            }
        }
        let mut res = 0.0f64;
        for i in 0..q.len() {
            let d = (acc[i] - q[i]).abs();
            // NaN must propagate into the residual.
            if d > res || d.is_nan() {
                res = d;
            }
            q[i] = acc[i];
        }
        Ok(res / dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Periodic central-difference advection operator `du/dt = -c δ₀u`.
    fn advection(u: &[f64], out: &mut [f64], c: f64, dx: f64) {
        let n = u.len();
        for i in 0..n {
            out[i] = -c * (u[(i + 1) % n] - u[(i + n - 1) % n]) / (2.0 * dx);
        }
    }

    fn profile(n: usize) -> (Vec<f64>, f64) {
        let dx = 1.0 / n as f64;
        let u = (0..n)
            .map(|i| {
                let x = i as f64 * dx;
                (2.0 * std::f64::consts::PI * x).sin()
                    + 0.3 * (4.0 * std::f64::consts::PI * x).cos()
            })
            .collect();
        (u, dx)
    }

    #[test]
    fn one_step_equals_fourth_order_taylor_polynomial() {
        let (u0, dx) = profile(64);
        let c = 1.3;
        let dt = 0.4 * dx;
        let mut u = u0.clone();
        Rk4::new(64)
            .step(&mut u, dt, |q, out| {
                advection(q, out, c, dx);
                Ok(())
            })
            .unwrap();
        // Σ_{k≤4} (dt L)^k / k! u0 by repeated application of L.
        let mut term = u0.clone();
        let mut taylor = u0.clone();
        let mut tmp = vec![0.0; 64];
        for k in 1..=4 {
            advection(&term, &mut tmp, c, dx);
            for i in 0..64 {
                term[i] = tmp[i] * dt / k as f64;
                taylor[i] += term[i];
            }
        }
        for i in 0..64 {
            assert!((u[i] - taylor[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn local_error_scales_as_dt_to_the_fifth() {
        let (u0, dx) = profile(32);
        let c = 1.0;
        // Reference: the semi-discrete exact solution via a long Taylor series.
        let exact = |dt: f64| {
            let mut term = u0.clone();
            let mut sum = u0.clone();
            let mut tmp = vec![0.0; 32];
            for k in 1..40 {
                advection(&term, &mut tmp, c, dx);
                for i in 0..32 {
                    term[i] = tmp[i] * dt / k as f64;
                    sum[i] += term[i];
                }
            }
            sum
        };
        let err = |dt: f64| {
            let mut u = u0.clone();
            Rk4::new(32)
                .step(&mut u, dt, |q, out| {
                    advection(q, out, c, dx);
                    Ok(())
                })
                .unwrap();
            let e = exact(dt);
            u.iter()
                .zip(&e)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.5 * dx), err(0.25 * dx));
        let ratio = e1 / e2;
        assert!((ratio - 32.0).abs() < 3.0, "ratio {ratio}");
    }

    #[test]
    fn residual_reports_nan() {
        let mut q = vec![1.0, 2.0];
        let r = Rk4::new(2)
            .step(&mut q, 0.1, |_, out| {
                out[0] = f64::NAN;
                out[1] = 0.0;
                Ok(())
            })
            .unwrap();
        assert!(r.is_nan());
    }
}
