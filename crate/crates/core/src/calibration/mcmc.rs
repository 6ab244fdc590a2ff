use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::stats::rng_for;
use crate::{Error, Result};

/// Draws per window used for step adaptation and stall detection.
const WINDOW: usize = 100;
const STALL_WINDOW: usize = 1000;
const TARGET_ACCEPT: (f64, f64) = (0.2, 0.4);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    /// Retained draws.
    pub n_samples: usize,
    /// Discarded leading draws; adaptation, when enabled, happens only here.
    pub n_burn: usize,
    pub step: f64,
    pub seed: u64,
    pub adapt: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            n_burn: 1_000,
            step: 0.1,
            seed: 0,
            adapt: true,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!(
                "proposal step must be positive, got {}",
                self.step
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config(
                "at least one retained sample is required".into(),
            ));
        }
        Ok(())
    }
}

/// Retained Metropolis-Hastings draws, one row of `dim` germ components each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub dim: usize,
    pub samples: Vec<f64>,
    pub log_post: Vec<f64>,
    /// Accepted proposals among the retained draws.
    pub accepted: usize,
    /// Proposal step after adaptation.
    pub step: f64,
    pub seed: u64,
    /// Windows of 1000 consecutive draws without a single acceptance.
    pub stalled_windows: usize,
    /// Proposals whose log-posterior was `-∞` or NaN.
    pub invalid: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.log_post.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_post.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.samples.chunks_exact(self.dim)
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.iter().map(|s| s[d]).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.len() as f64
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for s in self.iter() {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.len() as f64);
        m
    }

    /// One row per draw: germ components then the log-posterior.
    pub fn write_csv(&self, w: impl Write, config_hash: Option<&str>) -> Result<()> {
        let mut w = w;
        if let Some(h) = config_hash {
            writeln!(w, "# config_hash={h}").map_err(|e| Error::Io {
                path: "<chain>".into(),
                source: e,
            })?;
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|d| format!("xi_{d}")).collect();
        header.push("log_posterior".into());
        out.write_record(&header)?;
        for (s, lp) in self.iter().zip(&self.log_post) {
            let mut row: Vec<String> = s.iter().map(|v| v.to_string()).collect();
            row.push(lp.to_string());
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::Io {
            path: "<chain>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Gaussian random-walk Metropolis-Hastings from `start`.
///
/// Every proposal consumes the same random draws whatever its outcome, so a
/// constant shift of the log-posterior reproduces the chain exactly.
pub fn metropolis_hastings(
    mut log_post: impl FnMut(&[f64]) -> Result<f64>,
    start: &[f64],
    settings: &McmcSettings,
) -> Result<Chain> {
    settings.validate()?;
    let dim = start.len();
    let mut rng = rng_for(settings.seed, "mcmc");
    let mut x = start.to_vec();
    let mut lp = log_post(&x)?;
    if !lp.is_finite() {
        return Err(Error::invalid(
            "log-posterior is not finite at the starting point",
        ));
    }
    let mut step = settings.step;
    let mut chain = Chain {
        dim,
        samples: Vec::with_capacity(settings.n_samples * dim),
        log_post: Vec::with_capacity(settings.n_samples),
        accepted: 0,
        step,
        seed: settings.seed,
        stalled_windows: 0,
        invalid: 0,
    };
    let mut proposal = vec![0.0; dim];
    let (mut window_acc, mut stall_acc) = (0usize, 0usize);
    for t in 0..settings.n_burn + settings.n_samples {
        for (p, c) in proposal.iter_mut().zip(&x) {
            let z: f64 = rng.sample(StandardNormal);
            *p = c + step * z;
        }
        let u: f64 = rng.random();
        let mut lp_new = log_post(&proposal)?;
        if lp_new.is_nan() || lp_new == f64::NEG_INFINITY {
            chain.invalid += 1;
            lp_new = f64::NEG_INFINITY;
        }
        let accept = lp_new - lp >= u.ln();
        if accept {
            x.copy_from_slice(&proposal);
            lp = lp_new;
            window_acc += 1;
            stall_acc += 1;
        }
        let retained = t >= settings.n_burn;
        if retained {
            chain.samples.extend_from_slice(&x);
            chain.log_post.push(lp);
            chain.accepted += usize::from(accept);
        }
        if (t + 1) % WINDOW == 0 {
            if settings.adapt && !retained {
                let rate = window_acc as f64 / WINDOW as f64;
                if rate < TARGET_ACCEPT.0 {
                    step *= 0.7;
                } else if rate > TARGET_ACCEPT.1 {
                    step *= 1.3;
                }
            }
            window_acc = 0;
        }
        if (t + 1) % STALL_WINDOW == 0 {
            if stall_acc == 0 {
                chain.stalled_windows += 1;
            }
            stall_acc = 0;
        }
    }
    chain.step = step;
    Ok(chain)
}
