use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// DDPM noise schedule. Steps are numbered `1..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!("bad schedule: {steps} steps, betas {beta_start}..{beta_end}")));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(DiffusionSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bars[t - 2]
        }
    }

    /// `√ᾱ_t z₀ + √(1-ᾱ_t) n`.
    pub fn noisy(&self, z0: &[f64], t: usize, noise: &[f64]) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        z0.iter().zip(noise).map(|(z, n)| a * z + b * n).collect()
    }

    /// Clean latent implied by a noise prediction.
    pub fn z0_from_noise(&self, z_t: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        z_t.iter()
            .zip(eps)
            .map(|(z, e)| (z - (1.0 - ab).sqrt() * e) / ab.sqrt())
            .collect()
    }

    /// Mean and variance of `q(z_{t-1} | z_t, z₀)`.
    pub fn posterior(&self, z0: &[f64], z_t: &[f64], t: usize) -> (Vec<f64>, f64) {
        let (b, ab, abp) = (self.beta(t), self.alpha_bar(t), self.alpha_bar_prev(t));
        let c0 = abp.sqrt() * b / (1.0 - ab);
        let ct = (1.0 - b).sqrt() * (1.0 - abp) / (1.0 - ab);
        let mean = z0.iter().zip(z_t).map(|(a, c)| c0 * a + ct * c).collect();
        (mean, b * (1.0 - abp) / (1.0 - ab))
    }
}
