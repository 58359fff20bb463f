use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of codebook tables; `c_g` is split into this many chunks.
pub const TABLES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    /// The denoiser predicts the clean latent.
    Z0,
    /// The denoiser predicts the added noise.
    Epsilon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub d_z: usize,
    /// Tri-plane channels and resolution.
    pub channels: usize,
    pub res: usize,
    pub point_hidden: usize,
    pub vae_hidden: usize,
    pub sdf_hidden: usize,
    /// Surface points per part cloud and supervised queries per part.
    pub points: usize,
    pub queries: usize,
    /// Std of the Gaussian jitter of near-surface queries (frame units).
    pub jitter: f64,
    pub kl_weight: f64,
    pub c_g: usize,
    pub c_s: usize,
    pub codebook_rows: usize,
    pub tau: f64,
    pub encoder_hidden: usize,
    pub label_buckets: usize,
    pub label_dim: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub prediction: Prediction,
    pub denoiser_dim: usize,
    pub denoiser_blocks: usize,
    pub denoiser_heads: usize,
}

impl PriorConfig {
    pub fn desk() -> Self {
        // Linear betas from 1e-4 to 0.02 are tuned for 1000 steps; with 100
        // steps they are scaled by 10 so the final latent is still noise.
        PriorConfig {
            d_z: 32,
            channels: 8,
            res: 16,
            point_hidden: 32,
            vae_hidden: 64,
            sdf_hidden: 64,
            points: 512,
            queries: 2048,
            jitter: 0.03,
            kl_weight: 1e-3,
            c_g: 64,
            c_s: 32,
            codebook_rows: 64,
            tau: 1.0,
            encoder_hidden: 64,
            label_buckets: 1024,
            label_dim: 32,
            diffusion_steps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            prediction: Prediction::Z0,
            denoiser_dim: 64,
            denoiser_blocks: 4,
            denoiser_heads: 4,
        }
    }

    pub fn paper_scale() -> Self {
        PriorConfig {
            d_z: 768,
            channels: 256,
            res: 64,
            point_hidden: 256,
            vae_hidden: 512,
            sdf_hidden: 256,
            points: 4096,
            queries: 16_000,
            codebook_rows: 256,
            diffusion_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            denoiser_dim: 512,
            denoiser_heads: 8,
            ..PriorConfig::desk()
        }
    }

    pub fn chunk(&self) -> usize {
        self.c_g / TABLES
    }

    pub fn plane_cells(&self) -> usize {
        3 * self.res * self.res
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("prior: {m}")));
        if self.res < 4 {
            return bad("tri-plane resolution must be at least 4");
        }
        if self.c_g % TABLES != 0 {
            return bad("c_g must split into 4 equal chunks");
        }
        if self.d_z % TABLES != 0 {
            return bad("d_z must split into 4 denoiser tokens");
        }
        if self.codebook_rows < 2 {
            return bad("codebooks need at least 2 rows");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if self.diffusion_steps == 0 || !(0.0 < self.beta_start && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return bad("diffusion schedule needs 0 < beta_start <= beta_end < 1");
        }
        if self.denoiser_dim % self.denoiser_heads != 0 {
            return bad("denoiser width must divide by heads");
        }
        if self.points < 16 {
            return bad("clouds need at least 16 points");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorTrainConfig {
    pub vae_steps: usize,
    pub diffusion_steps: usize,
    /// Parts per VAE step and latents per diffusion step.
    pub vae_batch: usize,
    pub diffusion_batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub log_every: usize,
}

impl PriorTrainConfig {
    pub fn desk() -> Self {
        PriorTrainConfig {
            vae_steps: 1500,
            diffusion_steps: 2000,
            vae_batch: 4,
            diffusion_batch: 32,
            lr: 1e-3,
            weight_decay: 1e-4,
            log_every: 100,
        }
    }
}
