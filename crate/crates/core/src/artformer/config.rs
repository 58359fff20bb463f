use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TextConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mapper_hidden: usize,
    /// Width of one ancestor summary and of the whole position embedding.
    pub a_dim: usize,
    pub p_dim: usize,
    pub text: TextConfig,
    pub beta_o: f64,
    pub beta_p: f64,
    /// A token is terminal when `sigmoid(o)` exceeds this.
    pub threshold: f64,
    pub max_rounds: usize,
    pub max_nodes: usize,
}

impl ArtConfig {
    pub fn desk() -> Self {
        ArtConfig {
            d_model: 128,
            blocks: 4,
            heads: 4,
            mapper_hidden: 128,
            a_dim: 16,
            p_dim: 256,
            text: TextConfig::default(),
            beta_o: 1.0,
            beta_p: 1.0,
            threshold: 0.5,
            max_rounds: 32,
            max_nodes: 16,
        }
    }

    pub fn paper_scale() -> Self {
        ArtConfig {
            d_model: 1024,
            blocks: 8,
            heads: 8,
            mapper_hidden: 1024,
            a_dim: 64,
            p_dim: 1024,
            text: TextConfig {
                dim: 512,
                heads: 8,
                ..TextConfig::default()
            },
            ..ArtConfig::desk()
        }
    }

    /// Ancestor slots in the position embedding.
    pub fn slots(&self) -> usize {
        self.p_dim / self.a_dim
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("artformer: {m}")));
        if self.a_dim == 0 || self.a_dim % 2 != 0 {
            return bad("a_dim must be even (two GRU directions)");
        }
        if self.p_dim % self.a_dim != 0 {
            return bad("p_dim must be a multiple of a_dim");
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must divide by heads");
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if self.max_rounds == 0 || self.max_nodes == 0 {
            return bad("max_rounds and max_nodes must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtTrainConfig {
    pub steps: usize,
    /// Objects per step; every round of each object is included.
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub log_every: usize,
}

impl ArtTrainConfig {
    pub fn desk() -> Self {
        ArtTrainConfig {
            steps: 2000,
            batch: 8,
            lr: 5e-4,
            weight_decay: 1e-2,
            log_every: 100,
        }
    }
}
