//! Part shape prior: a tri-plane SDF VAE, geometry and semantic condition
//! encoders, Gumbel-Softmax codebooks, and a conditional latent denoiser.

mod config;
mod model;
mod schedule;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{Prediction, PriorConfig, PriorTrainConfig, TABLES};
pub use model::{combine_rows, label_ids, PartSample, QuantizeMode, ShapePrior, VaeBatch};
pub use schedule::DiffusionSchedule;
pub use train::{
    latent_scale, raw_latents, refresh_labels, train_diffusion, train_prior, train_vae, vae_batch, PartRecord,
    StepLog, TRAIN_MESH_RES,
};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "artkit-prior/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    config: PriorConfig,
    latent_scale: f64,
    labels: BTreeMap<String, Vec<f64>>,
}

impl ShapePrior {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(Meta {
            format: CHECKPOINT_FORMAT.into(),
            config: self.cfg.clone(),
            latent_scale: self.latent_scale,
            labels: self.labels.clone(),
        })?;
        let mut bytes = Vec::new();
        artkit_tensor::write_checkpoint(&mut bytes, &self.store, &meta)?;
        crate::io::write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing {
                what: "prior checkpoint",
                path: path.to_path_buf(),
                producer: "prior train",
            });
        }
        let ckpt = artkit_tensor::load_checkpoint(path)?;
        let meta: Meta = serde_json::from_value(ckpt.meta).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: format!("checkpoint metadata: {e}"),
        })?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse {
                path: path.display().to_string(),
                msg: format!("expected format {CHECKPOINT_FORMAT}, found {}", meta.format),
            });
        }
        let mut prior = ShapePrior::new(&meta.config, 0)?;
        prior.store.load_from(&ckpt.params)?;
        prior.latent_scale = meta.latent_scale;
        prior.labels = meta.labels;
        Ok(prior)
    }
}
