//! Articulation transformer: tree tokens in, one child per open token per
//! round out, conditioned on text through cross-attention.

mod config;
mod decode;
mod model;
mod rounds;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{ArtConfig, ArtTrainConfig};
pub use decode::{
    edit, iterative_decode, prune, tidy_child, Decision, DecodeLimits, Decoded, Outcome, PartSampler, RoundModel,
    RoundTrace,
};
pub use model::{node_attributes, ArtFormer, Episode, LossTerms, TokenPrediction, TokenTargets, GEOMETRY_ATTRS, MOTION_FLAGS};
pub use rounds::{emission_rounds, ordered_children, teacher_forcing_rounds, Round, Target};
pub use train::{batch_loss, evaluate, examples, train_artformer, ArtStepLog, Example};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "artkit-artformer/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    config: ArtConfig,
    d_z: usize,
    c_s: usize,
    codebook_rows: usize,
    prior_sha256: String,
}

impl ArtFormer {
    pub fn limits(&self) -> DecodeLimits {
        DecodeLimits {
            max_rounds: self.cfg.max_rounds,
            max_nodes: self.cfg.max_nodes,
        }
    }

    /// Saves weights stamped with the hash of the prior they were trained
    /// against.
    pub fn save(&self, path: &Path, prior_sha256: &str) -> Result<()> {
        let meta = serde_json::to_value(Meta {
            format: CHECKPOINT_FORMAT.into(),
            config: self.cfg.clone(),
            d_z: self.d_z,
            c_s: self.c_s,
            codebook_rows: self.codebook_rows,
            prior_sha256: prior_sha256.into(),
        })?;
        let mut bytes = Vec::new();
        artkit_tensor::write_checkpoint(&mut bytes, &self.store, &meta)?;
        crate::io::write_atomic(path, &bytes)
    }

    /// Loads weights and the prior hash they were stamped with.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        if !path.exists() {
            return Err(Error::Missing {
                what: "artformer checkpoint",
                path: path.to_path_buf(),
                producer: "artformer train",
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
        let mut model = ArtFormer::new(&meta.config, meta.d_z, meta.c_s, meta.codebook_rows, 0)?;
        model.store.load_from(&ckpt.params)?;
        Ok((model, meta.prior_sha256))
    }
}
