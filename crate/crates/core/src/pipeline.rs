//! Named hyperparameter profiles and the glue between trained models and
//! evaluable objects.

use std::sync::Arc;

use artkit_tensor::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artformer::{iterative_decode, ArtConfig, ArtFormer, ArtTrainConfig, Decoded};
use crate::artic::ArticTree;
use crate::error::{Error, Result};
use crate::metrics::{EvalConfig, ObjectGeometry, PartGeometry};
use crate::prior::{PriorConfig, PriorTrainConfig, ShapePrior};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub dataset_count: usize,
    pub split: [f64; 3],
    pub prior: PriorConfig,
    pub prior_train: PriorTrainConfig,
    pub artformer: ArtConfig,
    pub artformer_train: ArtTrainConfig,
    pub eval: EvalConfig,
    /// Grid resolution for decoding generated part fields.
    pub decode_res: usize,
}

impl Profile {
    pub fn desk() -> Self {
        Profile {
            name: "desk".into(),
            dataset_count: 200,
            split: [0.8, 0.1, 0.1],
            prior: PriorConfig::desk(),
            prior_train: PriorTrainConfig::desk(),
            artformer: ArtConfig::desk(),
            artformer_train: ArtTrainConfig::desk(),
            eval: EvalConfig::default(),
            decode_res: 32,
        }
    }

    /// Full-size hyperparameters. Sizes only; nothing here is expected to
    /// train on a desktop.
    pub fn paper_scale() -> Self {
        Profile {
            name: "paper-scale".into(),
            prior: PriorConfig::paper_scale(),
            artformer: ArtConfig::paper_scale(),
            decode_res: 128,
            ..Profile::desk()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Profile::desk()),
            "paper-scale" => Ok(Profile::paper_scale()),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or paper-scale)"))),
        }
    }
}

/// Decodes every node latent to a part field.
pub fn generated_geometry(prior: &ShapePrior, name: &str, tree: &ArticTree, res: usize) -> Result<ObjectGeometry> {
    let parts = tree
        .nodes
        .par_iter()
        .map(|n| Ok(PartGeometry::Grid(Arc::new(prior.decode_field(&n.z, res)?))))
        .collect::<Result<Vec<_>>>()?;
    ObjectGeometry::new(name, tree.clone(), parts)
}

/// Text to articulated object.
pub fn generate(model: &ArtFormer, prior: &ShapePrior, text: &str, rng: &mut Rng) -> Result<Decoded> {
    if model.d_z != prior.cfg.d_z || model.c_s != prior.cfg.c_s || model.codebook_rows != prior.cfg.codebook_rows {
        return Err(Error::Config("artformer and prior dimensions differ".into()));
    }
    iterative_decode(model, prior, text, None, model.limits(), rng)
}
