//! Per-part training targets derived from a trained shape prior: the
//! normalized latent `z`, the semantic condition `c_s` and the codebook
//! distance logits `D`.
//!
//! Each object gets a little-endian `f32` array file plus a JSON sidecar;
//! `cache.json` ties the set to the dataset and prior checkpoint hashes.

use std::collections::BTreeMap;
use std::path::Path;

use artkit_geometry::sample_surface;
use artkit_tensor::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, CorpusObject, GENERATOR_VERSION};
use crate::error::{Error, Result};
use crate::io::{hash_file, read, require_json, sha256_hex, to_json_bytes, write_atomic};
use crate::prior::{ShapePrior, TABLES, TRAIN_MESH_RES};

pub const CACHE_FORMAT: &str = "artkit-cache/1";

#[derive(Clone, Debug, PartialEq)]
pub struct PartTargets {
    pub z: Vec<f64>,
    pub c_s: Vec<f64>,
    /// `[4 × N]`, row-major by table.
    pub d: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartCaches {
    pub objects: BTreeMap<String, Vec<PartTargets>>,
}

impl PartCaches {
    pub fn get(&self, id: &str) -> Option<&[PartTargets]> {
        self.objects.get(id).map(Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub id: String,
    pub parts: usize,
    pub d_z: usize,
    pub c_s: usize,
    pub logits: usize,
    pub generator_version: String,
    pub prior_sha256: String,
    pub data_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheManifest {
    pub format: String,
    pub generator_version: String,
    pub dataset_sha256: String,
    pub prior_sha256: String,
    pub seed: u64,
    pub objects: Vec<String>,
}

/// Targets of every part of one object. Clouds are drawn from `rng`.
pub fn object_targets(prior: &ShapePrior, obj: &CorpusObject, rng: &mut Rng) -> Result<Vec<PartTargets>> {
    let clouds = obj
        .shapes
        .iter()
        .map(|s| Ok(sample_surface(&s.frame_mesh(TRAIN_MESH_RES)?, prior.cfg.points, rng)?))
        .collect::<Result<Vec<_>>>()?;
    let z = prior.encode_latents(&clouds)?;
    let labels: Vec<&str> = obj.tree.nodes.iter().map(|n| n.label.as_str()).collect();
    let c_s = prior.semantic_values(&labels)?;
    let d = prior.distance_values(&z)?;
    Ok(z
        .into_iter()
        .zip(c_s)
        .zip(d)
        .map(|((z, c_s), d)| PartTargets { z, c_s, d })
        .collect())
}

/// Targets for a whole corpus, computed in memory. Object `i` draws its
/// clouds from stream `i` of `seed`.
pub fn corpus_targets(prior: &ShapePrior, objects: &[&CorpusObject], seed: u64) -> Result<PartCaches> {
    let items = objects
        .par_iter()
        .enumerate()
        .map(|(i, o)| Ok((o.id.clone(), object_targets(prior, o, &mut Rng::stream(seed, i as u64))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PartCaches {
        objects: items.into_iter().collect(),
    })
}

fn encode(parts: &[PartTargets]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        for v in p.z.iter().chain(&p.c_s).chain(&p.d) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8], side: &Sidecar) -> Result<Vec<PartTargets>> {
    let width = side.d_z + side.c_s + side.logits;
    if bytes.len() != side.parts * width * 4 {
        return Err(Error::parse(format!(
            "cache for {} holds {} bytes, expected {}",
            side.id,
            bytes.len(),
            side.parts * width * 4
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(values
        .chunks(width)
        .map(|row| PartTargets {
            z: row[..side.d_z].to_vec(),
            c_s: row[side.d_z..side.d_z + side.c_s].to_vec(),
            d: row[side.d_z + side.c_s..].to_vec(),
        })
        .collect())
}

/// Computes and writes caches for every object of the dataset at
/// `dataset_dir`. Output bytes depend only on the dataset, the prior
/// checkpoint and `seed`.
pub fn preprocess(dataset_dir: &Path, prior_path: &Path, out_dir: &Path, seed: u64) -> Result<CacheManifest> {
    let corpus = Corpus::load(dataset_dir)?;
    let prior = ShapePrior::load(prior_path)?;
    let prior_sha256 = hash_file(prior_path)?;
    let dataset_sha256 = hash_file(&dataset_dir.join("manifest.json"))?;
    let objects: Vec<&CorpusObject> = corpus.objects.iter().collect();
    let caches = corpus_targets(&prior, &objects, seed)?;
    let logits = TABLES * prior.cfg.codebook_rows;
    for (id, parts) in &caches.objects {
        let bytes = encode(parts);
        let side = Sidecar {
            format: CACHE_FORMAT.into(),
            id: id.clone(),
            parts: parts.len(),
            d_z: prior.cfg.d_z,
            c_s: prior.cfg.c_s,
            logits,
            generator_version: GENERATOR_VERSION.into(),
            prior_sha256: prior_sha256.clone(),
            data_sha256: sha256_hex(&bytes),
        };
        write_atomic(&out_dir.join(format!("{id}.bin")), &bytes)?;
        write_atomic(&out_dir.join(format!("{id}.json")), &to_json_bytes(&side))?;
    }
    let manifest = CacheManifest {
        format: CACHE_FORMAT.into(),
        generator_version: GENERATOR_VERSION.into(),
        dataset_sha256,
        prior_sha256,
        seed,
        objects: caches.objects.keys().cloned().collect(),
    };
    write_atomic(&out_dir.join("cache.json"), &to_json_bytes(&manifest))?;
    Ok(manifest)
}

/// Loads caches and checks they were made from this dataset and prior.
pub fn load_caches(dir: &Path, dataset_dir: &Path, prior_path: &Path) -> Result<PartCaches> {
    let manifest: CacheManifest = require_json(&dir.join("cache.json"), "part caches", "prior preprocess")?;
    let stale = |what, expected: String, found: String| {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Stale {
                what,
                expected,
                found,
                producer: "prior preprocess",
            })
        }
    };
    stale("part cache format", CACHE_FORMAT.into(), manifest.format.clone())?;
    stale("part cache generator", GENERATOR_VERSION.into(), manifest.generator_version.clone())?;
    stale("part cache dataset hash", hash_file(&dataset_dir.join("manifest.json"))?, manifest.dataset_sha256.clone())?;
    let prior_sha256 = hash_file(prior_path)?;
    stale("part cache prior hash", prior_sha256.clone(), manifest.prior_sha256.clone())?;
    let mut objects = BTreeMap::new();
    for id in &manifest.objects {
        let side: Sidecar = require_json(&dir.join(format!("{id}.json")), "part cache sidecar", "prior preprocess")?;
        stale("part cache prior hash", prior_sha256.clone(), side.prior_sha256.clone())?;
        let bytes = read(&dir.join(format!("{id}.bin")))?;
        stale("part cache data hash", side.data_sha256.clone(), sha256_hex(&bytes))?;
        objects.insert(id.clone(), decode(&bytes, &side)?);
    }
    Ok(PartCaches { objects })
}
