use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::shapes::PartShape;
use super::synth::{generate_object, Category, SynthSpec};
use crate::artic::ArticTree;
use crate::error::{Error, Result};
use crate::io::{read_json, require_json, sha256_hex, to_json_bytes, write_atomic, write_json};
use artkit_tensor::Rng;

pub const GENERATOR_VERSION: &str = "artkit-synth/1";
pub const MANIFEST_FORMAT: &str = "artkit-dataset/1";
pub const OBJECT_FORMAT: &str = "artkit-object/1";

/// Category mix of generated corpora.
const CATEGORY_WEIGHTS: [(Category, f64); 3] = [(Category::Cabinet, 0.6), (Category::Safe, 0.2), (Category::Bottle, 0.2)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusObject {
    pub format: String,
    pub id: String,
    pub category: Category,
    pub spec: SynthSpec,
    pub texts: Vec<String>,
    /// Geometry recipe per node, in the node's normalized frame.
    pub shapes: Vec<PartShape>,
    pub tree: ArticTree,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: Category,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub generator_version: String,
    pub seed: u64,
    pub count: usize,
    pub ratios: [f64; 3],
    pub splits: Splits,
    pub objects: Vec<ManifestEntry>,
}

pub fn object_id(i: usize) -> String {
    format!("obj_{i:05}")
}

/// Object `i` of the corpus for `seed`. Each object draws from its own
/// stream, so objects do not depend on each other.
pub fn corpus_object(seed: u64, i: usize) -> Result<CorpusObject> {
    let mut rng = Rng::stream(seed, i as u64);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut category = Category::Cabinet;
    for (c, w) in CATEGORY_WEIGHTS {
        acc += w;
        if u < acc {
            category = c;
            break;
        }
    }
    let spec = SynthSpec::random(category, &mut rng);
    let obj = generate_object(&spec, &mut rng)?;
    Ok(CorpusObject {
        format: OBJECT_FORMAT.to_string(),
        id: object_id(i),
        category,
        spec,
        texts: obj.texts,
        shapes: obj.shapes,
        tree: obj.tree,
    })
}

pub fn generate_corpus(count: usize, seed: u64) -> Result<Vec<CorpusObject>> {
    (0..count).map(|i| corpus_object(seed, i)).collect()
}

/// Shuffles ids with `seed` and cuts them by `ratios` (train, val, test).
pub fn split_ids(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!("bad split ratios {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    let mut order = ids.to_vec();
    Rng::stream(seed, u64::MAX).shuffle(&mut order);
    let n = order.len();
    let n_train = ((ratios[0] / total) * n as f64).round() as usize;
    let n_val = (((ratios[1] / total) * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort();
    val.sort();
    test.sort();
    Ok(Splits { train, val, test })
}

/// Writes `manifest.json` and `objects/<id>.json` under `dir`.
pub fn build_dataset(dir: &Path, count: usize, ratios: [f64; 3], seed: u64) -> Result<Manifest> {
    let objects = generate_corpus(count, seed)?;
    let mut entries = Vec::with_capacity(count);
    for obj in &objects {
        let file = format!("objects/{}.json", obj.id);
        let bytes = to_json_bytes(obj);
        write_atomic(&dir.join(&file), &bytes)?;
        entries.push(ManifestEntry {
            id: obj.id.clone(),
            category: obj.category,
            file,
            sha256: sha256_hex(&bytes),
        });
    }
    let ids: Vec<String> = objects.iter().map(|o| o.id.clone()).collect();
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        generator_version: GENERATOR_VERSION.to_string(),
        seed,
        count,
        ratios,
        splits: split_ids(&ids, ratios, seed)?,
        objects: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A dataset directory loaded into memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub objects: Vec<CorpusObject>,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = require_json(&dir.join("manifest.json"), "dataset manifest", "dataset build")?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::parse(format!("unsupported manifest format `{}`", manifest.format)));
        }
        let objects = manifest
            .objects
            .iter()
            .map(|e| read_json::<CorpusObject>(&dir.join(&e.file)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            dir: dir.to_path_buf(),
            manifest,
            objects,
        })
    }

    /// An in-memory corpus with every object in the training split.
    pub fn from_objects(objects: Vec<CorpusObject>, seed: u64) -> Self {
        let ids: Vec<String> = objects.iter().map(|o| o.id.clone()).collect();
        Corpus {
            dir: PathBuf::new(),
            manifest: Manifest {
                format: MANIFEST_FORMAT.to_string(),
                generator_version: GENERATOR_VERSION.to_string(),
                seed,
                count: objects.len(),
                ratios: [1.0, 0.0, 0.0],
                splits: Splits {
                    train: ids,
                    ..Splits::default()
                },
                objects: Vec::new(),
            },
            objects,
        }
    }

    pub fn get(&self, id: &str) -> Option<&CorpusObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn split(&self, name: &str) -> Result<Vec<&CorpusObject>> {
        let ids = match name {
            "train" => &self.manifest.splits.train,
            "val" => &self.manifest.splits.val,
            "test" => &self.manifest.splits.test,
            "all" => return Ok(self.objects.iter().collect()),
            other => return Err(Error::Config(format!("unknown split `{other}`"))),
        };
        ids.iter()
            .map(|id| self.get(id).ok_or_else(|| Error::parse(format!("split names unknown object {id}"))))
            .collect()
    }
}
