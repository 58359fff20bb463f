use std::collections::BTreeMap;

use artkit_geometry::Mesh;
use artkit_tensor::{AdamW, Graph, Rng, Tensor};

use super::config::{PriorTrainConfig, TABLES};
use super::model::{ShapePrior, VaeBatch};
use crate::dataset::{Corpus, CorpusObject, PartShape};
use crate::error::{Error, Result};

/// Resolution of the frame meshes that training clouds are drawn from.
pub const TRAIN_MESH_RES: usize = 32;

/// One training part: its frame shape and semantic label.
#[derive(Clone, Debug, PartialEq)]
pub struct PartRecord {
    pub shape: PartShape,
    pub label: String,
}

impl PartRecord {
    pub fn from_object(obj: &CorpusObject) -> Vec<PartRecord> {
        obj.tree
            .nodes
            .iter()
            .zip(&obj.shapes)
            .map(|(n, s)| PartRecord {
                shape: s.clone(),
                label: n.label.clone(),
            })
            .collect()
    }

    pub fn from_split(corpus: &Corpus, split: &str) -> Result<Vec<PartRecord>> {
        Ok(corpus.split(split)?.into_iter().flat_map(PartRecord::from_object).collect())
    }
}

/// Progress of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub stage: &'static str,
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Stage specific terms, e.g. `("l1", …)`.
    pub terms: Vec<(&'static str, f64)>,
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            detail: format!("{what} = {v}"),
        })
    }
}

/// Frame meshes of the distinct shapes, so clouds are cheap to redraw.
pub(crate) fn shape_meshes(parts: &[PartRecord]) -> Result<(Vec<Mesh>, Vec<usize>)> {
    let mut keys: BTreeMap<String, usize> = BTreeMap::new();
    let mut meshes = Vec::new();
    let mut index = Vec::with_capacity(parts.len());
    for p in parts {
        let key = serde_json::to_string(&p.shape)?;
        let i = match keys.get(&key) {
            Some(&i) => i,
            None => {
                meshes.push(p.shape.frame_mesh(TRAIN_MESH_RES)?);
                keys.insert(key, meshes.len() - 1);
                meshes.len() - 1
            }
        };
        index.push(i);
    }
    Ok((meshes, index))
}

/// Fresh clouds and supervised queries for the chosen parts.
pub fn vae_batch(prior: &ShapePrior, parts: &[&PartRecord], meshes: &[&Mesh], rng: &mut Rng) -> Result<VaeBatch> {
    let cfg = &prior.cfg;
    let mut clouds = Vec::with_capacity(parts.len());
    let mut coords = Vec::new();
    let mut sdf = Vec::new();
    let mut sample_of = Vec::new();
    for (s, (p, m)) in parts.iter().zip(meshes).enumerate() {
        let (cloud, q, d) = p.shape.training_sample(m, cfg.points, cfg.queries, cfg.jitter, rng)?;
        clouds.push(cloud);
        sample_of.extend(std::iter::repeat(s).take(q.len()));
        coords.extend(q);
        sdf.extend(d);
    }
    let n = sdf.len();
    Ok(VaeBatch {
        clouds,
        coords: Tensor::from_rows(&coords)?,
        sample_of,
        sdf: Tensor::new(&[n, 1], sdf)?,
    })
}

/// Stage one: point encoder, VAE and SDF decoder on L1 + weighted KL.
pub fn train_vae(
    prior: &mut ShapePrior,
    parts: &[PartRecord],
    tc: &PriorTrainConfig,
    rng: &mut Rng,
    log: &mut dyn FnMut(&StepLog),
) -> Result<()> {
    if parts.is_empty() {
        return Err(Error::Config("no training parts".into()));
    }
    let (meshes, index) = shape_meshes(parts)?;
    let mut opt = AdamW::new(tc.lr, tc.weight_decay);
    let mut order: Vec<usize> = (0..parts.len()).collect();
    let mut cursor = order.len();
    for step in 1..=tc.vae_steps {
        let mut chosen = Vec::with_capacity(tc.vae_batch);
        while chosen.len() < tc.vae_batch.min(parts.len()) {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            chosen.push(order[cursor]);
            cursor += 1;
        }
        let ps: Vec<&PartRecord> = chosen.iter().map(|&i| &parts[i]).collect();
        let ms: Vec<&Mesh> = chosen.iter().map(|&i| &meshes[index[i]]).collect();
        let batch = vae_batch(prior, &ps, &ms, rng)?;
        let noise = Tensor::randn(&[ps.len(), prior.cfg.d_z], 1.0, rng);
        let mut g = Graph::new();
        let (loss, l1, kl) = prior.sdf_vae_loss(&mut g, &batch, &noise, prior.cfg.kl_weight)?;
        let lv = g.value(loss).item();
        check_finite(step, "vae loss", lv)?;
        // Only stage-one parameters are bound in this graph, so only they move.
        let grads = g.backward(loss)?;
        let norm = opt.step(&mut prior.store, &grads)?;
        check_finite(step, "vae gradient norm", norm)?;
        if step % tc.log_every.max(1) == 0 || step == tc.vae_steps {
            log(&StepLog {
                stage: "vae",
                step,
                loss: lv,
                grad_norm: norm,
                terms: vec![("l1", l1), ("kl", kl)],
            });
        }
    }
    Ok(())
}

/// Posterior means of every part, before normalization, from one cloud
/// each.
pub fn raw_latents(prior: &ShapePrior, parts: &[PartRecord], rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let (meshes, index) = shape_meshes(parts)?;
    let scale = prior.latent_scale;
    let mut out = Vec::with_capacity(parts.len());
    for chunk in (0..parts.len()).collect::<Vec<_>>().chunks(16) {
        let clouds = chunk
            .iter()
            .map(|&i| Ok(artkit_geometry::sample_surface(&meshes[index[i]], prior.cfg.points, rng)?))
            .collect::<Result<Vec<_>>>()?;
        for z in prior.encode_latents(&clouds)? {
            out.push(z.iter().map(|v| v / scale).collect());
        }
    }
    Ok(out)
}

/// `1 / std` over all latent entries; 1 when the spread is degenerate.
pub fn latent_scale(latents: &[Vec<f64>]) -> f64 {
    let n = latents.iter().map(Vec::len).sum::<usize>() as f64;
    if n < 2.0 {
        return 1.0;
    }
    let mean = latents.iter().flatten().sum::<f64>() / n;
    let var = latents.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 1e-12 {
        1.0 / var.sqrt()
    } else {
        1.0
    }
}

/// Stage two: geometry and semantic encoders, codebooks and denoiser, on
/// normalized latents of the frozen VAE. Fills the label table.
pub fn train_diffusion(
    prior: &mut ShapePrior,
    parts: &[PartRecord],
    tc: &PriorTrainConfig,
    rng: &mut Rng,
    log: &mut dyn FnMut(&StepLog),
) -> Result<()> {
    if parts.is_empty() {
        return Err(Error::Config("no training parts".into()));
    }
    prior.latent_scale = 1.0;
    let raw = raw_latents(prior, parts, rng)?;
    prior.latent_scale = latent_scale(&raw);
    let z: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|v| v * prior.latent_scale).collect()).collect();
    let mut opt = AdamW::new(tc.lr, tc.weight_decay);
    let (d, n, steps) = (prior.cfg.d_z, prior.cfg.codebook_rows, prior.schedule.steps());
    let b = tc.diffusion_batch.max(1);
    for step in 1..=tc.diffusion_steps {
        let idx: Vec<usize> = (0..b).map(|_| rng.below(parts.len())).collect();
        let z0 = Tensor::from_rows(&idx.iter().map(|&i| z[i].clone()).collect::<Vec<_>>())?;
        let labels: Vec<&str> = idx.iter().map(|&i| parts[i].label.as_str()).collect();
        let t: Vec<usize> = (0..b).map(|_| 1 + rng.below(steps)).collect();
        let noise = Tensor::randn(&[b, d], 1.0, rng);
        let gumbel: Vec<Tensor> = (0..TABLES).map(|_| Tensor::new(&[b, n], rng.gumbel_vec(b * n))).collect::<std::result::Result<_, _>>()?;
        let mut g = Graph::new();
        let zv = g.constant(z0.clone());
        let c_g = prior.geometry_condition(&mut g, zv)?;
        let logits = prior.distance_logits(&mut g, c_g)?;
        let c_hat = prior.quantize(&mut g, &logits, &gumbel, prior.cfg.tau)?;
        let c_s = prior.semantic_condition(&mut g, &labels)?;
        let loss = prior.diffusion_loss(&mut g, &z0, &t, &noise, c_hat, c_s)?;
        let lv = g.value(loss).item();
        check_finite(step, "diffusion loss", lv)?;
        let grads = g.backward(loss)?;
        let norm = opt.step(&mut prior.store, &grads)?;
        check_finite(step, "diffusion gradient norm", norm)?;
        if step % tc.log_every.max(1) == 0 || step == tc.diffusion_steps {
            log(&StepLog {
                stage: "diffusion",
                step,
                loss: lv,
                grad_norm: norm,
                terms: vec![],
            });
        }
    }
    prior.store.round_to_f32();
    refresh_labels(prior, parts)
}

/// Recomputes the semantic condition of every distinct training label.
pub fn refresh_labels(prior: &mut ShapePrior, parts: &[PartRecord]) -> Result<()> {
    let mut names: Vec<&str> = parts.iter().map(|p| p.label.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let values = prior.semantic_values(&names)?;
    prior.labels = names.into_iter().map(String::from).zip(values).collect();
    Ok(())
}

/// Both stages in order.
pub fn train_prior(
    prior: &mut ShapePrior,
    parts: &[PartRecord],
    tc: &PriorTrainConfig,
    rng: &mut Rng,
    log: &mut dyn FnMut(&StepLog),
) -> Result<()> {
    train_vae(prior, parts, tc, rng, log)?;
    train_diffusion(prior, parts, tc, rng, log)
}
