use artkit_tensor::{AdamW, Graph, Rng};

use super::config::ArtTrainConfig;
use super::model::{ArtFormer, Episode, LossTerms, TokenTargets};
use super::rounds::{teacher_forcing_rounds, Round};
use crate::artic::PartNode;
use crate::cache::{PartCaches, PartTargets};
use crate::dataset::CorpusObject;
use crate::error::{Error, Result};
use crate::prior::TABLES;

/// A corpus object ready for teacher forcing: nodes carry cached latents.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub nodes: Vec<PartNode>,
    pub texts: Vec<String>,
    pub parts: Vec<PartTargets>,
    pub rounds: Vec<Round>,
}

impl Example {
    pub fn new(obj: &CorpusObject, caches: &PartCaches) -> Result<Self> {
        let parts = caches.get(&obj.id).ok_or_else(|| Error::Missing {
            what: "part cache entry",
            path: obj.id.clone().into(),
            producer: "prior preprocess",
        })?;
        if parts.len() != obj.tree.len() {
            return Err(Error::Dimension {
                what: "cached parts",
                expected: obj.tree.len(),
                got: parts.len(),
            });
        }
        let nodes = obj
            .tree
            .nodes
            .iter()
            .zip(parts)
            .map(|(n, p)| PartNode { z: p.z.clone(), ..n.clone() })
            .collect();
        Ok(Example {
            id: obj.id.clone(),
            nodes,
            texts: obj.texts.clone(),
            parts: parts.to_vec(),
            rounds: teacher_forcing_rounds(&obj.tree)?,
        })
    }

    fn episode(&self, text: usize) -> Episode<'_> {
        Episode {
            nodes: &self.nodes,
            text: &self.texts[text],
            contexts: self.rounds.iter().map(|r| r.context.clone()).collect(),
        }
    }
}

pub fn examples(objects: &[&CorpusObject], caches: &PartCaches) -> Result<Vec<Example>> {
    objects.iter().map(|o| Example::new(o, caches)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArtStepLog {
    pub step: usize,
    pub grad_norm: f64,
    pub terms: LossTerms,
}

/// Forward pass and loss over `(example, text variant)` pairs.
pub fn batch_loss(model: &ArtFormer, g: &mut Graph, batch: &[(&Example, usize)]) -> Result<(artkit_tensor::Var, LossTerms)> {
    let logits = TABLES * model.codebook_rows;
    let mut targets = TokenTargets::default();
    let mut episodes = Vec::with_capacity(batch.len());
    for (ex, text) in batch {
        targets.push_rounds(&ex.nodes, &ex.parts, &ex.rounds, model.c_s, logits);
        episodes.push(ex.episode(*text));
    }
    let out = model.forward(g, &episodes)?;
    model.loss(g, out, &targets)
}

pub fn train_artformer(
    model: &mut ArtFormer,
    data: &[Example],
    tc: &ArtTrainConfig,
    rng: &mut Rng,
    log: &mut dyn FnMut(&ArtStepLog),
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("no training objects".into()));
    }
    let mut opt = AdamW::new(tc.lr, tc.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    for step in 1..=tc.steps {
        let mut batch = Vec::with_capacity(tc.batch);
        while batch.len() < tc.batch.min(data.len()) {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let ex = &data[order[cursor]];
            cursor += 1;
            batch.push((ex, rng.below(ex.texts.len().max(1))));
        }
        let mut g = Graph::new();
        let (loss, terms) = batch_loss(model, &mut g, &batch)?;
        if !terms.total.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!(
                    "terminal {} attributes {} motion {} codebook {} on {}",
                    terms.terminal,
                    terms.attributes,
                    terms.motion,
                    terms.codebook,
                    batch.iter().map(|(e, _)| e.id.as_str()).collect::<Vec<_>>().join(",")
                ),
            });
        }
        let grads = g.backward(loss)?;
        let grad_norm = opt.step(&mut model.store, &grads).map_err(|e| Error::NonFinite {
            step,
            detail: e.to_string(),
        })?;
        if step % tc.log_every.max(1) == 0 || step == tc.steps {
            log(&ArtStepLog { step, grad_norm, terms });
        }
    }
    model.store.round_to_f32();
    Ok(())
}

/// Teacher-forced loss terms over every text variant of every example,
/// evaluated in chunks. Accuracy is pooled over all supervised tokens.
pub fn evaluate(model: &ArtFormer, data: &[Example]) -> Result<LossTerms> {
    let pairs: Vec<(&Example, usize)> = data.iter().flat_map(|e| (0..e.texts.len()).map(move |t| (e, t))).collect();
    let mut sum = LossTerms {
        total: 0.0,
        terminal: 0.0,
        attributes: 0.0,
        motion: 0.0,
        codebook: 0.0,
        accuracy: 0.0,
    };
    let (mut right, mut seen) = (0.0, 0.0);
    let chunks: Vec<&[(&Example, usize)]> = pairs.chunks(16).collect();
    for chunk in &chunks {
        let mut g = Graph::new();
        let (_, t) = batch_loss(model, &mut g, chunk)?;
        let supervised: f64 = chunk
            .iter()
            .map(|(e, _)| e.rounds.iter().map(|r| r.targets.iter().filter(|t| **t != super::rounds::Target::Closed).count()).sum::<usize>() as f64)
            .sum();
        right += t.accuracy * supervised;
        seen += supervised;
        sum.total += t.total;
        sum.terminal += t.terminal;
        sum.attributes += t.attributes;
        sum.motion += t.motion;
        sum.codebook += t.codebook;
    }
    let k = chunks.len().max(1) as f64;
    Ok(LossTerms {
        total: sum.total / k,
        terminal: sum.terminal / k,
        attributes: sum.attributes / k,
        motion: sum.motion / k,
        codebook: sum.codebook / k,
        accuracy: if seen > 0.0 { right / seen } else { 1.0 },
    })
}
