use serde::Serialize;

use super::model::{ArtFormer, Episode, TokenPrediction};
use crate::artic::{ArticTree, PartNode};
use crate::error::{Error, Result};
use crate::prior::ShapePrior;
use artkit_tensor::{Graph, Rng};

/// Smallest bbox extent kept after sorting predicted corners.
const MIN_EXTENT: f64 = 1e-3;

/// Anything that predicts one round: outputs for the start token followed
/// by one per node of `nodes`.
pub trait RoundModel {
    fn predict(&self, text: &str, nodes: &[PartNode]) -> Result<Vec<TokenPrediction>>;
    fn threshold(&self) -> f64 {
        0.5
    }
}

/// Turns codebook logits and a semantic condition into a label and latent.
pub trait PartSampler {
    fn sample_part(&self, p: &[f64], c_s: &[f64], rng: &mut Rng) -> Result<(String, Vec<f64>)>;
}

impl RoundModel for ArtFormer {
    fn predict(&self, text: &str, nodes: &[PartNode]) -> Result<Vec<TokenPrediction>> {
        let mut g = Graph::new();
        let ep = Episode {
            nodes,
            text,
            contexts: vec![(0..nodes.len()).collect()],
        };
        let out = self.forward(&mut g, &[ep])?;
        Ok(self.predictions(g.value(out)))
    }

    fn threshold(&self) -> f64 {
        self.cfg.threshold
    }
}

impl PartSampler for ShapePrior {
    fn sample_part(&self, p: &[f64], c_s: &[f64], rng: &mut Rng) -> Result<(String, Vec<f64>)> {
        let z = self.sample_latent(p, c_s, self.cfg.tau, rng)?;
        let label = self.nearest_label(c_s).unwrap_or("part").to_string();
        Ok((label, z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Every token turned terminal.
    Complete,
    /// The round or node cap stopped decoding first.
    Truncated,
    /// The start token was terminal in round 1.
    EmptyObject,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decision {
    /// `"start"` or the node index.
    pub token: String,
    pub p_terminal: f64,
    /// `"terminal"`, `"closed"` or `"child <index>"`.
    pub action: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundTrace {
    pub round: usize,
    pub decisions: Vec<Decision>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decoded {
    #[serde(skip)]
    pub tree: ArticTree,
    pub outcome: Outcome,
    pub rounds: usize,
    pub trace: Vec<RoundTrace>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeLimits {
    pub max_rounds: usize,
    pub max_nodes: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Makes raw head outputs a valid node: sorted bbox corners, unit joint
/// direction (z when degenerate), ordered limits, and the ranges of any
/// motion the flags rule out zeroed.
pub fn tidy_child(pred: &TokenPrediction, parent: Option<usize>, label: String, z: Vec<f64>) -> PartNode {
    let mut bbox = pred.bbox;
    for k in 0..3 {
        let (a, b) = (bbox[k].min(bbox[k + 3]), bbox[k].max(bbox[k + 3]));
        let pad = 0.5 * (MIN_EXTENT - (b - a)).max(0.0);
        bbox[k] = a - pad;
        bbox[k + 3] = b + pad;
    }
    let mut joint = pred.joint;
    let norm = (joint[3] * joint[3] + joint[4] * joint[4] + joint[5] * joint[5]).sqrt();
    if norm > 1e-9 && norm.is_finite() {
        for v in &mut joint[3..] {
            *v /= norm;
        }
    } else {
        joint[3..].copy_from_slice(&[0.0, 0.0, 1.0]);
    }
    let l = pred.limit;
    let mut limit = [l[0].min(l[1]), l[0].max(l[1]), l[2].min(l[3]), l[2].max(l[3])];
    if pred.motion[0] <= 0.0 {
        limit[..2].fill(0.0);
    }
    if pred.motion[1] <= 0.0 {
        limit[2..].fill(0.0);
    }
    PartNode {
        parent,
        label,
        bbox,
        z,
        joint,
        limit,
    }
}

/// Round-by-round generation. `seed` is an existing partial tree with the
/// nodes that may still produce children; with no seed the start token is
/// open and produces the root.
pub fn iterative_decode(
    model: &dyn RoundModel,
    sampler: &dyn PartSampler,
    text: &str,
    seed: Option<(ArticTree, Vec<bool>)>,
    limits: DecodeLimits,
    rng: &mut Rng,
) -> Result<Decoded> {
    let (mut nodes, mut open, mut start_open) = match seed {
        Some((tree, open)) if !tree.is_empty() => {
            if open.len() != tree.len() {
                return Err(Error::Dimension {
                    what: "open flags",
                    expected: tree.len(),
                    got: open.len(),
                });
            }
            (tree.nodes, open, false)
        }
        _ => (Vec::new(), Vec::new(), true),
    };
    let threshold = model.threshold();
    let mut trace = Vec::new();
    let mut outcome = Outcome::Truncated;
    for round in 1..=limits.max_rounds {
        if !start_open && !open.iter().any(|&o| o) {
            outcome = Outcome::Complete;
            break;
        }
        let preds = model.predict(text, &nodes)?;
        if preds.len() != nodes.len() + 1 {
            return Err(Error::Dimension {
                what: "round predictions",
                expected: nodes.len() + 1,
                got: preds.len(),
            });
        }
        let mut decisions = Vec::with_capacity(preds.len());
        let mut born: Vec<PartNode> = Vec::new();
        let mut full = false;
        let count = nodes.len();
        for (k, pred) in preds.iter().enumerate() {
            let p_terminal = sigmoid(pred.o);
            let (token, is_open) = if k == 0 {
                ("start".to_string(), start_open)
            } else {
                ((k - 1).to_string(), open[k - 1])
            };
            let action = if !is_open {
                "closed".to_string()
            } else if p_terminal > threshold {
                if k == 0 {
                    start_open = false;
                } else {
                    open[k - 1] = false;
                }
                "terminal".to_string()
            } else if count + born.len() >= limits.max_nodes {
                full = true;
                "capped".to_string()
            } else {
                let (label, z) = sampler.sample_part(&pred.p, &pred.c_s, rng)?;
                let parent = if k == 0 { None } else { Some(k - 1) };
                born.push(tidy_child(pred, parent, label, z));
                if k == 0 {
                    // The start token yields exactly one root.
                    start_open = false;
                }
                format!("child {}", count + born.len() - 1)
            };
            decisions.push(Decision {
                token,
                p_terminal,
                action,
            });
        }
        trace.push(RoundTrace { round, decisions });
        if round == 1 && nodes.is_empty() && born.is_empty() {
            return Ok(Decoded {
                tree: ArticTree::default(),
                outcome: Outcome::EmptyObject,
                rounds: 1,
                trace,
            });
        }
        open.extend(std::iter::repeat(true).take(born.len()));
        nodes.extend(born);
        if full {
            break;
        }
    }
    if outcome != Outcome::Complete && !start_open && !open.iter().any(|&o| o) {
        outcome = Outcome::Complete;
    }
    let rounds = trace.len();
    Ok(Decoded {
        tree: ArticTree::new(nodes),
        outcome,
        rounds,
        trace,
    })
}

/// Removes `remove` and their descendants; surviving parents of removed
/// nodes reopen. Returns the partial tree, its open flags, and the old
/// index of every kept node.
pub fn prune(tree: &ArticTree, remove: &[usize]) -> Result<(ArticTree, Vec<bool>, Vec<usize>)> {
    if let Some(&bad) = remove.iter().find(|&&i| i >= tree.len()) {
        return Err(Error::InvalidTree(format!("no node {bad} to remove")));
    }
    let mut gone = vec![false; tree.len()];
    for i in 0..tree.len() {
        gone[i] = remove.contains(&i) || tree.nodes[i].parent.is_some_and(|p| gone[p]);
    }
    let mut new_index = vec![usize::MAX; tree.len()];
    let mut kept = Vec::new();
    let mut nodes = Vec::new();
    for i in 0..tree.len() {
        if gone[i] {
            continue;
        }
        new_index[i] = nodes.len();
        let mut n = tree.nodes[i].clone();
        n.parent = n.parent.map(|p| new_index[p]);
        nodes.push(n);
        kept.push(i);
    }
    let mut open = vec![false; nodes.len()];
    for &r in remove {
        if let Some(p) = tree.nodes[r].parent {
            if !gone[p] {
                open[new_index[p]] = true;
            }
        }
    }
    Ok((ArticTree::new(nodes), open, kept))
}

/// Regenerates the removed parts of `tree` under a new condition.
pub fn edit(
    model: &dyn RoundModel,
    sampler: &dyn PartSampler,
    tree: &ArticTree,
    remove: &[usize],
    text: &str,
    limits: DecodeLimits,
    rng: &mut Rng,
) -> Result<Decoded> {
    let (partial, open, _) = prune(tree, remove)?;
    iterative_decode(model, sampler, text, Some((partial, open)), limits, rng)
}
