use std::ops::Range;
use std::sync::Arc;

use artkit_tensor::layers::{Activation, BiGru, BlockLayout, LayerNorm, Linear, Mlp, TransformerBlock};
use artkit_tensor::{AttentionLayout, Graph, ParamId, ParamStore, Rng, Tensor, Var};

use super::config::ArtConfig;
use super::rounds::{Round, Target};
use crate::artic::PartNode;
use crate::cache::PartTargets;
use crate::error::{Error, Result};
use crate::prior::TABLES;
use crate::text::{token_ids, TextEncoder};

/// Bbox, joint and limit widths of the attribute head.
pub const GEOMETRY_ATTRS: usize = 6 + 6 + 4;

/// Motion flags: whether the joint slides, whether it turns.
pub const MOTION_FLAGS: usize = 2;

/// Decoder output for one context token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenPrediction {
    /// Terminal logit.
    pub o: f64,
    /// Slide and turn logits.
    pub motion: [f64; 2],
    pub bbox: [f64; 6],
    pub joint: [f64; 6],
    pub limit: [f64; 4],
    pub c_s: Vec<f64>,
    /// Codebook logits `[4 × N]`, row-major by table.
    pub p: Vec<f64>,
}

/// One object's contribution to a forward pass: its nodes (with latents),
/// text, and the rounds to evaluate.
#[derive(Clone, Debug)]
pub struct Episode<'a> {
    pub nodes: &'a [PartNode],
    pub text: &'a str,
    /// Node indices visible after the start token, one list per round.
    pub contexts: Vec<Vec<usize>>,
}

/// Per-token supervision matching the rows of a forward pass.
#[derive(Clone, Debug, Default)]
pub struct TokenTargets {
    pub terminal: Vec<f64>,
    pub weight: Vec<f64>,
    /// `[bbox, joint, limit, c_s]` per token; zeros where not a child.
    pub attrs: Vec<f64>,
    /// `[4 × N]` distance logits per token.
    pub d: Vec<f64>,
    /// 1 where the target is a child.
    pub child: Vec<f64>,
    /// `[slides, turns]` per token.
    pub motion: Vec<f64>,
}

impl TokenTargets {
    pub fn len(&self) -> usize {
        self.terminal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminal.is_empty()
    }

    /// Appends the targets of `rounds` for a tree with per-node caches.
    pub fn push_rounds(&mut self, nodes: &[PartNode], parts: &[PartTargets], rounds: &[Round], c_s: usize, logits: usize) {
        for r in rounds {
            for t in &r.targets {
                match *t {
                    Target::Child(c) => {
                        let n = &nodes[c];
                        self.terminal.push(0.0);
                        self.weight.push(1.0);
                        self.child.push(1.0);
                        self.attrs.extend_from_slice(&n.bbox);
                        self.attrs.extend_from_slice(&n.joint);
                        self.attrs.extend_from_slice(&n.limit);
                        let [t0, t1, r0, r1] = n.limit;
                        self.motion.push(if t0 != 0.0 || t1 != 0.0 { 1.0 } else { 0.0 });
                        self.motion.push(if r0 != 0.0 || r1 != 0.0 { 1.0 } else { 0.0 });
                        self.attrs.extend_from_slice(&parts[c].c_s);
                        self.d.extend_from_slice(&parts[c].d);
                    }
                    Target::Terminal | Target::Closed => {
                        let open = *t == Target::Terminal;
                        self.terminal.push(1.0);
                        self.weight.push(if open { 1.0 } else { 0.0 });
                        self.child.push(0.0);
                        self.attrs.extend(std::iter::repeat(0.0).take(GEOMETRY_ATTRS + c_s));
                        self.motion.extend([0.0; MOTION_FLAGS]);
                        self.d.extend(std::iter::repeat(0.0).take(logits));
                    }
                }
            }
        }
    }
}

/// Loss terms of one batch.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LossTerms {
    pub total: f64,
    pub terminal: f64,
    pub attributes: f64,
    pub motion: f64,
    pub codebook: f64,
    /// Share of supervised tokens whose terminal decision is right.
    pub accuracy: f64,
}

/// Token embedding, tree position embedding, conditioned transformer and
/// per-token heads.
#[derive(Clone, Debug)]
pub struct ArtFormer {
    pub cfg: ArtConfig,
    pub d_z: usize,
    pub c_s: usize,
    pub codebook_rows: usize,
    pub store: ParamStore,
    text: TextEncoder,
    mapper: Mlp,
    tpe: BiGru,
    tpe_proj: Linear,
    start: ParamId,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
    head: Linear,
}

/// `[bbox, z, joint, limit]`: the token without its parent slot.
pub fn node_attributes(n: &PartNode) -> Vec<f64> {
    let mut v = Vec::with_capacity(GEOMETRY_ATTRS + n.z.len());
    v.extend_from_slice(&n.bbox);
    v.extend_from_slice(&n.z);
    v.extend_from_slice(&n.joint);
    v.extend_from_slice(&n.limit);
    v
}

impl ArtFormer {
    pub fn new(cfg: &ArtConfig, d_z: usize, c_s: usize, codebook_rows: usize, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = Rng::seed(seed);
        let r = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let attr = GEOMETRY_ATTRS + d_z;
        let d = cfg.d_model;
        let text = TextEncoder::new(s, "art.text", &cfg.text, r)?;
        let mapper = Mlp::new(s, "art.mapper", &[attr, cfg.mapper_hidden, d], Activation::Gelu, r)?;
        let tpe = BiGru::new(s, "art.tpe", attr, cfg.a_dim / 2, r)?;
        let tpe_proj = Linear::new(s, "art.tpe_proj", cfg.p_dim, d, r)?;
        let start = s.add("art.start", Tensor::randn(&[1, d], 0.02, r))?;
        let blocks = (0..cfg.blocks)
            .map(|b| TransformerBlock::new(s, &format!("art.block{b}"), d, cfg.heads, Some(cfg.text.dim), r))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let ln = LayerNorm::new(s, "art.ln", d)?;
        let head = Linear::new(s, "art.head", d, 1 + MOTION_FLAGS + GEOMETRY_ATTRS + c_s + TABLES * codebook_rows, r)?;
        Ok(ArtFormer {
            cfg: cfg.clone(),
            d_z,
            c_s,
            codebook_rows,
            store,
            text,
            mapper,
            tpe,
            tpe_proj,
            start,
            blocks,
            ln,
            head,
        })
    }

    pub fn head_width(&self) -> usize {
        1 + MOTION_FLAGS + GEOMETRY_ATTRS + self.c_s + TABLES * self.codebook_rows
    }

    /// Position embeddings `[Σ nodes, p_dim]`: per node, the BiGRU summary
    /// of each ancestor's root path, nearest ancestor (the node itself)
    /// first, truncated or zero-padded to the slot count.
    pub fn position_embeddings(&self, g: &mut Graph, attrs: Var, parents: &[Option<usize>]) -> Result<Var> {
        let n = parents.len();
        let paths: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut p = vec![i];
                let mut cur = i;
                while let Some(up) = parents[cur] {
                    p.push(up);
                    cur = up;
                }
                p.reverse();
                p
            })
            .collect();
        let a = self.tpe.forward(g, &self.store, attrs, &paths)?;
        let zero = g.constant(Tensor::zeros(&[1, self.cfg.a_dim]));
        let table = g.concat_rows(&[a, zero])?;
        let slots = self.cfg.slots();
        let mut index = Vec::with_capacity(n * slots);
        for path in &paths {
            let nearest: Vec<usize> = path.iter().rev().take(slots).copied().collect();
            index.extend(&nearest);
            index.extend(std::iter::repeat(n).take(slots - nearest.len()));
        }
        let p = g.gather_rows(table, &index)?;
        Ok(g.reshape(p, &[n, self.cfg.p_dim])?)
    }

    /// Head outputs `[tokens, head_width]`; tokens run episode by episode,
    /// round by round, each round being the start token then its context.
    pub fn forward(&self, g: &mut Graph, episodes: &[Episode]) -> Result<Var> {
        let p = &self.store;
        let mut attrs = Vec::new();
        let mut parents = Vec::new();
        let mut offsets = Vec::with_capacity(episodes.len());
        for e in episodes {
            offsets.push(parents.len());
            for (i, n) in e.nodes.iter().enumerate() {
                if n.z.len() != self.d_z {
                    return Err(Error::Dimension {
                        what: "latent",
                        expected: self.d_z,
                        got: n.z.len(),
                    });
                }
                if n.parent.is_some_and(|q| q >= i) {
                    return Err(Error::InvalidTree(format!("node {i} precedes its parent")));
                }
                attrs.push(node_attributes(n));
                parents.push(n.parent.map(|q| q + parents.len() - i));
            }
        }
        let table = if attrs.is_empty() {
            g.param(p, self.start)
        } else {
            let x = g.constant(Tensor::from_rows(&attrs)?);
            let pos = self.position_embeddings(g, x, &parents)?;
            let pos = self.tpe_proj.forward(g, p, pos)?;
            let m = self.mapper.forward(g, p, x)?;
            let emb = g.add(m, pos)?;
            let s = g.param(p, self.start);
            g.concat_rows(&[s, emb])?
        };
        let mut rows = Vec::new();
        let mut segments: Vec<Range<usize>> = Vec::new();
        let mut owner = Vec::new();
        for (k, e) in episodes.iter().enumerate() {
            for ctx in &e.contexts {
                let start = rows.len();
                rows.push(0);
                for &i in ctx {
                    if i >= e.nodes.len() {
                        return Err(Error::InvalidTree(format!("context node {i} out of range")));
                    }
                    rows.push(1 + offsets[k] + i);
                }
                segments.push(start..rows.len());
                owner.push(k);
            }
        }
        let mut h = g.gather_rows(table, &rows)?;
        let texts: Vec<Vec<usize>> = episodes.iter().map(|e| token_ids(e.text, &self.cfg.text)).collect();
        let cond = self.text.forward(g, p, &texts)?;
        let layout = BlockLayout {
            self_attn: Arc::new(AttentionLayout::self_attention(segments.clone())),
            cross_attn: cond.as_ref().map(|(_, text_segs)| {
                Arc::new(AttentionLayout {
                    queries: segments.clone(),
                    keys: owner.iter().map(|&k| text_segs[k].clone()).collect(),
                })
            }),
        };
        let ctx = cond.map(|(v, _)| v);
        for b in &self.blocks {
            h = b.forward(g, p, h, ctx, &layout)?;
        }
        let h = self.ln.forward(g, p, h)?;
        Ok(self.head.forward(g, p, h)?)
    }

    /// `β_o · BCE(o) + β_P · mean_t KL(softmax(P_t) ‖ softmax(D_t)) +
    /// MSE(b, j, l, c_s) + BCE(slides, turns)`, all but the first only on
    /// child targets.
    pub fn loss(&self, g: &mut Graph, out: Var, t: &TokenTargets) -> Result<(Var, LossTerms)> {
        let n = t.len();
        if g.shape(out) != [n, self.head_width()] {
            return Err(Error::Dimension {
                what: "round targets",
                expected: g.shape(out)[0],
                got: n,
            });
        }
        let o = g.slice_cols(out, 0, 1)?;
        let bce = g.bce_with_logits(o, &t.terminal, &t.weight)?;
        let m = g.slice_cols(out, 1, MOTION_FLAGS)?;
        let mask: Vec<f64> = t.child.iter().flat_map(|&c| [c; MOTION_FLAGS]).collect();
        let motion = g.bce_with_logits(m, &t.motion, &mask)?;
        let width = GEOMETRY_ATTRS + self.c_s;
        let a = g.slice_cols(out, 1 + MOTION_FLAGS, width)?;
        let mask: Vec<f64> = t.child.iter().flat_map(|&c| std::iter::repeat(c).take(width)).collect();
        let mse = g.mse_weighted(a, &Tensor::new(&[n, width], t.attrs.clone())?, &mask)?;
        let nrows = self.codebook_rows;
        let logits = TABLES * nrows;
        let mut kls = Vec::with_capacity(TABLES);
        for k in 0..TABLES {
            let pk = g.slice_cols(out, 1 + MOTION_FLAGS + width + k * nrows, nrows)?;
            let dk: Vec<f64> = (0..n)
                .flat_map(|r| t.d[r * logits + k * nrows..r * logits + (k + 1) * nrows].iter().copied())
                .collect();
            let dk = g.constant(Tensor::new(&[n, nrows], dk)?);
            kls.push(g.kl_categorical(pk, dk, Some(&t.child))?);
        }
        let mut kl = kls[0];
        for &k in &kls[1..] {
            kl = g.add(kl, k)?;
        }
        let kl = g.scale(kl, 1.0 / TABLES as f64);
        let wo = g.scale(bce, self.cfg.beta_o);
        let wp = g.scale(kl, self.cfg.beta_p);
        let sum = g.add(wo, wp)?;
        let sum = g.add(sum, mse)?;
        let total = g.add(sum, motion)?;
        let ov = g.value(o).data();
        let (mut right, mut seen) = (0.0, 0.0);
        for i in 0..n {
            if t.weight[i] > 0.0 {
                seen += 1.0;
                if (ov[i] > 0.0) == (t.terminal[i] > 0.5) {
                    right += 1.0;
                }
            }
        }
        let terms = LossTerms {
            total: g.value(total).item(),
            terminal: g.value(bce).item(),
            attributes: g.value(mse).item(),
            motion: g.value(motion).item(),
            codebook: g.value(kl).item(),
            accuracy: if seen > 0.0 { right / seen } else { 1.0 },
        };
        Ok((total, terms))
    }

    /// Splits head outputs into per-token predictions.
    pub fn predictions(&self, out: &Tensor) -> Vec<TokenPrediction> {
        let a = 1 + MOTION_FLAGS;
        let cs = a + GEOMETRY_ATTRS;
        let p = cs + self.c_s;
        (0..out.rows())
            .map(|r| {
                let row = out.row_slice(r);
                let mut bbox = [0.0; 6];
                bbox.copy_from_slice(&row[a..a + 6]);
                let mut joint = [0.0; 6];
                joint.copy_from_slice(&row[a + 6..a + 12]);
                let mut limit = [0.0; 4];
                limit.copy_from_slice(&row[a + 12..cs]);
                TokenPrediction {
                    o: row[0],
                    motion: [row[1], row[2]],
                    bbox,
                    joint,
                    limit,
                    c_s: row[cs..p].to_vec(),
                    p: row[p..].to_vec(),
                }
            })
            .collect()
    }
}
