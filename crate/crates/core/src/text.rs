//! Toy text conditioning: hashed word tokens and a small transformer.

use std::ops::Range;
use std::sync::Arc;

use artkit_tensor::layers::{BlockLayout, Embedding, LayerNorm, TransformerBlock};
use artkit_tensor::{AttentionLayout, Graph, ParamStore, Rng, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextConfig {
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub buckets: usize,
    pub max_tokens: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            dim: 128,
            blocks: 2,
            heads: 4,
            buckets: 4096,
            max_tokens: 64,
        }
    }
}

/// Lowercased whitespace-separated words with surrounding punctuation
/// removed.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// 64-bit FNV-1a folded to 32 bits, then reduced to a bucket.
pub fn bucket(word: &str, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ((h ^ (h >> 32)) & 0xffff_ffff) as usize % buckets
}

/// Bucket ids of the first `max_tokens` words.
pub fn token_ids(text: &str, cfg: &TextConfig) -> Vec<usize> {
    words(text)
        .iter()
        .take(cfg.max_tokens)
        .map(|w| bucket(w, cfg.buckets))
        .collect()
}

/// Word embeddings plus learned positions, refined by self-attention
/// blocks that only see tokens of the same text.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub cfg: TextConfig,
    embed: Embedding,
    pos: Embedding,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &TextConfig, rng: &mut Rng) -> Result<Self> {
        let embed = Embedding::new(store, &format!("{name}.embed"), cfg.buckets, cfg.dim, 0.02, rng)?;
        let pos = Embedding::new(store, &format!("{name}.pos"), cfg.max_tokens, cfg.dim, 0.02, rng)?;
        let blocks = (0..cfg.blocks)
            .map(|b| TransformerBlock::new(store, &format!("{name}.block{b}"), cfg.dim, cfg.heads, None, rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let ln = LayerNorm::new(store, &format!("{name}.ln"), cfg.dim)?;
        Ok(TextEncoder {
            cfg: cfg.clone(),
            embed,
            pos,
            blocks,
            ln,
        })
    }

    /// Encodes each text; returns the stacked tokens `[Σ len, dim]` and
    /// each text's row range. `None` when no text has any token.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, texts: &[Vec<usize>]) -> Result<Option<(Var, Vec<Range<usize>>)>> {
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::with_capacity(texts.len());
        for t in texts {
            let start = ids.len();
            for (k, &id) in t.iter().take(self.cfg.max_tokens).enumerate() {
                ids.push(id);
                positions.push(k);
            }
            segments.push(start..ids.len());
        }
        if ids.is_empty() {
            return Ok(None);
        }
        let e = self.embed.forward(g, p, &ids)?;
        let q = self.pos.forward(g, p, &positions)?;
        let mut x = g.add(e, q)?;
        let layout = BlockLayout {
            self_attn: Arc::new(AttentionLayout::self_attention(segments.clone())),
            cross_attn: None,
        };
        for b in &self.blocks {
            x = b.forward(g, p, x, None, &layout)?;
        }
        Ok(Some((self.ln.forward(g, p, x)?, segments)))
    }
}
