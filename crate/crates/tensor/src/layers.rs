//! Parameterized building blocks. Each layer owns [`ParamId`]s into a
//! shared [`ParamStore`] and is applied to a [`Graph`] with `forward`.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::graph::{AttentionLayout, Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Gelu => g.gelu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let w = store.add(format!("{name}.w"), Tensor::uniform(&[input, output], bound, rng))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, output]))?;
        Ok(Linear { w, b, input, output })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Stack of linear layers with an activation between consecutive layers and
/// none after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    /// `dims` lists every width including input and output.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], act: Activation, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(TensorError::invalid("mlp", "need at least input and output widths"));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, act })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, p, x)?;
            if i < last {
                x = self.act.apply(g, x);
            }
        }
        Ok(x)
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[1, dim], 1.0))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1, dim]))?;
        Ok(LayerNorm { gain, bias })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(p, self.gain);
        let bias = g.param(p, self.bias);
        g.layer_norm(x, gain, bias, Self::EPS)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, std: f64, rng: &mut Rng) -> Result<Self> {
        let table = store.add(format!("{name}.w"), Tensor::randn(&[rows, dim], std, rng))?;
        Ok(Embedding { table, rows, dim })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, index: &[usize]) -> Result<Var> {
        let t = g.param(p, self.table);
        g.gather_rows(t, index)
    }
}

/// GRU cell with reset, update and candidate gates.
///
/// `r = σ(x Wr + h Ur + br)`, `u = σ(x Wu + h Uu + bu)`,
/// `n = tanh(x Wn + bn + r ⊙ (h Un + cn))`, `h' = (1 - u) ⊙ n + u ⊙ h`.
#[derive(Clone, Debug)]
pub struct Gru {
    pub wx: Linear,
    pub wh: Linear,
    pub hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Gru {
            wx: Linear::new(store, &format!("{name}.x"), input, 3 * hidden, rng)?,
            wh: Linear::new(store, &format!("{name}.h"), hidden, 3 * hidden, rng)?,
            hidden,
        })
    }

    fn step(&self, g: &mut Graph, p: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let gx = self.wx.forward(g, p, x)?;
        let gh = self.wh.forward(g, p, h)?;
        let xr = g.slice_cols(gx, 0, hd)?;
        let xu = g.slice_cols(gx, hd, hd)?;
        let xn = g.slice_cols(gx, 2 * hd, hd)?;
        let hr = g.slice_cols(gh, 0, hd)?;
        let hu = g.slice_cols(gh, hd, hd)?;
        let hn = g.slice_cols(gh, 2 * hd, hd)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let u = g.add(xu, hu)?;
        let u = g.sigmoid(u);
        let rh = g.mul(r, hn)?;
        let n = g.add(xn, rh)?;
        let n = g.tanh(n);
        // h' = n + u ⊙ (h - n)
        let d = g.sub(h, n)?;
        let ud = g.mul(u, d)?;
        g.add(n, ud)
    }

    /// Runs every sequence from a zero state and returns the final hidden
    /// states as `[sequences.len(), hidden]` in input order. Each sequence
    /// lists rows of `x`; all sequences must be nonempty.
    pub fn final_states(&self, g: &mut Graph, p: &ParamStore, x: Var, sequences: &[Vec<usize>]) -> Result<Var> {
        if sequences.iter().any(Vec::is_empty) {
            return Err(TensorError::invalid("gru", "empty sequence"));
        }
        if sequences.is_empty() {
            return Err(TensorError::invalid("gru", "no sequences"));
        }
        // Longest first so the active set at every step is a prefix.
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        order.sort_by(|&a, &b| sequences[b].len().cmp(&sequences[a].len()).then(a.cmp(&b)));
        let max_len = sequences[order[0]].len();
        let mut h = g.constant(Tensor::zeros(&[order.len(), self.hidden]));
        // finals[k] = (var, row) holding the final state of order[k]
        let mut finals: Vec<Option<(Var, usize)>> = vec![None; order.len()];
        for t in 0..max_len {
            let active = order.iter().take_while(|&&s| sequences[s].len() > t).count();
            let rows: Vec<usize> = order[..active].iter().map(|&s| sequences[s][t]).collect();
            let xt = g.gather_rows(x, &rows)?;
            let hp = if g.shape(h)[0] == active { h } else { g.slice_rows(h, 0, active)? };
            h = self.step(g, p, xt, hp)?;
            for (k, &s) in order[..active].iter().enumerate() {
                if sequences[s].len() == t + 1 {
                    finals[k] = Some((h, k));
                }
            }
        }
        // Stack each step output holding a final state once, then pick rows.
        let mut parts: Vec<Var> = Vec::new();
        let mut offsets: Vec<usize> = Vec::new();
        let mut base = 0;
        let mut index = vec![0usize; order.len()];
        for (k, &s) in order.iter().enumerate() {
            let (var, row) = finals[k].expect("every sequence finishes");
            let off = match parts.iter().position(|&v| v == var) {
                Some(pos) => offsets[pos],
                None => {
                    parts.push(var);
                    offsets.push(base);
                    base += g.shape(var)[0];
                    base - g.shape(var)[0]
                }
            };
            index[s] = off + row;
        }
        let stacked = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
        g.gather_rows(stacked, &index)
    }
}

/// Bidirectional GRU summarizing each sequence as
/// `[final forward state, final backward state]`.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl BiGru {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(BiGru {
            fwd: Gru::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            bwd: Gru::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn output(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, sequences: &[Vec<usize>]) -> Result<Var> {
        let f = self.fwd.final_states(g, p, x, sequences)?;
        let reversed: Vec<Vec<usize>> = sequences.iter().map(|s| s.iter().rev().copied().collect()).collect();
        let b = self.bwd.final_states(g, p, x, &reversed)?;
        g.concat_cols(&[f, b])
    }
}

/// Multi-head attention with separate query and key/value sources.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, kv_dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(TensorError::invalid("attention", format!("width {dim} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), kv_dim, dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), kv_dim, dim, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, ctx: Var, layout: Arc<AttentionLayout>) -> Result<Var> {
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, ctx)?;
        let v = self.v.forward(g, p, ctx)?;
        let a = g.attention(q, k, v, self.heads, layout)?;
        self.o.forward(g, p, a)
    }
}

/// Pre-norm transformer block: self-attention, optional cross-attention,
/// then a GELU feed-forward, each wrapped in a residual.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub cross: Option<(LayerNorm, MultiHeadAttention)>,
    pub ln3: LayerNorm,
    pub ff: Mlp,
}

/// Where each token may look inside a [`TransformerBlock`].
#[derive(Clone, Debug)]
pub struct BlockLayout {
    pub self_attn: Arc<AttentionLayout>,
    /// Query segments of `x` paired with key segments of the context.
    pub cross_attn: Option<Arc<AttentionLayout>>,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ctx_dim: Option<usize>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let cross = match ctx_dim {
            Some(c) => Some((
                LayerNorm::new(store, &format!("{name}.ln2"), dim)?,
                MultiHeadAttention::new(store, &format!("{name}.cross"), dim, c, heads, rng)?,
            )),
            None => None,
        };
        Ok(TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, dim, heads, rng)?,
            cross,
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), dim)?,
            ff: Mlp::new(store, &format!("{name}.ff"), &[dim, 4 * dim, dim], Activation::Gelu, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, ctx: Option<Var>, layout: &BlockLayout) -> Result<Var> {
        let h = self.ln1.forward(g, p, x)?;
        let a = self.attn.forward(g, p, h, h, layout.self_attn.clone())?;
        let mut x = g.add(x, a)?;
        if let (Some((ln, attn)), Some(ctx), Some(cl)) = (&self.cross, ctx, &layout.cross_attn) {
            let h = ln.forward(g, p, x)?;
            let a = attn.forward(g, p, h, ctx, cl.clone())?;
            x = g.add(x, a)?;
        }
        let h = self.ln3.forward(g, p, x)?;
        let f = self.ff.forward(g, p, h)?;
        g.add(x, f)
    }
}

/// Sinusoidal embedding of a scalar position, `[sin(t ω_k), cos(t ω_k)]`.
pub fn sinusoidal(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let w = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t * w).sin();
        out[half + k] = (t * w).cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gru_matches_manual_unroll() {
        let mut rng = Rng::seed(1);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 3, 4, &mut rng).unwrap();
        let xs = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let seqs = vec![vec![0, 1, 2], vec![3], vec![4, 0]];
        let mut g = Graph::new();
        let x = g.constant(xs.clone());
        let batched = gru.final_states(&mut g, &store, x, &seqs).unwrap();
        let batched = g.value(batched).clone();
        for (s, seq) in seqs.iter().enumerate() {
            let mut g = Graph::new();
            let mut h = g.constant(Tensor::zeros(&[1, 4]));
            for &r in seq {
                let xt = g.constant(Tensor::row(xs.row_slice(r)));
                h = gru.step(&mut g, &store, xt, h).unwrap();
            }
            let single = g.value(h).data();
            for (a, b) in single.iter().zip(batched.row_slice(s)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bigru_single_element_halves_share_input() {
        let mut rng = Rng::seed(2);
        let mut store = ParamStore::new();
        let bi = BiGru::new(&mut store, "b", 3, 5, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[2, 3], 1.0, &mut rng));
        let y = bi.forward(&mut g, &store, x, &[vec![1], vec![0, 1, 0, 1]]).unwrap();
        assert_eq!(g.shape(y), &[2, 10]);
        // Copying the forward weights into the backward cell makes both
        // halves agree on a one-element sequence.
        let mut mirrored = store.clone();
        for (a, b) in [
            (bi.fwd.wx.w, bi.bwd.wx.w),
            (bi.fwd.wx.b, bi.bwd.wx.b),
            (bi.fwd.wh.w, bi.bwd.wh.w),
            (bi.fwd.wh.b, bi.bwd.wh.b),
        ] {
            *mirrored.get_mut(b) = store.get(a).clone();
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[1, 3], 1.0, &mut rng));
        let y = bi.forward(&mut g, &mirrored, x, &[vec![0]]).unwrap();
        let v = g.value(y).data();
        assert_eq!(&v[..5], &v[5..]);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let mut rng = Rng::seed(3);
        let mut store = ParamStore::new();
        let bi = BiGru::new(&mut store, "b", 2, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2]));
        assert!(bi.forward(&mut g, &store, x, &[vec![]]).is_err());
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = Rng::seed(4);
        let mut store = ParamStore::new();
        let blk = TransformerBlock::new(&mut store, "t", 8, 2, Some(6), &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[5, 8], 1.0, &mut rng));
        let c = g.constant(Tensor::randn(&[3, 6], 1.0, &mut rng));
        let layout = BlockLayout {
            self_attn: Arc::new(AttentionLayout::self_attention(vec![0..2, 2..5])),
            cross_attn: Some(Arc::new(AttentionLayout {
                queries: vec![0..2, 2..5],
                keys: vec![0..1, 1..3],
            })),
        };
        let y = blk.forward(&mut g, &store, x, Some(c), &layout).unwrap();
        assert_eq!(g.shape(y), &[5, 8]);
    }
}
