use std::collections::BTreeMap;
use std::sync::Arc;

use artkit_geometry::{Mesh, Point, ScalarGrid};
use artkit_tensor::layers::{sinusoidal, Activation, BlockLayout, Embedding, LayerNorm, Linear, Mlp, TransformerBlock};
use artkit_tensor::{AttentionLayout, Graph, ParamId, ParamStore, Rng, Tensor, Var};
use rayon::prelude::*;

use super::config::{Prediction, PriorConfig, TABLES};
use super::schedule::DiffusionSchedule;
use crate::dataset::shapes::{hi, lo, FRAME};
use crate::error::{Error, Result};
use crate::text::{bucket, words};

/// Query points evaluated per graph when decoding a field.
const DECODE_CHUNK: usize = 4096;
/// Grid values forced onto the outer lattice layer so extracted surfaces
/// are always closed.
const OUTSIDE: f64 = 1e-3;

/// One supervised VAE batch: a cloud per part and queries tagged with the
/// part they belong to.
#[derive(Clone, Debug)]
pub struct VaeBatch {
    pub clouds: Vec<Vec<Point>>,
    pub coords: Tensor,
    pub sample_of: Vec<usize>,
    pub sdf: Tensor,
}

/// Hard quantization takes the perturbed argmax row; soft takes the
/// Gumbel-Softmax weighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantizeMode {
    Soft,
    Hard,
}

/// Decoded part geometry.
#[derive(Clone, Debug)]
pub struct PartSample {
    /// Normalized latent, as stored on tree nodes.
    pub z: Vec<f64>,
    /// Field on `[-1, 1]³` in the part frame.
    pub grid: Arc<ScalarGrid>,
    /// Surface placed in the part's box; `None` when the field never
    /// crosses zero.
    pub mesh: Option<Mesh>,
}

#[derive(Clone, Debug)]
struct Nets {
    point: Mlp,
    refine: Mlp,
    vae_enc: Linear,
    vae_dec: Mlp,
    sdf: Mlp,
    e_g: Mlp,
    label_embed: Embedding,
    e_s: Mlp,
    codebooks: Vec<ParamId>,
    den_in: Linear,
    den_time: Mlp,
    den_pos: ParamId,
    den_cg: Linear,
    den_cs: Linear,
    den_blocks: Vec<TransformerBlock>,
    den_ln: LayerNorm,
    den_out: Linear,
}

/// SDF VAE, condition encoders, codebooks and latent denoiser.
///
/// Latents handed in and out are normalized: the VAE posterior mean times
/// `latent_scale`.
#[derive(Clone, Debug)]
pub struct ShapePrior {
    pub cfg: PriorConfig,
    pub store: ParamStore,
    pub schedule: DiffusionSchedule,
    pub latent_scale: f64,
    /// Semantic condition of every label seen in training.
    pub labels: BTreeMap<String, Vec<f64>>,
    nets: Nets,
}

/// Hashed words and boundary-marked character trigrams of a label.
pub fn label_ids(label: &str, buckets: usize) -> Vec<usize> {
    let mut ids = Vec::new();
    for w in words(label) {
        ids.push(bucket(&w, buckets));
        let marked: Vec<char> = format!("<{w}>").chars().collect();
        for tri in marked.windows(3) {
            ids.push(bucket(&format!("#{}", tri.iter().collect::<String>()), buckets));
        }
    }
    if ids.is_empty() {
        ids.push(bucket("<empty>", buckets));
    }
    ids
}

fn plane_cell(c: f64, res: usize) -> usize {
    (((c.clamp(-1.0, 1.0) + 1.0) * 0.5 * (res - 1) as f64).round() as usize).min(res - 1)
}

impl ShapePrior {
    pub fn new(cfg: &PriorConfig, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = Rng::seed(seed);
        let r = &mut rng;
        let s = &mut ParamStore::new();
        let (h, c, dz, dd) = (cfg.point_hidden, cfg.channels, cfg.d_z, cfg.denoiser_dim);
        let flat = cfg.plane_cells() * c;
        let eh = cfg.encoder_hidden;
        let gelu = Activation::Gelu;
        let nets = Nets {
            point: Mlp::new(s, "prior.point", &[3, h, h, c], gelu, r)?,
            refine: Mlp::new(s, "prior.refine", &[c, h, c], gelu, r)?,
            vae_enc: Linear::new(s, "prior.vae_enc", flat, 2 * dz, r)?,
            vae_dec: Mlp::new(s, "prior.vae_dec", &[dz, cfg.vae_hidden, flat], gelu, r)?,
            sdf: Mlp::new(s, "prior.sdf", &[3 * c, cfg.sdf_hidden, cfg.sdf_hidden, 1], gelu, r)?,
            e_g: Mlp::new(s, "prior.e_g", &[dz, eh, eh, eh, cfg.c_g], gelu, r)?,
            label_embed: Embedding::new(s, "prior.label_embed", cfg.label_buckets, cfg.label_dim, 0.5, r)?,
            e_s: Mlp::new(s, "prior.e_s", &[cfg.label_dim, eh, eh, eh, cfg.c_s], gelu, r)?,
            codebooks: (0..TABLES)
                .map(|t| s.add(format!("prior.codebook{t}"), Tensor::randn(&[cfg.codebook_rows, cfg.chunk()], 0.3, r)))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            den_in: Linear::new(s, "prior.den_in", dz / TABLES, dd, r)?,
            den_time: Mlp::new(s, "prior.den_time", &[dd, dd, dd], gelu, r)?,
            den_pos: s.add("prior.den_pos", Tensor::randn(&[TABLES + 2, dd], 0.02, r))?,
            den_cg: Linear::new(s, "prior.den_cg", cfg.c_g, dd, r)?,
            den_cs: Linear::new(s, "prior.den_cs", cfg.c_s, dd, r)?,
            den_blocks: (0..cfg.denoiser_blocks)
                .map(|b| TransformerBlock::new(s, &format!("prior.den_block{b}"), dd, cfg.denoiser_heads, None, r))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            den_ln: LayerNorm::new(s, "prior.den_ln", dd)?,
            den_out: Linear::new(s, "prior.den_out", dd, dz / TABLES, r)?,
        };
        Ok(ShapePrior {
            cfg: cfg.clone(),
            store: std::mem::take(s),
            schedule: DiffusionSchedule::linear(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)?,
            latent_scale: 1.0,
            labels: BTreeMap::new(),
            nets,
        })
    }

    pub fn codebook(&self, t: usize) -> &Tensor {
        self.store.get(self.nets.codebooks[t])
    }

    pub fn codebook_ids(&self) -> &[ParamId] {
        &self.nets.codebooks
    }

    // Graph building blocks.

    /// Per-point features mean-scattered onto the cell each point projects
    /// to in every plane, then refined per cell with a residual MLP.
    /// Returns `[S · 3R², C]`.
    pub fn encode_points(&self, g: &mut Graph, clouds: &[Vec<Point>]) -> Result<Var> {
        let res = self.cfg.res;
        let cells = self.cfg.plane_cells();
        let mut rows = Vec::new();
        let mut pairs = Vec::new();
        for (s, cloud) in clouds.iter().enumerate() {
            if cloud.is_empty() {
                return Err(Error::EmptyGeometry(format!("point cloud {s}")));
            }
            for p in cloud {
                let src = rows.len();
                rows.push(*p);
                for (plane, (a, b)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
                    let (u, v) = (plane_cell(p[a], res), plane_cell(p[b], res));
                    pairs.push((src, s * cells + plane * res * res + v * res + u));
                }
            }
        }
        let x = g.constant(Tensor::from_rows(&rows)?);
        let f = self.nets.point.forward(g, &self.store, x)?;
        let planes = g.scatter_mean(f, &pairs, clouds.len() * cells)?;
        let r = self.nets.refine.forward(g, &self.store, planes)?;
        Ok(g.add(planes, r)?)
    }

    /// `(μ, log σ²)`, each `[S, d_z]`.
    pub fn vae_encode(&self, g: &mut Graph, planes: Var) -> Result<(Var, Var)> {
        let s = g.shape(planes)[0] / self.cfg.plane_cells();
        let flat = g.reshape(planes, &[s, self.cfg.plane_cells() * self.cfg.channels])?;
        let out = self.nets.vae_enc.forward(g, &self.store, flat)?;
        let mu = g.slice_cols(out, 0, self.cfg.d_z)?;
        let logvar = g.slice_cols(out, self.cfg.d_z, self.cfg.d_z)?;
        Ok((mu, logvar))
    }

    /// `μ + exp(½ log σ²) · n` for a fixed standard normal `noise`.
    pub fn vae_sample(&self, g: &mut Graph, mu: Var, logvar: Var, noise: &Tensor) -> Result<Var> {
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let n = g.constant(noise.clone());
        let spread = g.mul(sigma, n)?;
        Ok(g.add(mu, spread)?)
    }

    /// Raw (unnormalized) latents `[S, d_z]` to planes `[S · 3R², C]`.
    pub fn vae_decode(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let s = g.shape(z)[0];
        let flat = self.nets.vae_dec.forward(g, &self.store, z)?;
        Ok(g.reshape(flat, &[s * self.cfg.plane_cells(), self.cfg.channels])?)
    }

    /// Signed distance at each query `[Q, 1]`; coordinates are clamped to
    /// the frame cube.
    pub fn sdf_query(&self, g: &mut Graph, planes: Var, coords: &Tensor, sample_of: &[usize]) -> Result<Var> {
        let f = g.triplane_sample(planes, self.cfg.res, coords, sample_of)?;
        Ok(self.nets.sdf.forward(g, &self.store, f)?)
    }

    /// Mean absolute SDF error plus `kl_weight · KL`, with one
    /// reparameterized sample. Returns the loss, the L1 term and the KL term.
    pub fn sdf_vae_loss(&self, g: &mut Graph, batch: &VaeBatch, noise: &Tensor, kl_weight: f64) -> Result<(Var, f64, f64)> {
        let planes = self.encode_points(g, &batch.clouds)?;
        let (mu, logvar) = self.vae_encode(g, planes)?;
        let z = self.vae_sample(g, mu, logvar, noise)?;
        let dec = self.vae_decode(g, z)?;
        let pred = self.sdf_query(g, dec, &batch.coords, &batch.sample_of)?;
        let l1 = g.l1(pred, &batch.sdf)?;
        let kl = g.gaussian_kl(mu, logvar)?;
        let wkl = g.scale(kl, kl_weight);
        let loss = g.add(l1, wkl)?;
        Ok((loss, g.value(l1).item(), g.value(kl).item()))
    }

    /// Geometry condition `c_g` from normalized latents.
    pub fn geometry_condition(&self, g: &mut Graph, z: Var) -> Result<Var> {
        Ok(self.nets.e_g.forward(g, &self.store, z)?)
    }

    /// Semantic condition `c_s` per label: mean of hashed subword
    /// embeddings through a 4-layer MLP.
    pub fn semantic_condition(&self, g: &mut Graph, labels: &[&str]) -> Result<Var> {
        let mut ids = Vec::new();
        let mut pairs = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            for id in label_ids(l, self.cfg.label_buckets) {
                pairs.push((ids.len(), i));
                ids.push(id);
            }
        }
        let e = self.nets.label_embed.forward(g, &self.store, &ids)?;
        let pooled = g.scatter_mean(e, &pairs, labels.len())?;
        Ok(self.nets.e_s.forward(g, &self.store, pooled)?)
    }

    /// `D_t = -‖m^t_l - c_g^t‖` for each table: four `[S, N]` blocks.
    pub fn distance_logits(&self, g: &mut Graph, c_g: Var) -> Result<Vec<Var>> {
        let k = self.cfg.chunk();
        (0..TABLES)
            .map(|t| {
                let chunk = g.slice_cols(c_g, t * k, k)?;
                let m = g.param(&self.store, self.nets.codebooks[t]);
                Ok(g.neg_distance(chunk, m)?)
            })
            .collect()
    }

    /// Soft quantization with fixed Gumbel noise: per table,
    /// `softmax((logits + g) / τ)` weights the codebook rows. `[S, c_g]`.
    pub fn quantize(&self, g: &mut Graph, logits: &[Var], gumbel: &[Tensor], tau: f64) -> Result<Var> {
        let mut parts = Vec::with_capacity(TABLES);
        for t in 0..TABLES {
            let n = g.constant(gumbel[t].clone());
            let x = g.add(logits[t], n)?;
            let x = g.scale(x, 1.0 / tau);
            let w = g.softmax(x);
            let m = g.param(&self.store, self.nets.codebooks[t]);
            parts.push(g.matmul(w, m)?);
        }
        Ok(g.concat_cols(&parts)?)
    }

    /// Clean-latent (or noise) prediction `[S, d_z]` from noisy latents.
    /// Each sample is four latent-chunk tokens plus a `ĉ_g` and a `c_s`
    /// token, all carrying a sinusoidal step embedding.
    pub fn denoise(&self, g: &mut Graph, z_t: Var, t: &[usize], c_hat: Var, c_s: Var) -> Result<Var> {
        let s = t.len();
        let (dd, chunk) = (self.cfg.denoiser_dim, self.cfg.d_z / TABLES);
        let p = &self.store;
        let chunks = g.reshape(z_t, &[s * TABLES, chunk])?;
        let x = self.nets.den_in.forward(g, p, chunks)?;
        let cg = self.nets.den_cg.forward(g, p, c_hat)?;
        let cs = self.nets.den_cs.forward(g, p, c_s)?;
        let all = g.concat_rows(&[x, cg, cs])?;
        let per = TABLES + 2;
        let mut order = Vec::with_capacity(s * per);
        for i in 0..s {
            order.extend((0..TABLES).map(|c| i * TABLES + c));
            order.push(s * TABLES + i);
            order.push(s * TABLES + s + i);
        }
        let tokens = g.gather_rows(all, &order)?;
        let time_rows: Vec<Vec<f64>> = t.iter().map(|&k| sinusoidal(k as f64, dd)).collect();
        let time_in = g.constant(Tensor::from_rows(&time_rows)?);
        let time = self.nets.den_time.forward(g, p, time_in)?;
        let time_idx: Vec<usize> = (0..s * per).map(|r| r / per).collect();
        let time = g.gather_rows(time, &time_idx)?;
        let pos = g.param(p, self.nets.den_pos);
        let pos_idx: Vec<usize> = (0..s * per).map(|r| r % per).collect();
        let pos = g.gather_rows(pos, &pos_idx)?;
        let mut h = g.add(tokens, time)?;
        h = g.add(h, pos)?;
        let layout = BlockLayout {
            self_attn: Arc::new(AttentionLayout::self_attention((0..s).map(|i| i * per..(i + 1) * per).collect())),
            cross_attn: None,
        };
        for b in &self.nets.den_blocks {
            h = b.forward(g, p, h, None, &layout)?;
        }
        let h = self.nets.den_ln.forward(g, p, h)?;
        let keep: Vec<usize> = (0..s).flat_map(|i| (0..TABLES).map(move |c| i * per + c)).collect();
        let h = g.gather_rows(h, &keep)?;
        let out = self.nets.den_out.forward(g, p, h)?;
        Ok(g.reshape(out, &[s, self.cfg.d_z])?)
    }

    /// `‖ε(z_t, t, ĉ_g, c_s) − target‖²` averaged over elements, where the
    /// target is `z₀` (or the noise, in epsilon mode).
    pub fn diffusion_loss(&self, g: &mut Graph, z0: &Tensor, t: &[usize], noise: &Tensor, c_hat: Var, c_s: Var) -> Result<Var> {
        let d = self.cfg.d_z;
        let mut zt = Vec::with_capacity(z0.len());
        for (i, &k) in t.iter().enumerate() {
            zt.extend(self.schedule.noisy(&z0.data()[i * d..(i + 1) * d], k, &noise.data()[i * d..(i + 1) * d]));
        }
        let zt = g.constant(Tensor::new(&[t.len(), d], zt)?);
        let pred = self.denoise(g, zt, t, c_hat, c_s)?;
        let target = match self.cfg.prediction {
            Prediction::Z0 => z0,
            Prediction::Epsilon => noise,
        };
        Ok(g.mse(pred, target)?)
    }

    // Inference on plain values.

    /// Normalized posterior means of part clouds.
    pub fn encode_latents(&self, clouds: &[Vec<Point>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let planes = self.encode_points(&mut g, clouds)?;
        let (mu, _) = self.vae_encode(&mut g, planes)?;
        let v = g.value(mu);
        Ok((0..clouds.len())
            .map(|i| v.row_slice(i).iter().map(|x| x * self.latent_scale).collect())
            .collect())
    }

    pub fn semantic_values(&self, labels: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let c = self.semantic_condition(&mut g, labels)?;
        let v = g.value(c);
        Ok((0..labels.len()).map(|i| v.row_slice(i).to_vec()).collect())
    }

    /// Distance logits `[4 × N]` (row-major) for normalized latents.
    pub fn distance_values(&self, z: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(z)?);
        let c = self.geometry_condition(&mut g, x)?;
        let d = self.distance_logits(&mut g, c)?;
        Ok((0..z.len())
            .map(|i| d.iter().flat_map(|&v| g.value(v).row_slice(i).to_vec()).collect())
            .collect())
    }

    /// `ĉ_g` from per-table logits `[4 × N]`. Gumbel noise is drawn from
    /// `rng`; without one the noise is zero.
    pub fn quantize_values(&self, logits: &[f64], tau: f64, mode: QuantizeMode, mut rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        let n = self.cfg.codebook_rows;
        if logits.len() != TABLES * n {
            return Err(Error::Dimension {
                what: "codebook logits",
                expected: TABLES * n,
                got: logits.len(),
            });
        }
        let mut out = Vec::with_capacity(self.cfg.c_g);
        for t in 0..TABLES {
            let row = &logits[t * n..(t + 1) * n];
            let w = match rng.as_deref_mut() {
                Some(r) => artkit_tensor::gumbel_softmax_weights(row, tau, r),
                None => softmax(row, tau),
            };
            out.extend(combine_rows(self.codebook(t), &w, mode));
        }
        Ok(out)
    }

    /// Ancestral sampling with the posterior mean at every step; returns a
    /// normalized latent.
    pub fn diffusion_sample(&self, c_hat: &[f64], c_s: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let d = self.cfg.d_z;
        let mut z = rng.normal_vec(d);
        for t in (1..=self.schedule.steps()).rev() {
            let mut g = Graph::new();
            let zt = g.constant(Tensor::new(&[1, d], z.clone())?);
            let ch = g.constant(Tensor::row(c_hat));
            let cs = g.constant(Tensor::row(c_s));
            let pred = self.denoise(&mut g, zt, &[t], ch, cs)?;
            let pred = g.value(pred).data().to_vec();
            let z0 = match self.cfg.prediction {
                Prediction::Z0 => pred,
                Prediction::Epsilon => self.schedule.z0_from_noise(&z, t, &pred),
            };
            if t == 1 {
                return Ok(z0);
            }
            let (mean, var) = self.schedule.posterior(&z0, &z, t);
            let sd = var.sqrt();
            z = mean.iter().map(|m| m + sd * rng.normal()).collect();
        }
        Ok(z)
    }

    /// Quantize logits, then denoise a latent under that condition.
    pub fn sample_latent(&self, logits: &[f64], c_s: &[f64], tau: f64, rng: &mut Rng) -> Result<Vec<f64>> {
        let c_hat = self.quantize_values(logits, tau, QuantizeMode::Soft, Some(&mut *rng))?;
        self.diffusion_sample(&c_hat, c_s, rng)
    }

    /// The decoded field of a normalized latent on `res` cells per axis
    /// over `[-1, 1]³`. The outer lattice layer is forced positive.
    pub fn decode_field(&self, z: &[f64], res: usize) -> Result<ScalarGrid> {
        if z.len() != self.cfg.d_z {
            return Err(Error::Dimension {
                what: "latent",
                expected: self.cfg.d_z,
                got: z.len(),
            });
        }
        let (nodes, _) = ScalarGrid::nodes([-1.0; 3], [1.0; 3], res)?;
        let mut g = Graph::new();
        let raw: Vec<f64> = z.iter().map(|v| v / self.latent_scale).collect();
        let zv = g.constant(Tensor::row(&raw));
        let planes = self.vae_decode(&mut g, zv)?;
        let planes = g.value(planes).clone();
        let values: Vec<Vec<f64>> = nodes
            .par_chunks(DECODE_CHUNK)
            .map(|chunk| {
                let mut g = Graph::new();
                let pv = g.constant(planes.clone());
                let coords = Tensor::from_rows(chunk)?;
                let out = self.sdf_query(&mut g, pv, &coords, &vec![0; chunk.len()])?;
                Ok(g.value(out).data().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values: Vec<f64> = values.concat();
        let n = res + 1;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if [i, j, k].iter().any(|&c| c == 0 || c == res) {
                        let v = &mut values[(k * n + j) * n + i];
                        *v = v.max(OUTSIDE);
                    }
                }
            }
        }
        Ok(ScalarGrid::from_values([-1.0; 3], [1.0; 3], res, values)?)
    }

    /// Field and placed mesh of a normalized latent.
    pub fn decode_part(&self, z: &[f64], bbox: &[f64; 6], res: usize) -> Result<PartSample> {
        let grid = self.decode_field(z, res)?;
        let mut mesh = grid.extract(0.0);
        mesh.cleanup();
        let mesh = if mesh.is_empty() {
            None
        } else {
            mesh.map_box([-FRAME; 3], [FRAME; 3], lo(bbox), hi(bbox));
            Some(mesh)
        };
        Ok(PartSample {
            z: z.to_vec(),
            grid: Arc::new(grid),
            mesh,
        })
    }

    /// Codebook logits and semantic condition to a mesh in `bbox`:
    /// quantize, denoise, decode, extract.
    pub fn sample_part_geometry(
        &self,
        logits: &[f64],
        c_s: &[f64],
        bbox: &[f64; 6],
        res: usize,
        tau: f64,
        rng: &mut Rng,
    ) -> Result<PartSample> {
        let z = self.sample_latent(logits, c_s, tau, rng)?;
        self.decode_part(&z, bbox, res)
    }

    /// The training label whose semantic condition is closest to `c_s`.
    pub fn nearest_label(&self, c_s: &[f64]) -> Option<&str> {
        self.labels
            .iter()
            .map(|(l, v)| (l, v.iter().zip(c_s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, _)| l.as_str())
    }
}

fn softmax(x: &[f64], tau: f64) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| ((v - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Weighted sum of codebook rows, or the row with the largest weight.
pub fn combine_rows(m: &Tensor, w: &[f64], mode: QuantizeMode) -> Vec<f64> {
    let d = m.cols();
    match mode {
        QuantizeMode::Hard => {
            let best = w
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            m.row_slice(best).to_vec()
        }
        QuantizeMode::Soft => {
            let mut out = vec![0.0; d];
            for (r, &wr) in w.iter().enumerate() {
                for (o, v) in out.iter_mut().zip(m.row_slice(r)) {
                    *o += wr * v;
                }
            }
            out
        }
    }
}
