//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! `ARTKIT_ACCEPT=1,3` limits the run to the listed criteria.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use artkit::artformer::{edit, evaluate, examples, teacher_forcing_rounds, train_artformer, ArtFormer, Episode, TokenTargets};
use artkit::artic::{export_urdf, from_json, to_json, validate_tree, ArticTree, PartNode};
use artkit::cache::{load_caches, preprocess, PartTargets};
use artkit::dataset::templates::Description;
use artkit::dataset::{build_dataset, parse_counts, CapJoint, Category, Corpus, PartShape};
use artkit::metrics::*;
use artkit::pipeline::{generate, generated_geometry, Profile};
use artkit::prior::{train_prior, PartRecord, PriorConfig, PriorTrainConfig, QuantizeMode, ShapePrior, TABLES};
use artkit_geometry::sdf::{Cuboid, Sphere};
use artkit_geometry::{chamfer, chamfer_brute_force, marching_cubes, Point, VoxelGrid};
use artkit_tensor::{grad_check_params, Graph, ParamId, Rng, Tensor, TensorError};
use rand::Rng as _;

type Outcome = Result<String, String>;

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn wrap(e: artkit::Error) -> TensorError {
    TensorError::invalid("acceptance", e.to_string())
}

// ------------------------------------------------------------------ 1

fn tiny_prior() -> PriorConfig {
    PriorConfig {
        d_z: 4,
        channels: 2,
        res: 4,
        point_hidden: 4,
        vae_hidden: 6,
        sdf_hidden: 6,
        points: 16,
        queries: 12,
        c_g: 8,
        c_s: 4,
        codebook_rows: 3,
        encoder_hidden: 5,
        label_buckets: 16,
        label_dim: 3,
        diffusion_steps: 10,
        denoiser_dim: 8,
        denoiser_blocks: 1,
        denoiser_heads: 2,
        ..PriorConfig::desk()
    }
}

fn params_with(store: &artkit_tensor::ParamStore, prefixes: &[&str]) -> Vec<ParamId> {
    store
        .iter()
        .filter(|(_, n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(id, _, _)| id)
        .collect()
}

fn art_node(parent: Option<usize>, center: [f64; 3], limit: [f64; 4], z: f64) -> PartNode {
    PartNode {
        parent,
        label: "part".into(),
        bbox: [center[0] - 0.1, center[1] - 0.1, center[2] - 0.1, center[0] + 0.1, center[1] + 0.1, center[2] + 0.1],
        z: vec![z; 3],
        joint: [center[0], center[1], center[2], 0.0, 0.0, 1.0],
        limit,
    }
}

fn gradient_integrity() -> Outcome {
    let mut errs = BTreeMap::new();

    let prior = ShapePrior::new(&tiny_prior(), 3).unwrap();
    let mut rng = Rng::seed(4);
    let shape = common::door_panel();
    let parts = [common::record(shape.clone(), "door"), common::record(PartShape::Cylinder, "body")];
    let meshes = [shape.frame_mesh(24).unwrap(), PartShape::Cylinder.frame_mesh(24).unwrap()];
    let batch = artkit::prior::vae_batch(&prior, &[&parts[0], &parts[1]], &[&meshes[0], &meshes[1]], &mut rng).unwrap();
    let noise = Tensor::randn(&[2, 4], 1.0, &mut rng);
    let ids = params_with(&prior.store, &["prior.point", "prior.refine", "prior.vae_", "prior.sdf"]);
    let e = grad_check_params(&prior.store, &ids, 1e-4, |g, p| {
        let mut local = prior.clone();
        local.store = p.clone();
        Ok(local.sdf_vae_loss(g, &batch, &noise, 0.1).map_err(wrap)?.0)
    })
    .map_err(|e| e.to_string())?;
    errs.insert("sdf vae", e);

    let z0 = Tensor::randn(&[2, 4], 1.0, &mut rng);
    let eps = Tensor::randn(&[2, 4], 1.0, &mut rng);
    let c_hat = Tensor::randn(&[2, 8], 1.0, &mut rng);
    let ids = params_with(&prior.store, &["prior.den", "prior.e_s", "prior.label_embed"]);
    let e = grad_check_params(&prior.store, &ids, 1e-6, |g, p| {
        let mut local = prior.clone();
        local.store = p.clone();
        let ch = g.constant(c_hat.clone());
        let cs = local.semantic_condition(g, &["door", "drawer"]).map_err(wrap)?;
        local.diffusion_loss(g, &z0, &[3, 9], &eps, ch, cs).map_err(wrap)
    })
    .map_err(|e| e.to_string())?;
    errs.insert("diffusion", e);

    let z = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let gumbel: Vec<Tensor> = (0..TABLES).map(|_| Tensor::new(&[3, 3], rng.gumbel_vec(9)).unwrap()).collect();
    let target = Tensor::randn(&[3, 8], 0.5, &mut rng);
    let ids = params_with(&prior.store, &["prior.e_g", "prior.codebook"]);
    let e = grad_check_params(&prior.store, &ids, 1e-6, |g, p| {
        let mut local = prior.clone();
        local.store = p.clone();
        let zv = g.constant(z.clone());
        let c_g = local.geometry_condition(g, zv).map_err(wrap)?;
        let d = local.distance_logits(g, c_g).map_err(wrap)?;
        let q = local.quantize(g, &d, &gumbel, 0.7).map_err(wrap)?;
        g.mse(q, &target)
    })
    .map_err(|e| e.to_string())?;
    errs.insert("gumbel softmax", e);

    // Transformer on a 3-node tree, parameters moved off their initializers.
    let cfg = artkit::artformer::ArtConfig {
        d_model: 8,
        blocks: 1,
        heads: 2,
        mapper_hidden: 6,
        a_dim: 4,
        p_dim: 12,
        text: artkit::text::TextConfig {
            dim: 8,
            blocks: 1,
            heads: 2,
            buckets: 32,
            max_tokens: 8,
        },
        ..artkit::artformer::ArtConfig::desk()
    };
    let mut model = ArtFormer::new(&cfg, 3, 2, 2, 3).unwrap();
    let mut r = Rng::seed(103);
    for id in model.store.iter().map(|(id, _, _)| id).collect::<Vec<_>>() {
        for v in model.store.get_mut(id).data_mut() {
            *v += 0.1 * r.normal();
        }
    }
    let nodes = vec![
        art_node(None, [0.0; 3], [0.0; 4], 0.5),
        art_node(Some(0), [0.0, 0.0, 0.3], [0.0, 0.2, 0.0, 0.0], -0.4),
        art_node(Some(0), [0.0, 0.0, 0.6], [0.0, 0.0, 0.0, 1.5], 0.9),
    ];
    let rounds = teacher_forcing_rounds(&ArticTree::new(nodes.clone())).unwrap();
    let caches: Vec<PartTargets> = (0..3)
        .map(|_| PartTargets {
            z: vec![0.0; 3],
            c_s: r.normal_vec(2),
            d: (0..TABLES * 2).map(|_| -3.0 * r.uniform()).collect(),
        })
        .collect();
    let mut targets = TokenTargets::default();
    targets.push_rounds(&nodes, &caches, &rounds, 2, TABLES * 2);
    let ids: Vec<_> = model.store.iter().map(|(id, _, _)| id).collect();
    let e = common::grad_check_floored(&model.store, &ids, 1e-5, |g, p| {
        let mut local = model.clone();
        local.store = p.clone();
        let ep = Episode {
            nodes: &nodes,
            text: "a cabinet with two drawers",
            contexts: rounds.iter().map(|r| r.context.clone()).collect(),
        };
        let out = local.forward(g, &[ep]).map_err(wrap)?;
        Ok(local.loss(g, out, &targets).map_err(wrap)?.0)
    })
    .map_err(|e| e.to_string())?;
    errs.insert("total loss", e);

    let attrs = Tensor::from_rows(&nodes.iter().map(artkit::artformer::node_attributes).collect::<Vec<_>>()).unwrap();
    let parents: Vec<Option<usize>> = nodes.iter().map(|n| n.parent).collect();
    let weights = Tensor::randn(&[3, cfg.p_dim], 1.0, &mut r);
    let ids = params_with(&model.store, &["art.tpe."]);
    let e = common::grad_check_floored(&model.store, &ids, 1e-6, |g, p| {
        let mut local = model.clone();
        local.store = p.clone();
        let x = g.constant(attrs.clone());
        let pe = local.position_embeddings(g, x, &parents).map_err(wrap)?;
        let w = g.constant(weights.clone());
        let y = g.mul(pe, w)?;
        Ok(g.sum(y))
    })
    .map_err(|e| e.to_string())?;
    errs.insert("tree position embedding", e);

    let worst = errs.values().cloned().fold(0.0, f64::max);
    let detail = errs.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    check(worst < 1e-4, format!("relative error above 1e-4: {detail}"))?;
    Ok(detail)
}

// ------------------------------------------------------------------ 2

fn quantization_semantics() -> Outcome {
    let cfg = PriorConfig {
        codebook_rows: 2,
        ..PriorConfig::desk()
    };
    let prior = ShapePrior::new(&cfg, 3).unwrap();
    let logits: Vec<f64> = (0..TABLES).flat_map(|_| [3f64.ln(), 0.0]).collect();
    let row0 = prior.codebook(0).row_slice(0).to_vec();
    let mut rng = Rng::seed(10);
    let draws = 10_000;
    let hits = (0..draws)
        .filter(|_| {
            let q = prior.quantize_values(&logits, 1.0, QuantizeMode::Hard, Some(&mut rng)).unwrap();
            q[..cfg.chunk()] == row0[..]
        })
        .count();
    let freq = hits as f64 / draws as f64;
    check((freq - 0.75).abs() <= 0.02, format!("hard sample frequency {freq}, expected 0.75 ± 0.02"))?;

    let prior = ShapePrior::new(&PriorConfig::desk(), 4).unwrap();
    let k = prior.cfg.chunk();
    let mut rng = Rng::seed(11);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let z = rng.normal_vec(prior.cfg.d_z);
        let d = prior.distance_values(&[z.clone()]).unwrap().remove(0);
        let q = prior.quantize_values(&d, 1e-8, QuantizeMode::Soft, None).unwrap();
        let mut g = Graph::new();
        let zv = g.constant(Tensor::row(&z));
        let c = prior.geometry_condition(&mut g, zv).unwrap();
        let c_g = g.value(c).data().to_vec();
        for t in 0..TABLES {
            let m = prior.codebook(t);
            let dist = |r: usize| (0..k).map(|j| (m.get(r, j) - c_g[t * k + j]).powi(2)).sum::<f64>();
            let nearest = (0..m.rows()).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
            let err = (0..k).map(|j| (q[t * k + j] - m.get(nearest, j)).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(err);
        }
    }
    check(worst < 1e-5, format!("τ → 0 output is {worst} from the nearest row"))?;

    let mut counts = Vec::new();
    for n in 2..=4 {
        let prior = ShapePrior::new(&PriorConfig { codebook_rows: n, ..PriorConfig::desk() }, 5).unwrap();
        let mut codes = BTreeSet::new();
        for code in 0..n.pow(TABLES as u32) {
            let mut logits = vec![0.0; TABLES * n];
            for t in 0..TABLES {
                logits[t * n + code / n.pow(t as u32) % n] = 1.0;
            }
            let q = prior.quantize_values(&logits, 1.0, QuantizeMode::Hard, None).unwrap();
            codes.insert(q.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        check(codes.len() == n.pow(4), format!("{} distinct codes for N = {n}", codes.len()))?;
        counts.push(codes.len());
    }
    Ok(format!("hard frequency {freq:.4}, τ→0 error {worst:.1e}, distinct codes {counts:?}"))
}

// ------------------------------------------------------------------ 3

fn brute_force_set(d: &DistanceMatrices) -> SetMetrics {
    let (ng, nr) = (d.gen_gen.len(), d.ref_ref.len());
    let mmd = (0..nr).map(|r| (0..ng).map(|g| d.gen_ref[g][r]).fold(f64::INFINITY, f64::min)).sum::<f64>() / nr as f64;
    let mut hit = vec![false; nr];
    for g in 0..ng {
        let mut best = 0;
        for r in 1..nr {
            if d.gen_ref[g][r] < d.gen_ref[g][best] {
                best = r;
            }
        }
        hit[best] = true;
    }
    let n = ng + nr;
    let dist = |a: usize, b: usize| match (a < ng, b < ng) {
        (true, true) => d.gen_gen[a][b],
        (true, false) => d.gen_ref[a][b - ng],
        (false, true) => d.gen_ref[b][a - ng],
        (false, false) => d.ref_ref[a - ng][b - ng],
    };
    let correct = (0..n)
        .filter(|&a| {
            let nearest = (0..n).filter(|&b| b != a).map(|b| dist(a, b)).fold(f64::INFINITY, f64::min);
            (0..n).filter(|&b| b != a && dist(a, b) == nearest).all(|b| (b < ng) == (a < ng))
        })
        .count();
    SetMetrics {
        mmd,
        cov: hit.iter().filter(|&&h| h).count() as f64 / nr as f64,
        nna: correct as f64 / n as f64,
    }
}

fn metric_oracles() -> Outcome {
    let (origin, cell) = VoxelGrid::frame([-0.5; 3], [1.0, 0.5, 0.5], 128).unwrap();
    let a = VoxelGrid::from_sdf(&Cuboid::from_bounds([-0.5; 3], [0.5; 3]), origin, cell, 128).unwrap();
    let b = VoxelGrid::from_sdf(&Cuboid::from_bounds([0.0, -0.5, -0.5], [1.0, 0.5, 0.5]), origin, cell, 128).unwrap();
    let iou = viou(&a, &b).unwrap();
    check((iou - 1.0 / 3.0).abs() <= 0.02 / 3.0, format!("vIoU {iou}"))?;

    let r = 0.5;
    let area = marching_cubes(&Sphere { radius: r }, [-1.0; 3], [1.0; 3], 64, 0.0).unwrap().area();
    let area_err = (area - 4.0 * PI * r * r).abs() / (4.0 * PI * r * r);
    check(area_err < 0.05, format!("sphere area off by {area_err}"))?;

    let mut rng = Rng::seed(9);
    let mut chamfer_err: f64 = 0.0;
    for _ in 0..5 {
        let a: Vec<Point> = (0..200).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let b: Vec<Point> = (0..200).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        chamfer_err = chamfer_err.max((chamfer(&a, &b).unwrap() - chamfer_brute_force(&a, &b).unwrap()).abs());
    }
    check(chamfer_err < 1e-12, format!("chamfer differs from brute force by {chamfer_err}"))?;

    for trial in 0..50 {
        let ng = 20;
        let nr = 20;
        let quantize = trial % 2 == 0;
        let mut draw = |rows: usize, cols: usize, sym: bool| {
            let mut m = vec![vec![0.0; cols]; rows];
            for i in 0..rows {
                for j in 0..cols {
                    if sym && j < i {
                        m[i][j] = m[j][i];
                    } else if !(sym && i == j) {
                        let v: f64 = rng.gen();
                        m[i][j] = if quantize { (v * 4.0).floor() } else { v };
                    }
                }
            }
            m
        };
        let d = DistanceMatrices {
            gen_ref: draw(ng, nr, false),
            gen_gen: draw(ng, ng, true),
            ref_ref: draw(nr, nr, true),
        };
        check(set_metrics(&d) == brute_force_set(&d), format!("set metrics differ from brute force in trial {trial}"))?;
    }

    let corpus = artkit::dataset::generate_corpus(4, 1).unwrap();
    let cfg = EvalConfig {
        surface_samples: 1024,
        ..EvalConfig::default()
    };
    let e = ObjectGeometry::from_corpus(&corpus[0]);
    let self_id = instantiation_distance(&id_signature(&e, &cfg).unwrap(), &id_signature(&e, &cfg).unwrap());
    check(self_id < 1e-3, format!("ID(E, E) = {self_id}"))?;

    // Two sets drawn the same way: independent bbox jitters of one
    // prototype. A 1-NN classifier cannot tell them apart.
    let proto = ObjectGeometry::from_corpus(&corpus[1]);
    let cfg = EvalConfig {
        surface_samples: 512,
        ..EvalConfig::default()
    };
    let copies = 24;
    let mut jrng = Rng::seed(21);
    let mut jittered = |tag: &str, i: usize| {
        let mut o = proto.clone();
        o.name = format!("{tag}{i}");
        for n in &mut o.tree.nodes {
            let ext: Vec<f64> = (0..3).map(|k| n.bbox[k + 3] - n.bbox[k]).collect();
            for k in 0..3 {
                n.bbox[k] += 0.03 * ext[k] * jrng.normal();
                n.bbox[k + 3] += 0.03 * ext[k] * jrng.normal();
            }
        }
        id_signature(&o, &cfg).unwrap()
    };
    let gen: Vec<_> = (0..copies).map(|i| jittered("g", i)).collect();
    let refs: Vec<_> = (0..copies).map(|i| jittered("r", i)).collect();
    let nna = set_metrics(&id_matrices(&gen, &refs)).nna;
    check((nna - 0.5).abs() <= 0.1, format!("1-NNA {nna}"))?;

    Ok(format!(
        "vIoU {iou:.4}, sphere area error {:.2}%, chamfer Δ {chamfer_err:.1e}, ID(E,E) {self_id:.1e}, 1-NNA {nna:.3}",
        100.0 * area_err
    ))
}

// ------------------------------------------------------------------ 4

/// Everything the desk pipeline produced, for the later criteria.
struct Pipeline {
    dir: PathBuf,
    corpus: Corpus,
    prior: ShapePrior,
    model: ArtFormer,
    generated: Vec<(String, ArticTree)>,
    caches: artkit::cache::PartCaches,
}

const SEED: u64 = 0;

fn paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (dir.join("data"), dir.join("prior.ckpt"), dir.join("caches"), dir.join("artformer.ckpt"))
}

fn run_pipeline(dir: &Path) -> Result<(Pipeline, String), String> {
    let e = |x: artkit::Error| x.to_string();
    let t0 = Instant::now();
    let profile = Profile::desk();
    let (data, prior_path, cache_dir, art_path) = paths(dir);
    build_dataset(&data, profile.dataset_count, profile.split, SEED).map_err(e)?;
    let corpus = Corpus::load(&data).map_err(e)?;

    let parts = PartRecord::from_split(&corpus, "train").map_err(e)?;
    let mut prior = ShapePrior::new(&profile.prior, SEED).map_err(e)?;
    train_prior(&mut prior, &parts, &profile.prior_train, &mut Rng::seed(SEED), &mut |_| {}).map_err(e)?;
    prior.save(&prior_path).map_err(e)?;
    let t_prior = t0.elapsed().as_secs_f64();

    preprocess(&data, &prior_path, &cache_dir, SEED).map_err(e)?;
    let caches = load_caches(&cache_dir, &data, &prior_path).map_err(e)?;
    let train = examples(&corpus.split("train").map_err(e)?, &caches).map_err(e)?;
    let test = examples(&corpus.split("test").map_err(e)?, &caches).map_err(e)?;

    let p = &prior.cfg;
    let mut model = ArtFormer::new(&profile.artformer, p.d_z, p.c_s, p.codebook_rows, SEED).map_err(e)?;
    let t1 = Instant::now();
    train_artformer(&mut model, &train, &profile.artformer_train, &mut Rng::seed(SEED), &mut |_| {}).map_err(e)?;
    let t_art = t1.elapsed().as_secs_f64();
    model.save(&art_path, &artkit::io::hash_file(&prior_path).map_err(e)?).map_err(e)?;

    let accuracy = evaluate(&model, &test).map_err(e)?.accuracy;

    let mut generated = Vec::new();
    let (mut matched, mut prompts) = (0, 0);
    let mut pors = Vec::new();
    for ex in &test {
        for (k, text) in ex.texts.iter().enumerate() {
            let want = parse_counts(text).ok_or_else(|| format!("no counts in `{text}`"))?;
            let d = generate(&model, &prior, text, &mut Rng::stream(SEED, prompts as u64)).map_err(e)?;
            prompts += 1;
            if d.tree.count_root_joints() == (want.prismatic, want.revolute) {
                matched += 1;
            }
            let name = format!("{}_{k}", ex.id);
            if !d.tree.is_empty() {
                let geo = generated_geometry(&prior, &name, &d.tree, profile.decode_res).map_err(e)?;
                pors.push(por(&geo, &profile.eval).map_err(e)?);
            }
            generated.push((name, d.tree));
        }
    }
    let match_rate = matched as f64 / prompts as f64;
    let mean_por = pors.iter().sum::<f64>() / pors.len().max(1) as f64;
    let total = t0.elapsed().as_secs_f64();

    let detail = format!(
        "held-out terminal accuracy {accuracy:.4}, count match {matched}/{prompts} ({:.1}%), mean POR {mean_por:.4} over {} objects, {:.0} s (prior {t_prior:.0} s, artformer {t_art:.0} s)",
        100.0 * match_rate,
        pors.len(),
        total
    );
    let ok = accuracy > 0.9 && match_rate >= 0.8 && mean_por < 0.05 && !pors.is_empty() && total < 1800.0;
    let pipeline = Pipeline {
        dir: dir.to_path_buf(),
        corpus,
        prior,
        model,
        generated,
        caches,
    };
    if ok {
        Ok((pipeline, detail))
    } else {
        Err(detail).map_err(|d| {
            // Keep the artifacts for criteria 6 and 7 even when the targets
            // are missed.
            PIPELINE_ON_FAIL.with(|c| *c.borrow_mut() = Some(pipeline));
            d
        })
    }
}

thread_local! {
    static PIPELINE_ON_FAIL: std::cell::RefCell<Option<Pipeline>> = const { std::cell::RefCell::new(None) };
}

/// Share of test cabinets with drawers that, after removing every drawer and
/// prompting for two doors, end with exactly two doors and no drawers.
fn edit_success(p: &Pipeline) -> String {
    let text = artkit::dataset::describe(
        &Description {
            category: Category::Cabinet,
            drawers: 0,
            doors: 2,
            cap: CapJoint::Screw,
            size: "",
            material: "",
            side: "",
        },
        0,
    );
    let (mut ok, mut n) = (0, 0);
    for obj in p.corpus.split("test").unwrap() {
        if obj.category != Category::Cabinet || obj.spec.drawers == 0 {
            continue;
        }
        let mut tree = obj.tree.clone();
        for (node, t) in tree.nodes.iter_mut().zip(p.caches.get(&obj.id).unwrap()) {
            node.z = t.z.clone();
        }
        let root = tree.root().unwrap();
        let drawers: Vec<usize> = tree
            .children(root)
            .into_iter()
            .filter(|&c| tree.nodes[c].joint_kind() == artkit::artic::JointKind::Prismatic)
            .collect();
        let d = edit(&p.model, &p.prior, &tree, &drawers, &text, p.model.limits(), &mut Rng::stream(SEED, 1000 + n as u64)).unwrap();
        n += 1;
        if d.tree.count_root_joints() == (0, 2) {
            ok += 1;
        }
    }
    format!("edit \"{text}\" after removing drawers: {ok}/{n}")
}

// ------------------------------------------------------------------ 5

fn prior_overfit() -> Outcome {
    let shape = common::door_panel();
    let parts = vec![common::record(shape.clone(), "door")];
    let prior = common::toy_prior(&parts, 400, 400, 1);
    let mut rng = Rng::seed(3);
    let cloud = artkit_geometry::sample_surface(&shape.frame_mesh(24).unwrap(), 512, &mut rng).unwrap();
    let z0 = prior.encode_latents(&[cloud]).unwrap().remove(0);
    let d = prior.distance_values(&[z0]).unwrap().remove(0);
    let s = prior
        .sample_part_geometry(&d, &prior.labels["door"], &common::FRAME_BOX, 32, 1.0, &mut Rng::seed(4))
        .unwrap();
    let cd = common::chamfer_to_shape(&s.mesh.ok_or("empty sampled mesh")?, &shape, &mut rng);
    check(cd < 0.05, format!("overfit chamfer {cd}"))?;

    let shapes = [common::door_panel(), common::drawer_panel()];
    let labels = ["door", "drawer"];
    let parts: Vec<PartRecord> = shapes.iter().zip(labels).map(|(s, l)| common::record(s.clone(), l)).collect();
    let prior = common::toy_prior(&parts, 400, 600, 2);
    let logits = vec![0.0; TABLES * prior.cfg.codebook_rows];
    let trials = 40;
    let mut correct = 0;
    for k in 0..trials {
        let c = k % 2;
        let s = prior
            .sample_part_geometry(&logits, &prior.labels[labels[c]], &common::FRAME_BOX, 32, 1.0, &mut rng)
            .unwrap();
        let Some(mesh) = s.mesh else { continue };
        if common::chamfer_to_shape(&mesh, &shapes[c], &mut rng) < common::chamfer_to_shape(&mesh, &shapes[1 - c], &mut rng) {
            correct += 1;
        }
    }
    let rate = correct as f64 / trials as f64;
    check(rate >= 0.9, format!("class-correct rate {rate}"))?;
    Ok(format!("overfit chamfer {cd:.4}, class-correct {correct}/{trials}"))
}

// ------------------------------------------------------------------ 6

fn dir_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(p: Option<&Pipeline>) -> Outcome {
    let e = |x: artkit::Error| x.to_string();
    let tmp = tempfile::tempdir().map_err(|x| x.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let profile = Profile::desk();
    build_dataset(&a, profile.dataset_count, profile.split, SEED).map_err(e)?;
    build_dataset(&b, profile.dataset_count, profile.split, SEED).map_err(e)?;
    let da = dir_bytes(&a);
    check(da == dir_bytes(&b), "datasets differ")?;
    if let Some(p) = p {
        check(da == dir_bytes(&p.dir.join("data")), "dataset differs from the pipeline run")?;
    }

    // Short trainings, twice each.
    let corpus = Corpus::load(&a).map_err(e)?;
    let parts = PartRecord::from_split(&corpus, "train").map_err(e)?;
    let tc = PriorTrainConfig {
        vae_steps: 30,
        diffusion_steps: 30,
        ..profile.prior_train.clone()
    };
    let mut ckpts = Vec::new();
    for run in ["p1.ckpt", "p2.ckpt"] {
        let mut prior = ShapePrior::new(&profile.prior, 5).map_err(e)?;
        train_prior(&mut prior, &parts, &tc, &mut Rng::seed(5), &mut |_| {}).map_err(e)?;
        prior.save(&tmp.path().join(run)).map_err(e)?;
        ckpts.push(std::fs::read(tmp.path().join(run)).map_err(|x| x.to_string())?);
    }
    check(ckpts[0] == ckpts[1], "prior checkpoints differ")?;
    let prior_path = tmp.path().join("p1.ckpt");
    preprocess(&a, &prior_path, &tmp.path().join("c1"), 5).map_err(e)?;
    preprocess(&a, &prior_path, &tmp.path().join("c2"), 5).map_err(e)?;
    check(dir_bytes(&tmp.path().join("c1")) == dir_bytes(&tmp.path().join("c2")), "part caches differ")?;
    let caches = load_caches(&tmp.path().join("c1"), &a, &prior_path).map_err(e)?;
    let train = examples(&corpus.split("train").map_err(e)?, &caches).map_err(e)?;
    let prior = ShapePrior::load(&prior_path).map_err(e)?;
    let atc = artkit::artformer::ArtTrainConfig {
        steps: 30,
        ..profile.artformer_train.clone()
    };
    let mut arts = Vec::new();
    for run in ["a1.ckpt", "a2.ckpt"] {
        let mut m = ArtFormer::new(&profile.artformer, prior.cfg.d_z, prior.cfg.c_s, prior.cfg.codebook_rows, 5).map_err(e)?;
        train_artformer(&mut m, &train, &atc, &mut Rng::seed(5), &mut |_| {}).map_err(e)?;
        m.save(&tmp.path().join(run), "x").map_err(e)?;
        arts.push(std::fs::read(tmp.path().join(run)).map_err(|x| x.to_string())?);
    }
    check(arts[0] == arts[1], "artformer checkpoints differ")?;

    // Generated JSON: twice in memory, and once from reloaded checkpoints.
    let (model, prior, what) = match p {
        Some(p) => {
            let (_, prior_path, _, art_path) = paths(&p.dir);
            let reloaded = (ArtFormer::load(&art_path).map_err(e)?.0, ShapePrior::load(&prior_path).map_err(e)?);
            let text = "a cabinet with two drawers and one door";
            for s in 0..5 {
                let x = to_json(&generate(&p.model, &p.prior, text, &mut Rng::seed(s)).map_err(e)?.tree);
                let y = to_json(&generate(&p.model, &p.prior, text, &mut Rng::seed(s)).map_err(e)?.tree);
                let z = to_json(&generate(&reloaded.0, &reloaded.1, text, &mut Rng::seed(s)).map_err(e)?.tree);
                check(x == y, "generation differs between identical runs")?;
                check(x == z, "generation from reloaded checkpoints differs")?;
            }
            return Ok("datasets, prior and artformer checkpoints, caches and generated JSON are byte-identical".into());
        }
        None => (
            ArtFormer::load(&tmp.path().join("a1.ckpt")).map_err(e)?.0,
            prior,
            "short-trained models",
        ),
    };
    for s in 0..5 {
        let x = to_json(&generate(&model, &prior, "cabinet with one drawer and one door", &mut Rng::seed(s)).map_err(e)?.tree);
        let y = to_json(&generate(&model, &prior, "cabinet with one drawer and one door", &mut Rng::seed(s)).map_err(e)?.tree);
        check(x == y, "generation differs between identical runs")?;
    }
    Ok(format!("byte-identical artifacts ({what} for generation)"))
}

// ------------------------------------------------------------------ 7

fn format_problems(name: &str, tree: &ArticTree) -> Option<String> {
    if let Some(v) = validate_tree(tree).first() {
        return Some(format!("{name}: {v}"));
    }
    let text = to_json(tree);
    match from_json(&text) {
        Ok(back) if back == *tree && to_json(&back) == text => {}
        Ok(_) => return Some(format!("{name}: JSON round trip changed the tree")),
        Err(e) => return Some(format!("{name}: {e}")),
    }
    let meshes: Vec<Option<String>> = (0..tree.len()).map(|i| Some(format!("part_{i}.obj"))).collect();
    match export_urdf(tree, name, &meshes) {
        Ok(urdf) => common::validate_urdf(&urdf).err().map(|e| format!("{name}: URDF {e}")),
        Err(e) => Some(format!("{name}: {e}")),
    }
}

fn format_fidelity(p: Option<&Pipeline>) -> Outcome {
    let corpus = match p {
        Some(p) => p.corpus.objects.clone(),
        None => artkit::dataset::generate_corpus(200, SEED).map_err(|e| e.to_string())?,
    };
    let mut problems: Vec<String> = corpus.iter().filter_map(|o| format_problems(&o.id, &o.tree)).collect();
    let generated = p.map_or(0, |p| p.generated.len());
    if let Some(p) = p {
        problems.extend(p.generated.iter().filter_map(|(n, t)| format_problems(n, t)));
    }
    check(p.is_some(), "no generated objects: the pipeline did not run")?;
    check(problems.is_empty(), format!("{} failures, first: {}", problems.len(), problems.first().cloned().unwrap_or_default()))?;
    Ok(format!("{} corpus and {generated} generated objects validate, round-trip and export", corpus.len()))
}

// ------------------------------------------------------------------

fn run(n: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    match r {
        Ok(d) => {
            println!("criterion {n} ({title}): PASS [{secs:.1} s] {d}");
            true
        }
        Err(d) => {
            println!("criterion {n} ({title}): FAIL [{secs:.1} s] {d}");
            false
        }
    }
}

fn main() {
    // Single-threaded, as the timing and determinism targets assume.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    let only: Option<BTreeSet<usize>> = std::env::var("ARTKIT_ACCEPT")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let want = |n: usize| only.as_ref().map_or(true, |s| s.contains(&n));
    let mut all = true;

    if want(1) {
        all &= run(1, "gradient integrity", gradient_integrity);
    }
    if want(2) {
        all &= run(2, "quantization semantics", quantization_semantics);
    }
    if want(3) {
        all &= run(3, "metric oracles", metric_oracles);
    }
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut pipeline = None;
    if want(4) || want(6) || want(7) {
        let ok = run(4, "pipeline learning signal", || match run_pipeline(tmp.path()) {
            Ok((p, d)) => {
                pipeline = Some(p);
                Ok(d)
            }
            Err(d) => Err(d),
        });
        if pipeline.is_none() {
            pipeline = PIPELINE_ON_FAIL.with(|c| c.borrow_mut().take());
        }
        all &= ok;
        if let Some(p) = &pipeline {
            println!("  info: {}", edit_success(p));
        }
    }
    if want(5) {
        all &= run(5, "prior overfit sanity", prior_overfit);
    }
    if want(6) {
        all &= run(6, "determinism", || determinism(pipeline.as_ref()));
    }
    if want(7) {
        all &= run(7, "format fidelity", || format_fidelity(pipeline.as_ref()));
    }
    if !all {
        std::process::exit(1);
    }
}
