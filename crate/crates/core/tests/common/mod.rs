#![allow(dead_code)]

use artkit::dataset::{PartShape, FRAME};
use artkit::prior::{train_diffusion, train_vae, PartRecord, PriorConfig, PriorTrainConfig, ShapePrior};
use artkit_geometry::{chamfer, sample_surface, Mesh};
use artkit_tensor::Rng;

/// The part frame box: decoding into it leaves coordinates unchanged.
pub const FRAME_BOX: [f64; 6] = [-FRAME, -FRAME, -FRAME, FRAME, FRAME, FRAME];

pub fn drawer_panel() -> PartShape {
    PartShape::Panel {
        handle_depth: 0.35,
        handle: [-0.4, 0.4, -0.1, 0.1],
    }
}

pub fn door_panel() -> PartShape {
    PartShape::Panel {
        handle_depth: 0.5,
        handle: [0.5, 0.7, -0.5, 0.5],
    }
}

pub fn record(shape: PartShape, label: &str) -> PartRecord {
    PartRecord {
        shape,
        label: label.into(),
    }
}

/// A desk-config prior trained briefly on `parts`.
pub fn toy_prior(parts: &[PartRecord], vae_steps: usize, diffusion_steps: usize, seed: u64) -> ShapePrior {
    let cfg = PriorConfig::desk();
    let mut prior = ShapePrior::new(&cfg, seed).unwrap();
    let tc = PriorTrainConfig {
        vae_steps,
        diffusion_steps,
        vae_batch: parts.len().min(4),
        diffusion_batch: 16,
        log_every: usize::MAX,
        ..PriorTrainConfig::desk()
    };
    let mut rng = Rng::seed(seed);
    train_vae(&mut prior, parts, &tc, &mut rng, &mut |_| {}).unwrap();
    train_diffusion(&mut prior, parts, &tc, &mut rng, &mut |_| {}).unwrap();
    prior
}

/// Chamfer distance between a mesh and a shape's surface, in frame units.
pub fn chamfer_to_shape(mesh: &Mesh, shape: &PartShape, rng: &mut Rng) -> f64 {
    let truth = shape.frame_mesh(48).unwrap();
    let a = sample_surface(mesh, 2048, rng).unwrap();
    let b = sample_surface(&truth, 2048, rng).unwrap();
    chamfer(&a, &b).unwrap()
}

/// Random valid trees: topological parents, ordered bboxes and limits,
/// unit directions, and a mix of fixed, sliding, turning and mixed joints.
pub fn arb_tree(max_nodes: usize, d_z: usize) -> impl proptest::strategy::Strategy<Value = artkit::artic::ArticTree> {
    use proptest::prelude::*;
    let node = (
        any::<prop::sample::Index>(),
        prop::array::uniform3(-2.0..2.0f64),
        prop::array::uniform3(0.0..1.0f64),
        prop::collection::vec(-3.0..3.0f64, d_z),
        prop::array::uniform3(-1.0..1.0f64),
        prop::array::uniform3(-1.0..1.0f64).prop_filter("nonzero axis", |d| d.iter().map(|v| v * v).sum::<f64>() > 1e-2),
        (0u8..4, -0.5..0.0f64, 0.0..0.5f64, -1.5..0.0f64, 0.0..1.5f64),
    );
    prop::collection::vec(node, 1..=max_nodes).prop_map(|raw| {
        let nodes = raw
            .into_iter()
            .enumerate()
            .map(|(i, (pick, lo, ext, z, o, d, (kind, t0, t1, r0, r1)))| {
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                let slides = kind & 1 == 1;
                let turns = kind & 2 == 2;
                artkit::artic::PartNode {
                    parent: (i > 0).then(|| pick.index(i)),
                    label: format!("part{i}"),
                    bbox: [lo[0], lo[1], lo[2], lo[0] + ext[0], lo[1] + ext[1], lo[2] + ext[2]],
                    z,
                    joint: [o[0], o[1], o[2], d[0] / norm, d[1] / norm, d[2] / norm],
                    limit: [
                        if slides { t0 } else { 0.0 },
                        if slides { t1 } else { 0.0 },
                        if turns { r0 } else { 0.0 },
                        if turns { r1 } else { 0.0 },
                    ],
                }
            })
            .collect();
        artkit::artic::ArticTree::new(nodes)
    })
}

/// Structural URDF 1.0 check: a named robot of uniquely named links and
/// joints, known joint types, parents and children that exist, every link
/// but one the child of exactly one joint, no cycles, and ordered limits
/// with an axis on every moving joint.
pub fn validate_urdf(text: &str) -> Result<(), String> {
    use std::collections::{BTreeMap, BTreeSet};
    let doc = roxmltree::Document::parse(text).map_err(|e| e.to_string())?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" || robot.attribute("name").map_or(true, str::is_empty) {
        return Err("root must be a named <robot>".into());
    }
    let mut links = BTreeSet::new();
    for l in robot.children().filter(|n| n.has_tag_name("link")) {
        let name = l.attribute("name").ok_or("link without name")?;
        if !links.insert(name.to_string()) {
            return Err(format!("duplicate link {name}"));
        }
        for m in l.descendants().filter(|n| n.has_tag_name("mesh")) {
            if m.attribute("filename").map_or(true, str::is_empty) {
                return Err(format!("mesh without filename in {name}"));
            }
        }
    }
    let mut joints = BTreeSet::new();
    let mut parent_of: BTreeMap<String, String> = BTreeMap::new();
    for j in robot.children().filter(|n| n.has_tag_name("joint")) {
        let name = j.attribute("name").ok_or("joint without name")?;
        if !joints.insert(name.to_string()) {
            return Err(format!("duplicate joint {name}"));
        }
        let kind = j.attribute("type").ok_or("joint without type")?;
        if !["revolute", "continuous", "prismatic", "fixed", "floating", "planar"].contains(&kind) {
            return Err(format!("joint {name} has unknown type {kind}"));
        }
        let link = |tag: &str| -> Result<String, String> {
            let l = j
                .children()
                .find(|n| n.has_tag_name(tag))
                .and_then(|n| n.attribute("link"))
                .ok_or(format!("joint {name} without {tag}"))?;
            if links.contains(l) {
                Ok(l.to_string())
            } else {
                Err(format!("joint {name} names unknown link {l}"))
            }
        };
        let (parent, child) = (link("parent")?, link("child")?);
        if parent_of.insert(child.clone(), parent).is_some() {
            return Err(format!("link {child} has two parents"));
        }
        if kind == "revolute" || kind == "prismatic" {
            let limit = j.children().find(|n| n.has_tag_name("limit")).ok_or(format!("joint {name} without limit"))?;
            let num = |a: &str| -> Result<f64, String> {
                limit
                    .attribute(a)
                    .ok_or(format!("limit of {name} without {a}"))?
                    .parse::<f64>()
                    .map_err(|e| format!("limit {a} of {name}: {e}"))
            };
            if num("lower")? > num("upper")? || num("effort")? < 0.0 || num("velocity")? < 0.0 {
                return Err(format!("joint {name} has a bad limit"));
            }
            let axis = j.children().find(|n| n.has_tag_name("axis")).and_then(|n| n.attribute("xyz")).ok_or(format!("joint {name} without axis"))?;
            let v: Vec<f64> = axis.split_whitespace().map(|s| s.parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
            if v.len() != 3 {
                return Err(format!("axis of {name} is not a 3-vector"));
            }
        }
    }
    let roots: Vec<&String> = links.iter().filter(|l| !parent_of.contains_key(*l)).collect();
    if roots.len() != 1 {
        return Err(format!("expected one root link, found {}", roots.len()));
    }
    for l in &links {
        let (mut cur, mut steps) = (l.clone(), 0);
        while let Some(p) = parent_of.get(&cur) {
            cur = p.clone();
            steps += 1;
            if steps > links.len() {
                return Err(format!("cycle through {l}"));
            }
        }
    }
    Ok(())
}

/// Finite-difference check of parameter gradients like
/// `artkit_tensor::grad_check_params`, but the relative error is taken
/// against `max(|analytic| + |numeric|, 1e-6)`. Central differences of an
/// O(1) loss carry about `1e-16 / eps` of rounding noise, which a smaller
/// floor reports as error on parameters whose true gradient is zero.
pub fn grad_check_floored<F>(
    store: &artkit_tensor::ParamStore,
    ids: &[artkit_tensor::ParamId],
    eps: f64,
    f: F,
) -> Result<f64, artkit_tensor::TensorError>
where
    F: Fn(&mut artkit_tensor::Graph, &artkit_tensor::ParamStore) -> Result<artkit_tensor::Var, artkit_tensor::TensorError>,
{
    use artkit_tensor::Graph;
    let eval = |p: &artkit_tensor::ParamStore| -> Result<f64, artkit_tensor::TensorError> {
        let mut g = Graph::new();
        let out = f(&mut g, p)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for &id in ids {
        for k in 0..store.get(id).len() {
            let ga = grads.param(id).map_or(0.0, |v| v[k]);
            let x0 = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = x0 + eps;
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[k] = x0 - eps;
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[k] = x0;
            let gf = (fp - fm) / (2.0 * eps);
            worst = worst.max((ga - gf).abs() / (ga.abs() + gf.abs()).max(1e-6));
        }
    }
    Ok(worst)
}
