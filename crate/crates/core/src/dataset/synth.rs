//! Procedural articulated objects: cabinets, safes and bottles.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::shapes::{PartShape, FRAME};
use super::templates::{variants, Description};
use crate::artic::{validate_tree, ArticTree, PartNode};
use crate::error::{Error, Result};

/// Clearance between neighbouring parts at rest.
pub const GAP: f64 = 0.01;
pub const MAX_DRAWERS: usize = 4;
pub const MAX_DOORS: usize = 2;

pub const SIZES: [&[&str]; 3] = [&["tall", "low", "wide", "compact"], &["small", "large"], &["tall", "short"]];
pub const MATERIALS: [&[&str]; 3] = [&["wooden", "metal", "white", "oak"], &["steel", "black", "heavy"], &["glass", "plastic", "green"]];
pub const SIDES: [&str; 2] = ["left", "right"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Cabinet,
    Safe,
    Bottle,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Cabinet, Category::Safe, Category::Bottle];

    pub fn name(self) -> &'static str {
        match self {
            Category::Cabinet => "cabinet",
            Category::Safe => "safe",
            Category::Bottle => "bottle",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapJoint {
    /// Turns about the bottle axis.
    Screw,
    /// Slides up along the bottle axis.
    Lift,
}

/// The part plan of one object. Sizes are drawn during generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub category: Category,
    pub drawers: usize,
    pub doors: usize,
    pub cap: CapJoint,
}

impl SynthSpec {
    pub fn cabinet(drawers: usize, doors: usize) -> Self {
        SynthSpec {
            category: Category::Cabinet,
            drawers,
            doors,
            cap: CapJoint::Screw,
        }
    }

    /// A random plan: cabinets get up to four drawers and up to two doors
    /// (at least one part in total); safes one door; bottles one cap.
    pub fn random<R: Rng + ?Sized>(category: Category, rng: &mut R) -> Self {
        let cap = if rng.gen_bool(0.5) { CapJoint::Screw } else { CapJoint::Lift };
        match category {
            Category::Cabinet => loop {
                let k = rng.gen_range(0..=MAX_DRAWERS);
                let m = rng.gen_range(0..=MAX_DOORS);
                if k + m > 0 {
                    return SynthSpec::cabinet(k, m);
                }
            },
            Category::Safe => SynthSpec {
                category,
                drawers: 0,
                doors: 1,
                cap,
            },
            Category::Bottle => SynthSpec {
                category,
                drawers: 0,
                doors: 0,
                cap,
            },
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = match self.category {
            Category::Cabinet => self.drawers <= MAX_DRAWERS && self.doors <= MAX_DOORS && self.drawers + self.doors > 0,
            Category::Safe => self.drawers == 0 && self.doors == 1,
            Category::Bottle => self.drawers == 0 && self.doors == 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("unsupported part plan {self:?}")))
        }
    }
}

/// A generated object: its tree (with empty latents), one geometry recipe
/// per node, and its text variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub category: Category,
    pub spec: SynthSpec,
    pub texts: Vec<String>,
    pub shapes: Vec<PartShape>,
    pub tree: ArticTree,
}

struct Part {
    label: &'static str,
    bbox: [f64; 6],
    joint: [f64; 6],
    limit: [f64; 4],
    shape: PartShape,
}

fn center_key(b: &[f64; 6]) -> [f64; 3] {
    [0.5 * (b[2] + b[5]), 0.5 * (b[1] + b[4]), 0.5 * (b[0] + b[3])]
}

/// Children sort by bounding-box center, compared z first, then y, then x.
pub fn canonical_cmp(a: &[f64; 6], b: &[f64; 6]) -> std::cmp::Ordering {
    let (ka, kb) = (center_key(a), center_key(b));
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn fixed(bbox: [f64; 6], label: &'static str, shape: PartShape) -> Part {
    Part {
        label,
        bbox,
        joint: [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        limit: [0.0; 4],
        shape,
    }
}

/// A door panel hanging in front of the plane `y = y0`, hinged on its
/// outer vertical edge so that it swings toward -y.
fn door<R: Rng + ?Sized>(x0: f64, x1: f64, z0: f64, z1: f64, y0: f64, left_hinge: bool, knob: bool, rng: &mut R) -> Part {
    let pt = rng.gen_range(0.015..0.03);
    let hd = rng.gen_range(0.015..0.035);
    let (hz, inner) = if knob {
        (rng.gen_range(0.08..0.15) * FRAME, (0.5 * FRAME, 0.7 * FRAME))
    } else {
        (rng.gen_range(0.15..0.4) * FRAME, (0.55 * FRAME, 0.8 * FRAME))
    };
    let handle = if left_hinge {
        [inner.0, inner.1, -hz, hz]
    } else {
        [-inner.1, -inner.0, -hz, hz]
    };
    let zc = 0.5 * (z0 + z1);
    let (hx, dz) = if left_hinge { (x0, -1.0) } else { (x1, 1.0) };
    Part {
        label: "door",
        bbox: [x0, y0 - pt - hd, z0, x1, y0, z1],
        joint: [hx, y0, zc, 0.0, 0.0, dz],
        limit: [0.0, 0.0, 0.0, FRAC_PI_2],
        shape: PartShape::Panel {
            handle_depth: hd / (pt + hd),
            handle,
        },
    }
}

fn drawer<R: Rng + ?Sized>(x0: f64, x1: f64, z0: f64, z1: f64, y0: f64, travel: f64, rng: &mut R) -> Part {
    let pt = rng.gen_range(0.015..0.03);
    let hd = rng.gen_range(0.015..0.035);
    let hw = rng.gen_range(0.25..0.6) * FRAME;
    let hh = rng.gen_range(0.1..0.3) * FRAME;
    let bbox = [x0, y0 - pt - hd, z0, x1, y0, z1];
    let c = [0.5 * (x0 + x1), 0.5 * (bbox[1] + y0), 0.5 * (z0 + z1)];
    Part {
        label: "drawer",
        bbox,
        joint: [c[0], c[1], c[2], 0.0, -1.0, 0.0],
        limit: [0.0, travel, 0.0, 0.0],
        shape: PartShape::Panel {
            handle_depth: hd / (pt + hd),
            handle: [-hw, hw, -hh, hh],
        },
    }
}

/// Builds one object from `spec`. Parts never overlap at rest: movable
/// panels sit `GAP` in front of the body and only move away from it.
pub fn generate_object<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<SynthObject> {
    spec.check()?;
    let mut side = "left";
    let (root, mut children, size) = match spec.category {
        Category::Cabinet => {
            let w = rng.gen_range(0.5..1.0);
            let d = rng.gen_range(0.35..0.6);
            let h = rng.gen_range(0.5..1.4);
            let base = fixed(
                [-0.5 * w, -0.5 * d, 0.0, 0.5 * w, 0.5 * d, h],
                "base",
                PartShape::Box {
                    rounding: rng.gen_range(0.0..0.15),
                },
            );
            let y0 = -0.5 * d - GAP;
            let (k, m) = (spec.drawers, spec.doors);
            let drawer_top = if m == 0 { h } else { h * rng.gen_range(0.35..0.6) };
            let drawer_bottom = if k == 0 { h } else { h - drawer_top };
            let mut parts = Vec::new();
            if k > 0 {
                let rh = (drawer_top - (k - 1) as f64 * GAP) / k as f64;
                for i in 0..k {
                    let z0 = drawer_bottom + i as f64 * (rh + GAP);
                    parts.push(drawer(-0.5 * w, 0.5 * w, z0, z0 + rh, y0, 0.8 * d, rng));
                }
            }
            if m > 0 {
                let top = if k == 0 { h } else { drawer_bottom - GAP };
                if m == 1 {
                    let left = rng.gen_bool(0.5);
                    side = if left { "left" } else { "right" };
                    parts.push(door(-0.5 * w, 0.5 * w, 0.0, top, y0, left, false, rng));
                } else {
                    parts.push(door(-0.5 * w, -0.5 * GAP, 0.0, top, y0, true, false, rng));
                    parts.push(door(0.5 * GAP, 0.5 * w, 0.0, top, y0, false, false, rng));
                }
            }
            let size = if h > 1.0 {
                "tall"
            } else if h < 0.7 {
                "low"
            } else if w > 0.8 {
                "wide"
            } else {
                "compact"
            };
            (base, parts, size)
        }
        Category::Safe => {
            let w = rng.gen_range(0.3..0.6);
            let d = rng.gen_range(0.3..0.6);
            let h = rng.gen_range(0.3..0.6);
            let body = fixed(
                [-0.5 * w, -0.5 * d, 0.0, 0.5 * w, 0.5 * d, h],
                "body",
                PartShape::Box {
                    rounding: rng.gen_range(0.0..0.1),
                },
            );
            let left = rng.gen_bool(0.5);
            side = if left { "left" } else { "right" };
            let parts = vec![door(-0.5 * w, 0.5 * w, 0.0, h, -0.5 * d - GAP, left, true, rng)];
            let size = if w * d * h > 0.07 { "large" } else { "small" };
            (body, parts, size)
        }
        Category::Bottle => {
            let r = rng.gen_range(0.035..0.08);
            let h = rng.gen_range(0.15..0.35);
            let body = fixed([-r, -r, 0.0, r, r, h], "body", PartShape::Cylinder);
            let rc = r * rng.gen_range(0.45..0.8);
            let hc = rng.gen_range(0.02..0.05);
            let z0 = h + GAP;
            let limit = match spec.cap {
                CapJoint::Screw => [0.0, 0.0, 0.0, TAU],
                CapJoint::Lift => [0.0, rng.gen_range(0.04..0.1), 0.0, 0.0],
            };
            let cap = Part {
                label: "cap",
                bbox: [-rc, -rc, z0, rc, rc, z0 + hc],
                joint: [0.0, 0.0, z0, 0.0, 0.0, 1.0],
                limit,
                shape: PartShape::Cylinder,
            };
            let size = if h > 0.25 { "tall" } else { "short" };
            (body, vec![cap], size)
        }
    };
    children.sort_by(|a, b| canonical_cmp(&a.bbox, &b.bbox));
    let materials = MATERIALS[spec.category.index()];
    let desc = Description {
        category: spec.category,
        drawers: spec.drawers,
        doors: spec.doors,
        cap: spec.cap,
        size,
        material: materials[rng.gen_range(0..materials.len())],
        side,
    };
    let texts = variants(&desc, rng);
    let mut nodes = Vec::new();
    let mut shapes = Vec::new();
    for (i, p) in std::iter::once(root).chain(children).enumerate() {
        nodes.push(PartNode {
            parent: if i == 0 { None } else { Some(0) },
            label: p.label.to_string(),
            bbox: p.bbox,
            z: Vec::new(),
            joint: p.joint,
            limit: p.limit,
        });
        shapes.push(p.shape);
    }
    let tree = ArticTree::new(nodes);
    if let Some(v) = validate_tree(&tree).first() {
        return Err(Error::InvalidTree(v.to_string()));
    }
    Ok(SynthObject {
        category: spec.category,
        spec: spec.clone(),
        texts,
        shapes,
        tree,
    })
}
