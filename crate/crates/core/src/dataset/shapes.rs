//! Part geometry recipes in the normalized part frame.
//!
//! Every part's bounding box maps onto `[-FRAME, FRAME]³`, so a recipe only
//! describes shape, not size or placement.

use artkit_geometry::sdf::{Cuboid, Cylinder, RoundedBox};
use artkit_geometry::{marching_cubes, sample_surface, Mesh, Point, Sdf};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half extent of a part's bounding box in its normalized frame.
pub const FRAME: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartShape {
    /// The whole frame, with edges rounded by `rounding`.
    Box { rounding: f64 },
    /// Cylinder along z filling the frame.
    Cylinder,
    /// A slab on the +y side with a handle bar protruding toward -y.
    /// `handle_depth` is the handle's share of the frame along y; the bar
    /// spans `x ∈ [x0, x1]`, `z ∈ [z0, z1]` in frame coordinates.
    Panel { handle_depth: f64, handle: [f64; 4] },
}

impl Sdf for PartShape {
    fn distance(&self, p: Point) -> f64 {
        match *self {
            PartShape::Box { rounding } => RoundedBox {
                half: [FRAME; 3],
                radius: rounding,
            }
            .distance(p),
            PartShape::Cylinder => Cylinder {
                radius: FRAME,
                half_height: FRAME,
            }
            .distance(p),
            PartShape::Panel { handle_depth, handle } => {
                let split = -FRAME + 2.0 * FRAME * handle_depth;
                let slab = Cuboid::from_bounds([-FRAME, split, -FRAME], [FRAME; 3]);
                let bar = Cuboid::from_bounds([handle[0], -FRAME, handle[2]], [handle[1], split, handle[3]]);
                slab.distance(p).min(bar.distance(p))
            }
        }
    }
}

impl PartShape {
    /// Surface mesh in the normalized frame.
    pub fn frame_mesh(&self, res: usize) -> Result<Mesh> {
        let mut m = marching_cubes(self, [-1.0; 3], [1.0; 3], res, 0.0)?;
        m.cleanup();
        if m.is_empty() {
            return Err(Error::EmptyGeometry(format!("{self:?}")));
        }
        Ok(m)
    }

    /// Surface mesh placed in the part's bounding box.
    pub fn mesh_in_box(&self, bbox: &[f64; 6], res: usize) -> Result<Mesh> {
        let mut m = self.frame_mesh(res)?;
        m.map_box([-FRAME; 3], [FRAME; 3], lo(bbox), hi(bbox));
        Ok(m)
    }

    /// `n` surface points and `q` supervised queries (half jittered around
    /// the surface, half uniform in `[-1, 1]³`) with their signed distances.
    pub fn training_sample<R: Rng + ?Sized>(
        &self,
        mesh: &Mesh,
        n: usize,
        q: usize,
        jitter: f64,
        rng: &mut R,
    ) -> Result<(Vec<Point>, Vec<Point>, Vec<f64>)> {
        let cloud = sample_surface(mesh, n, rng)?;
        let near = sample_surface(mesh, q / 2, rng)?;
        let mut queries = Vec::with_capacity(q);
        for p in near {
            queries.push(p.map(|c| (c + jitter * gaussian(rng)).clamp(-1.0, 1.0)));
        }
        while queries.len() < q {
            queries.push([0; 3].map(|_| rng.gen_range(-1.0..1.0)));
        }
        let sdf = queries.iter().map(|&p| self.distance(p)).collect();
        Ok((cloud, queries, sdf))
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub(crate) fn lo(b: &[f64; 6]) -> Point {
    [b[0], b[1], b[2]]
}

pub(crate) fn hi(b: &[f64; 6]) -> Point {
    [b[3], b[4], b[5]]
}

/// World point to normalized frame coordinates of `bbox`.
pub fn to_frame(bbox: &[f64; 6], p: Point) -> Point {
    [0, 1, 2].map(|k| {
        let c = 0.5 * (bbox[k] + bbox[k + 3]);
        let h = 0.5 * (bbox[k + 3] - bbox[k]);
        if h > 0.0 {
            (p[k] - c) / h * FRAME
        } else {
            f64::INFINITY
        }
    })
}

/// A recipe placed in its bounding box. The value has the sign of the true
/// signed distance but is measured in frame units.
pub struct PlacedShape<'a> {
    pub shape: &'a PartShape,
    pub bbox: [f64; 6],
}

impl Sdf for PlacedShape<'_> {
    fn distance(&self, p: Point) -> f64 {
        let q = to_frame(&self.bbox, p);
        if q.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        self.shape.distance(q)
    }
}
