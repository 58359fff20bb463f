use artkit_geometry::{Point, Sdf, VoxelGrid};
use nalgebra::{Matrix4, Point3};
use rayon::prelude::*;

use super::object::ObjectGeometry;
use super::EvalConfig;
use crate::artic::{pose, sample_states, JointState};
use crate::error::Result;
use artkit_tensor::Rng;

/// `|A ∩ B| / |A ∪ B|`, zero when both are empty.
pub fn viou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    let (inter, union) = a.overlap(b)?;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

fn posed_box(bbox: &[f64; 6], m: &Matrix4<f64>) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in 0..8 {
        let p = Point3::new(
            bbox[if c & 1 == 0 { 0 } else { 3 }],
            bbox[if c & 2 == 0 { 1 } else { 4 }],
            bbox[if c & 4 == 0 { 2 } else { 5 }],
        );
        let q = m.transform_point(&p);
        for (k, v) in [q.x, q.y, q.z].into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    (lo, hi)
}

/// Each part voxelized at `states`, all in one cubic frame around the
/// posed object.
pub fn posed_voxels(obj: &ObjectGeometry, states: &[JointState], res: usize) -> Result<Vec<VoxelGrid>> {
    let transforms = pose(&obj.tree, states);
    let boxes: Vec<(Point, Point)> = obj
        .tree
        .nodes
        .iter()
        .zip(&transforms)
        .map(|(n, m)| posed_box(&n.bbox, m))
        .collect();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (a, b) in &boxes {
        for k in 0..3 {
            lo[k] = lo[k].min(a[k]);
            hi[k] = hi[k].max(b[k]);
        }
    }
    let (origin, cell) = VoxelGrid::frame(lo, hi, res)?;
    (0..obj.tree.len())
        .map(|i| {
            let inv = transforms[i].try_inverse().unwrap_or_else(Matrix4::identity);
            let rest = obj.rest_field(i);
            let field = move |p: Point| {
                let q = inv.transform_point(&Point3::new(p[0], p[1], p[2]));
                rest.distance([q.x, q.y, q.z])
            };
            Ok(VoxelGrid::from_sdf_within(&field, origin, cell, res, boxes[i].0, boxes[i].1)?)
        })
        .collect()
}

/// Mean vIoU over unordered part pairs at one joint state; zero for a
/// single part.
pub fn mean_interpenetration(obj: &ObjectGeometry, states: &[JointState], res: usize) -> Result<f64> {
    let n = obj.tree.len();
    if n < 2 {
        return Ok(0.0);
    }
    let grids = posed_voxels(obj, states, res)?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            total += viou(&grids[a], &grids[b])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Part overlapping ratio: mean interpenetration over `cfg.joint_states`
/// independent uniform joint-state draws.
pub fn por(obj: &ObjectGeometry, cfg: &EvalConfig) -> Result<f64> {
    if obj.tree.len() < 2 {
        return Ok(0.0);
    }
    let mut rng = Rng::seed(cfg.seed);
    let draws: Vec<Vec<JointState>> = (0..cfg.joint_states).map(|_| sample_states(&obj.tree, &mut rng)).collect();
    let values = draws
        .par_iter()
        .map(|s| mean_interpenetration(obj, s, cfg.voxel_res))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len().max(1) as f64)
}
