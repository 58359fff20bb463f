use artkit_geometry::{sample_surface, Mesh, Point, PointIndex};

use super::object::ObjectGeometry;
use super::EvalConfig;
use crate::artic::pose_at_openness;
use crate::error::{Error, Result};
use artkit_tensor::Rng;

/// Surface samples of one object at each openness ratio, after scaling its
/// rest-pose bounding box into the unit cube. Sampling seeds depend only on
/// the configuration and the ratio, so every object shares them.
pub struct IdSignature {
    pub name: String,
    pub samples: Vec<Vec<Point>>,
    indices: Vec<PointIndex>,
}

impl IdSignature {
    pub fn new(name: impl Into<String>, samples: Vec<Vec<Point>>) -> Result<Self> {
        let name = name.into();
        let indices = samples
            .iter()
            .map(|s| PointIndex::new(s).map_err(|_| Error::EmptyGeometry(name.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(IdSignature { name, samples, indices })
    }
}

/// The posed, normalized whole-object mesh at openness `rho`.
pub fn normalized_mesh(obj: &ObjectGeometry, meshes: &[Mesh], rho: f64) -> Result<Mesh> {
    let (lo, hi) = obj.tree.bounds().ok_or_else(|| Error::EmptyGeometry(obj.name.clone()))?;
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::EmptyGeometry(obj.name.clone()));
    }
    let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let transforms = pose_at_openness(&obj.tree, rho);
    let mut out = Mesh::default();
    for (m, t) in meshes.iter().zip(&transforms) {
        out.append(&m.transformed(t));
    }
    for v in &mut out.vertices {
        *v = [0, 1, 2].map(|k| (v[k] - center[k]) / extent);
    }
    if out.is_empty() {
        return Err(Error::EmptyGeometry(obj.name.clone()));
    }
    Ok(out)
}

pub fn id_signature(obj: &ObjectGeometry, cfg: &EvalConfig) -> Result<IdSignature> {
    let meshes = obj.part_meshes(cfg.mesh_res)?;
    let mut samples = Vec::with_capacity(cfg.openness.len());
    for (k, &rho) in cfg.openness.iter().enumerate() {
        let mesh = normalized_mesh(obj, &meshes, rho)?;
        let mut rng = Rng::stream(cfg.seed, k as u64);
        samples.push(sample_surface(&mesh, cfg.surface_samples, &mut rng).map_err(|_| Error::EmptyGeometry(obj.name.clone()))?);
    }
    IdSignature::new(obj.name.clone(), samples)
}

/// Chamfer distance averaged over the shared openness ratios.
pub fn instantiation_distance(a: &IdSignature, b: &IdSignature) -> f64 {
    let n = a.samples.len().min(b.samples.len());
    if n == 0 {
        return 0.0;
    }
    (0..n)
        .map(|k| 0.5 * (b.indices[k].mean_nearest_sq(&a.samples[k]) + a.indices[k].mean_nearest_sq(&b.samples[k])))
        .sum::<f64>()
        / n as f64
}
