use rand::Rng;

use crate::error::{GeometryError, Result};
use crate::mesh::Mesh;
use crate::Point;

/// `n` points uniformly distributed over the surface: triangles are picked
/// proportionally to area, then a uniform barycentric point is drawn.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &Mesh, n: usize, rng: &mut R) -> Result<Vec<Point>> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(GeometryError::EmptyMesh);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let t = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let [a, b, c] = mesh.corners(t);
        let r1 = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        out.push([0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k]));
    }
    Ok(out)
}
