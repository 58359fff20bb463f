use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix4, Point3};

use crate::error::Result;
use crate::Point;

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[u32; 3]>,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        let n = cross(sub(b, a), sub(c, a));
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive when faces wind outward.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                let n = cross(b, c);
                (a[0] * n[0] + a[1] * n[1] + a[2] * n[2]) / 6.0
            })
            .sum()
    }

    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn transform(&mut self, m: &Matrix4<f64>) {
        for v in &mut self.vertices {
            let p = m.transform_point(&Point3::new(v[0], v[1], v[2]));
            *v = [p.x, p.y, p.z];
        }
    }

    pub fn transformed(&self, m: &Matrix4<f64>) -> Mesh {
        let mut out = self.clone();
        out.transform(m);
        out
    }

    /// Per-axis affine map taking the box `[from_lo, from_hi]` onto
    /// `[to_lo, to_hi]`.
    pub fn map_box(&mut self, from_lo: Point, from_hi: Point, to_lo: Point, to_hi: Point) {
        for v in &mut self.vertices {
            for k in 0..3 {
                let t = (v[k] - from_lo[k]) / (from_hi[k] - from_lo[k]);
                v[k] = to_lo[k] + t * (to_hi[k] - to_lo[k]);
            }
        }
    }

    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
    }

    pub fn merged<'a>(meshes: impl IntoIterator<Item = &'a Mesh>) -> Mesh {
        let mut out = Mesh::default();
        for m in meshes {
            out.append(m);
        }
        out
    }

    /// Merges vertices closer than `1e-9` (by snapping to a `1e-9` lattice),
    /// drops triangles that collapse or have zero area, and removes unused
    /// vertices.
    pub fn cleanup(&mut self) {
        const TOL: f64 = 1e-9;
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut seen: HashMap<[i64; 3], u32> = HashMap::new();
        let mut verts = Vec::new();
        for v in &self.vertices {
            let key = v.map(|c| (c / TOL).round() as i64);
            let id = *seen.entry(key).or_insert_with(|| {
                verts.push(*v);
                verts.len() as u32 - 1
            });
            remap.push(id);
        }
        self.vertices = verts;
        let tris: Vec<[u32; 3]> = self
            .triangles
            .iter()
            .map(|t| t.map(|i| remap[i as usize]))
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
            .collect();
        self.triangles = tris;
        self.triangles = (0..self.triangles.len())
            .filter(|&t| self.triangle_area(t) > 0.0)
            .map(|t| self.triangles[t])
            .collect();
        let mut used = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        for t in &mut self.triangles {
            for i in t.iter_mut() {
                if used[*i as usize] == u32::MAX {
                    used[*i as usize] = verts.len() as u32;
                    verts.push(self.vertices[*i as usize]);
                }
                *i = used[*i as usize];
            }
        }
        self.vertices = verts;
    }

    /// True when every directed edge is matched by exactly one opposite
    /// edge: closed and consistently oriented.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a, b)).or_default() += 1;
            }
        }
        edges
            .iter()
            .all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }

    /// Wavefront OBJ text with 1-based face indices.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_obj())?;
        Ok(())
    }
}
