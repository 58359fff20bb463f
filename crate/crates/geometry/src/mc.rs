//! Marching cubes.
//!
//! The 256-case table is derived at startup instead of being transcribed:
//! each cube face contributes iso-line segments between its sign-changing
//! edges, ambiguous faces (diagonal inside corners) always separate the
//! inside corners, and the segments chain into closed loops that are
//! fan-triangulated. Because a face's segments depend only on that face's
//! four corners, neighbouring cells agree and the surface is closed.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{GeometryError, Result};
use crate::mesh::Mesh;
use crate::sdf::Sdf;
use crate::Point;

pub const MIN_RES: usize = 8;
const T_MARGIN: f64 = 1e-6;

/// Cube edges as corner pairs. Corner `c` sits at `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn edge_between(a: usize, b: usize) -> usize {
    let (a, b) = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == (a, b)).expect("adjacent corners")
}

/// Corner cycles of the six faces.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (u, v) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for side in 0..2 {
            let corner = |du: usize, dv: usize| (side << axis) | (du << u) | (dv << v);
            out.push([corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)]);
        }
    }
    out
}

/// Closed loops of cube-edge indices for one inside/outside pattern.
fn case_loops(case: usize) -> Vec<Vec<usize>> {
    let inside = |c: usize| case >> c & 1 == 1;
    let mut links: Vec<Vec<usize>> = vec![Vec::new(); 12];
    let mut connect = |a: usize, b: usize| {
        links[a].push(b);
        links[b].push(a);
    };
    for f in faces() {
        let side = |i: usize| edge_between(f[i % 4], f[(i + 1) % 4]);
        let crossing: Vec<usize> = (0..4).filter(|&i| inside(f[i]) != inside(f[(i + 1) % 4])).collect();
        match crossing.len() {
            2 => connect(side(crossing[0]), side(crossing[1])),
            4 => {
                for i in 0..4 {
                    if inside(f[i]) {
                        connect(side(i + 3), side(i));
                    }
                }
            }
            _ => {}
        }
    }
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if seen[start] || links[start].is_empty() {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let (mut prev, mut cur) = (start, links[start][0]);
        while cur != start {
            lp.push(cur);
            seen[cur] = true;
            let next = if links[cur][0] == prev { links[cur][1] } else { links[cur][0] };
            prev = cur;
            cur = next;
        }
        loops.push(lp);
    }
    loops
}

fn table() -> &'static [Vec<Vec<usize>>] {
    static TABLE: OnceLock<Vec<Vec<Vec<usize>>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(case_loops).collect())
}

/// Field values on a regular lattice of `dims` nodes starting at `lo`.
#[derive(Clone, Debug)]
pub struct ScalarGrid {
    pub lo: Point,
    pub step: [f64; 3],
    pub dims: [usize; 3],
    /// x fastest, then y, then z.
    pub values: Vec<f64>,
}

impl ScalarGrid {
    /// Node positions for `res` cells per axis over `[lo, hi]`.
    pub fn nodes(lo: Point, hi: Point, res: usize) -> Result<(Vec<Point>, [f64; 3])> {
        if res < MIN_RES {
            return Err(GeometryError::Resolution { res, min: MIN_RES });
        }
        if (0..3).any(|k| !(hi[k] > lo[k])) {
            return Err(GeometryError::Bounds(format!("{lo:?} .. {hi:?}")));
        }
        let step = [0, 1, 2].map(|k| (hi[k] - lo[k]) / res as f64);
        let n = res + 1;
        let mut pts = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    pts.push([
                        lo[0] + i as f64 * step[0],
                        lo[1] + j as f64 * step[1],
                        lo[2] + k as f64 * step[2],
                    ]);
                }
            }
        }
        Ok((pts, step))
    }

    /// Evaluates `field` on `res` cells per axis over `[lo, hi]`.
    pub fn sample(field: &dyn Sdf, lo: Point, hi: Point, res: usize) -> Result<Self> {
        let (pts, step) = Self::nodes(lo, hi, res)?;
        let values = pts.par_iter().map(|&p| field.distance(p)).collect();
        Ok(ScalarGrid {
            lo,
            step,
            dims: [res + 1; 3],
            values,
        })
    }

    /// Wraps values computed elsewhere for the lattice of [`ScalarGrid::nodes`].
    pub fn from_values(lo: Point, hi: Point, res: usize, values: Vec<f64>) -> Result<Self> {
        let (pts, step) = Self::nodes(lo, hi, res)?;
        if values.len() != pts.len() {
            return Err(GeometryError::Bounds(format!("{} values for {} nodes", values.len(), pts.len())));
        }
        Ok(ScalarGrid {
            lo,
            step,
            dims: [res + 1; 3],
            values,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.step[0].max(self.step[1]).max(self.step[2])
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.dims[1] + j) * self.dims[0] + i]
    }

    /// Extracts the `iso` level set. Values below `iso` are inside. Returns
    /// an empty mesh when nothing crosses.
    pub fn extract(&self, iso: f64) -> Mesh {
        let [nx, ny, nz] = self.dims;
        let node = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
        // One shared vertex per lattice edge: slot = node * 3 + axis.
        let mut slot = vec![u32::MAX; nx * ny * nz * 3];
        let mut mesh = Mesh::default();
        let tbl = table();
        for k in 0..nz - 1 {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut vals = [0.0; 8];
                    let mut case = 0;
                    for (c, v) in vals.iter_mut().enumerate() {
                        *v = self.at(i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1));
                        if *v < iso {
                            case |= 1 << c;
                        }
                    }
                    if case == 0 || case == 255 {
                        continue;
                    }
                    let mut vid = [u32::MAX; 12];
                    for lp in &tbl[case] {
                        for &e in lp {
                            if vid[e] != u32::MAX {
                                continue;
                            }
                            let (a, b) = EDGES[e];
                            let axis = (a ^ b).trailing_zeros() as usize;
                            let key = node(i + (a & 1), j + (a >> 1 & 1), k + (a >> 2 & 1)) * 3 + axis;
                            if slot[key] == u32::MAX {
                                // Kept off the lattice nodes so vertices from different
                                // edges never coincide and pinch the surface.
                                let t = ((iso - vals[a]) / (vals[b] - vals[a])).clamp(T_MARGIN, 1.0 - T_MARGIN);
                                let mut p = [0.0; 3];
                                for (d, pd) in p.iter_mut().enumerate() {
                                    let base = [i, j, k][d] as f64 + ((a >> d) & 1) as f64;
                                    let off = if d == axis { t } else { 0.0 };
                                    *pd = self.lo[d] + (base + off) * self.step[d];
                                }
                                slot[key] = mesh.vertices.len() as u32;
                                mesh.vertices.push(p);
                            }
                            vid[e] = slot[key];
                        }
                        emit_loop(&mut mesh, lp, &vid, &vals);
                    }
                }
            }
        }
        mesh
    }
}

/// Trilinear interpolation of the lattice values; `+∞` outside the lattice.
impl Sdf for ScalarGrid {
    fn distance(&self, p: Point) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for d in 0..3 {
            let t = (p[d] - self.lo[d]) / self.step[d];
            let last = (self.dims[d] - 1) as f64;
            if !(t >= 0.0 && t <= last) {
                return f64::INFINITY;
            }
            let i = (t.floor() as usize).min(self.dims[d] - 2);
            base[d] = i;
            frac[d] = t - i as f64;
        }
        let mut v = 0.0;
        for c in 0..8 {
            let bit = [c & 1, c >> 1 & 1, c >> 2 & 1];
            let w: f64 = (0..3).map(|d| if bit[d] == 1 { frac[d] } else { 1.0 - frac[d] }).product();
            if w != 0.0 {
                v += w * self.at(base[0] + bit[0], base[1] + bit[1], base[2] + bit[2]);
            }
        }
        v
    }
}

/// Trilinear gradient of the corner values at a local position in the unit
/// cube.
fn trilinear_gradient(vals: &[f64; 8], p: [f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (c, &v) in vals.iter().enumerate() {
        let bit = [c & 1, c >> 1 & 1, c >> 2 & 1].map(|b| b as f64);
        let w = [0, 1, 2].map(|d| if bit[d] == 1.0 { p[d] } else { 1.0 - p[d] });
        let s = [0, 1, 2].map(|d| if bit[d] == 1.0 { 1.0 } else { -1.0 });
        g[0] += v * s[0] * w[1] * w[2];
        g[1] += v * w[0] * s[1] * w[2];
        g[2] += v * w[0] * w[1] * s[2];
    }
    g
}

fn emit_loop(mesh: &mut Mesh, lp: &[usize], vid: &[u32; 12], vals: &[f64; 8]) {
    let verts: Vec<Point> = lp.iter().map(|&e| mesh.vertices[vid[e] as usize]).collect();
    // Newell normal of the loop in world space.
    let mut n = [0.0; 3];
    for a in 0..verts.len() {
        let (p, q) = (verts[a], verts[(a + 1) % verts.len()]);
        n[0] += (p[1] - q[1]) * (p[2] + q[2]);
        n[1] += (p[2] - q[2]) * (p[0] + q[0]);
        n[2] += (p[0] - q[0]) * (p[1] + q[1]);
    }
    // Loop centroid in local cube coordinates, from the edge midpoints.
    let mut local = [0.0; 3];
    for &e in lp {
        let (a, b) = EDGES[e];
        for (d, l) in local.iter_mut().enumerate() {
            *l += 0.5 * (((a >> d) & 1) + ((b >> d) & 1)) as f64;
        }
    }
    local = local.map(|v| v / lp.len() as f64);
    let g = trilinear_gradient(vals, local);
    let flip = n[0] * g[0] + n[1] * g[1] + n[2] * g[2] < 0.0;
    let ids: Vec<u32> = lp.iter().map(|&e| vid[e]).collect();
    for t in 1..ids.len() - 1 {
        let tri = if flip {
            [ids[0], ids[t + 1], ids[t]]
        } else {
            [ids[0], ids[t], ids[t + 1]]
        };
        mesh.triangles.push(tri);
    }
}

/// Samples `field` on `res` cells per axis over `[lo, hi]` and extracts the
/// `iso` surface. An empty mesh means the field never crosses `iso`.
pub fn marching_cubes(field: &dyn Sdf, lo: Point, hi: Point, res: usize, iso: f64) -> Result<Mesh> {
    Ok(ScalarGrid::sample(field, lo, hi, res)?.extract(iso))
}
