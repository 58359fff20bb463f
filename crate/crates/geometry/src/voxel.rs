use bitvec::prelude::*;
use rayon::prelude::*;

use crate::error::{GeometryError, Result};
use crate::mesh::Mesh;
use crate::sdf::Sdf;
use crate::Point;

pub const MIN_RES: usize = 8;

/// Cubic occupancy grid of `res³` cells of edge `cell` starting at `origin`.
/// Cell `(i, j, k)` is bit `(k * res + j) * res + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub origin: Point,
    pub cell: f64,
    pub res: usize,
    pub occupancy: BitVec,
}

impl VoxelGrid {
    pub fn empty(origin: Point, cell: f64, res: usize) -> Result<Self> {
        if res < MIN_RES {
            return Err(GeometryError::Resolution { res, min: MIN_RES });
        }
        if !(cell > 0.0) {
            return Err(GeometryError::Bounds(format!("cell size {cell}")));
        }
        Ok(VoxelGrid {
            origin,
            cell,
            res,
            occupancy: bitvec![0; res * res * res],
        })
    }

    /// The cubic frame of `res` cells that covers `[lo, hi]`, centered on it.
    pub fn frame(lo: Point, hi: Point, res: usize) -> Result<(Point, f64)> {
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        if !(extent > 0.0) {
            return Err(GeometryError::Bounds(format!("{lo:?} .. {hi:?}")));
        }
        let cell = extent / res as f64;
        let origin = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]) - 0.5 * extent);
        Ok((origin, cell))
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point {
        [
            self.origin[0] + (i as f64 + 0.5) * self.cell,
            self.origin[1] + (j as f64 + 0.5) * self.cell,
            self.origin[2] + (k as f64 + 0.5) * self.cell,
        ]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[(k * self.res + j) * self.res + i]
    }

    pub fn count(&self) -> usize {
        self.occupancy.count_ones()
    }

    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.cell.powi(3)
    }

    pub fn same_frame(&self, other: &VoxelGrid) -> bool {
        self.res == other.res && self.cell == other.cell && self.origin == other.origin
    }

    /// `(|A ∩ B|, |A ∪ B|)` in cells.
    pub fn overlap(&self, other: &VoxelGrid) -> Result<(usize, usize)> {
        if !self.same_frame(other) {
            return Err(GeometryError::GridMismatch);
        }
        let inter = (self.occupancy.clone() & &other.occupancy).count_ones();
        let union = (self.occupancy.clone() | &other.occupancy).count_ones();
        Ok((inter, union))
    }

    /// Marks cells whose center has `field ≤ 0`.
    pub fn from_sdf(field: &dyn Sdf, origin: Point, cell: f64, res: usize) -> Result<Self> {
        let mut grid = VoxelGrid::empty(origin, cell, res)?;
        let slices: Vec<Vec<bool>> = (0..res)
            .into_par_iter()
            .map(|k| {
                let mut s = Vec::with_capacity(res * res);
                for j in 0..res {
                    for i in 0..res {
                        s.push(field.distance(grid.center(i, j, k)) <= 0.0);
                    }
                }
                s
            })
            .collect();
        for (k, s) in slices.into_iter().enumerate() {
            for (n, inside) in s.into_iter().enumerate() {
                if inside {
                    grid.occupancy.set(k * res * res + n, true);
                }
            }
        }
        Ok(grid)
    }

    /// Like [`VoxelGrid::from_sdf`], but only cells whose centers fall in
    /// `[lo, hi]` are evaluated; the rest are left empty. For fields known
    /// to be positive outside that box this gives the same grid, faster.
    pub fn from_sdf_within(field: &dyn Sdf, origin: Point, cell: f64, res: usize, lo: Point, hi: Point) -> Result<Self> {
        let mut grid = VoxelGrid::empty(origin, cell, res)?;
        let range = |k: usize| {
            let a = ((lo[k] - origin[k]) / cell - 0.5).ceil().max(0.0) as usize;
            let b = (((hi[k] - origin[k]) / cell - 0.5).floor() + 1.0).clamp(0.0, res as f64) as usize;
            a..b.max(a)
        };
        let (ri, rj, rk) = (range(0), range(1), range(2));
        let slices: Vec<(usize, Vec<usize>)> = rk
            .into_par_iter()
            .map(|k| {
                let mut s = Vec::new();
                for j in rj.clone() {
                    for i in ri.clone() {
                        if field.distance(grid.center(i, j, k)) <= 0.0 {
                            s.push(j * res + i);
                        }
                    }
                }
                (k, s)
            })
            .collect();
        for (k, s) in slices {
            for n in s {
                grid.occupancy.set(k * res * res + n, true);
            }
        }
        Ok(grid)
    }

    /// Marks cells whose center lies inside a closed mesh, by counting
    /// crossings of a ray cast along +x (even-odd rule).
    pub fn from_mesh(mesh: &Mesh, origin: Point, cell: f64, res: usize) -> Result<Self> {
        let mut grid = VoxelGrid::empty(origin, cell, res)?;
        // Nudge rays off the lattice so they do not graze shared edges.
        let (dy, dz) = (cell * 1.1e-6, cell * 0.7e-6);
        let tris: Vec<[Point; 3]> = (0..mesh.triangles.len()).map(|t| mesh.corners(t)).collect();
        // Bin triangles by the rows their y-z extent can reach.
        let mut bins: Vec<Vec<u32>> = vec![Vec::new(); res * res];
        let row_range = |lo: f64, hi: f64, o: f64| {
            let a = ((lo - o) / cell - 0.5).floor().max(0.0) as usize;
            let b = (((hi - o) / cell - 0.5).ceil() + 1.0).clamp(0.0, res as f64) as usize;
            a..b.max(a)
        };
        for (t, c) in tris.iter().enumerate() {
            let (ylo, yhi) = (c[0][1].min(c[1][1]).min(c[2][1]), c[0][1].max(c[1][1]).max(c[2][1]));
            let (zlo, zhi) = (c[0][2].min(c[1][2]).min(c[2][2]), c[0][2].max(c[1][2]).max(c[2][2]));
            for k in row_range(zlo, zhi, origin[2]) {
                for j in row_range(ylo, yhi, origin[1]) {
                    bins[k * res + j].push(t as u32);
                }
            }
        }
        let rows: Vec<Vec<bool>> = (0..res * res)
            .into_par_iter()
            .map(|row| {
                let (j, k) = (row % res, row / res);
                let y = origin[1] + (j as f64 + 0.5) * cell + dy;
                let z = origin[2] + (k as f64 + 0.5) * cell + dz;
                let mut hits: Vec<f64> = bins[row]
                    .iter()
                    .filter_map(|&t| ray_x_hit(&tris[t as usize], y, z))
                    .collect();
                hits.sort_by(f64::total_cmp);
                (0..res)
                    .map(|i| {
                        let x = origin[0] + (i as f64 + 0.5) * cell;
                        hits.partition_point(|&h| h < x) % 2 == 1
                    })
                    .collect()
            })
            .collect();
        for (row, r) in rows.into_iter().enumerate() {
            for (i, inside) in r.into_iter().enumerate() {
                if inside {
                    grid.occupancy.set(row * res + i, true);
                }
            }
        }
        Ok(grid)
    }
}

/// x coordinate where the line `(·, y, z)` pierces the triangle, if it does.
fn ray_x_hit(t: &[Point; 3], y: f64, z: f64) -> Option<f64> {
    let [a, b, c] = t;
    let (y0, z0) = (a[1] - y, a[2] - z);
    let (y1, z1) = (b[1] - y, b[2] - z);
    let (y2, z2) = (c[1] - y, c[2] - z);
    let w0 = y1 * z2 - z1 * y2;
    let w1 = y2 * z0 - z2 * y0;
    let w2 = y0 * z1 - z0 * y1;
    let inside = (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) || (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
    let sum = w0 + w1 + w2;
    if !inside || sum == 0.0 {
        return None;
    }
    Some((w0 * a[0] + w1 * b[0] + w2 * c[0]) / sum)
}
