use rayon::prelude::*;
use rstar::RTree;

use crate::error::{GeometryError, Result};
use crate::Point;

fn dist2(a: &Point, b: &Point) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Exact nearest-neighbour index over a point set.
pub struct PointIndex {
    tree: RTree<Point>,
}

impl PointIndex {
    pub fn new(points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(GeometryError::EmptyPoints);
        }
        Ok(PointIndex {
            tree: RTree::bulk_load(points.to_vec()),
        })
    }

    pub fn nearest_sq(&self, q: &Point) -> f64 {
        self.tree.nearest_neighbor(q).map_or(f64::INFINITY, |p| dist2(p, q))
    }

    /// Mean squared nearest-neighbour distance from `queries` into this set,
    /// summed in query order.
    pub fn mean_nearest_sq(&self, queries: &[Point]) -> f64 {
        let d: Vec<f64> = queries.par_iter().map(|q| self.nearest_sq(q)).collect();
        d.iter().sum::<f64>() / queries.len() as f64
    }
}

/// Symmetric chamfer distance with squared distances:
/// `½ (mean_a min_b ‖a-b‖² + mean_b min_a ‖a-b‖²)`.
pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64> {
    let ia = PointIndex::new(a)?;
    let ib = PointIndex::new(b)?;
    Ok(0.5 * (ib.mean_nearest_sq(a) + ia.mean_nearest_sq(b)))
}

/// Quadratic-time reference for [`chamfer`].
pub fn chamfer_brute_force(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyPoints);
    }
    let one_way = |x: &[Point], y: &[Point]| {
        x.iter()
            .map(|p| y.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singletons_give_squared_distance() {
        let d = chamfer(&[[0.0; 3]], &[[0.0, 3.0, 4.0]]).unwrap();
        assert_eq!(d, 25.0);
    }

    #[test]
    fn many_coincident_coordinates() {
        // Points on one face of a box share an x coordinate.
        let a: Vec<Point> = (0..500).map(|i| [0.5, (i % 23) as f64 * 0.01, (i / 23) as f64 * 0.01]).collect();
        let b: Vec<Point> = a.iter().map(|p| [0.5, p[1] + 0.001, p[2]]).collect();
        let fast = chamfer(&a, &b).unwrap();
        let slow = chamfer_brute_force(&a, &b).unwrap();
        assert!((fast - slow).abs() < 1e-15);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(chamfer(&[], &[[0.0; 3]]).is_err());
    }
}
