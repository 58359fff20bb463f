//! Analytic signed distance functions and combinators.

use nalgebra::{Matrix4, Point3};

use crate::Point;

pub trait Sdf: Send + Sync {
    fn distance(&self, p: Point) -> f64;
}

impl<F> Sdf for F
where
    F: Fn(Point) -> f64 + Send + Sync,
{
    fn distance(&self, p: Point) -> f64 {
        self(p)
    }
}

impl Sdf for Box<dyn Sdf> {
    fn distance(&self, p: Point) -> f64 {
        (**self).distance(p)
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Sphere centered at the origin. Exact.
#[derive(Clone, Copy, Debug)]
pub struct Sphere {
    pub radius: f64,
}

impl Sdf for Sphere {
    fn distance(&self, p: Point) -> f64 {
        norm(p) - self.radius
    }
}

/// Axis-aligned box centered at the origin. Exact.
#[derive(Clone, Copy, Debug)]
pub struct Cuboid {
    pub half: [f64; 3],
}

impl Cuboid {
    pub fn from_bounds(lo: Point, hi: Point) -> Translated<Cuboid> {
        let half = [0, 1, 2].map(|k| 0.5 * (hi[k] - lo[k]));
        let center = [0, 1, 2].map(|k| 0.5 * (hi[k] + lo[k]));
        Translated {
            shape: Cuboid { half },
            offset: center,
        }
    }
}

impl Sdf for Cuboid {
    fn distance(&self, p: Point) -> f64 {
        let q = [0, 1, 2].map(|k| p[k].abs() - self.half[k]);
        let outside = norm(q.map(|v| v.max(0.0)));
        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
        outside + inside
    }
}

/// Box with edges rounded by `radius`; the outer extent stays `half`.
/// Exact.
#[derive(Clone, Copy, Debug)]
pub struct RoundedBox {
    pub half: [f64; 3],
    pub radius: f64,
}

impl Sdf for RoundedBox {
    fn distance(&self, p: Point) -> f64 {
        let inner = Cuboid {
            half: self.half.map(|h| (h - self.radius).max(0.0)),
        };
        inner.distance(p) - self.radius
    }
}

/// Capped cylinder along z, centered at the origin. Exact, including the
/// rim region where both the side and cap distances are positive.
#[derive(Clone, Copy, Debug)]
pub struct Cylinder {
    pub radius: f64,
    pub half_height: f64,
}

impl Sdf for Cylinder {
    fn distance(&self, p: Point) -> f64 {
        let dr = (p[0] * p[0] + p[1] * p[1]).sqrt() - self.radius;
        let dz = p[2].abs() - self.half_height;
        let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
        outside + dr.max(dz).min(0.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Translated<S> {
    pub shape: S,
    pub offset: Point,
}

impl<S: Sdf> Sdf for Translated<S> {
    fn distance(&self, p: Point) -> f64 {
        self.shape
            .distance([p[0] - self.offset[0], p[1] - self.offset[1], p[2] - self.offset[2]])
    }
}

/// Shape moved by a rigid transform. Rigid motions preserve distance, so
/// the result stays exact when the inner shape is.
#[derive(Clone, Debug)]
pub struct Transformed<S> {
    pub shape: S,
    inverse: Matrix4<f64>,
}

impl<S> Transformed<S> {
    /// `transform` maps shape coordinates to world coordinates and must be
    /// rigid (and therefore invertible).
    pub fn new(shape: S, transform: &Matrix4<f64>) -> Self {
        let inverse = transform.try_inverse().unwrap_or_else(Matrix4::identity);
        Transformed { shape, inverse }
    }
}

impl<S: Sdf> Sdf for Transformed<S> {
    fn distance(&self, p: Point) -> f64 {
        let q = self.inverse.transform_point(&Point3::new(p[0], p[1], p[2]));
        self.shape.distance([q.x, q.y, q.z])
    }
}

/// Pointwise minimum. Exact outside every component; inside overlapping
/// components it bounds the true distance from below.
pub struct Union(pub Vec<Box<dyn Sdf>>);

impl Sdf for Union {
    fn distance(&self, p: Point) -> f64 {
        self.0.iter().map(|s| s.distance(p)).fold(f64::INFINITY, f64::min)
    }
}
