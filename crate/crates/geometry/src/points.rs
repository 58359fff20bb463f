use std::path::Path;

use crate::error::{GeometryError, Result};
use crate::Point;

/// Writes points as little-endian `f32` triples with no header.
pub fn write_points(path: impl AsRef<Path>, points: &[Point]) -> Result<()> {
    let mut buf = Vec::with_capacity(points.len() * 12);
    for p in points {
        for c in p {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<Point>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 12 != 0 {
        return Err(GeometryError::PointFile(format!("{} bytes is not a whole number of f32 triples", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]) as f64;
            [f(0), f(4), f(8)]
        })
        .collect())
}
