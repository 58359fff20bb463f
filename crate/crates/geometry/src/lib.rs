//! Geometry kernels for articulated-object generation: analytic signed
//! distance fields, marching cubes, triangle meshes, surface sampling,
//! voxel occupancy and chamfer distance.
//!
//! Points are plain `[f64; 3]`. Signed distances are negative inside.

mod chamfer;
mod error;
mod mc;
mod mesh;
mod points;
mod sample;
pub mod sdf;
mod voxel;

pub use chamfer::{chamfer, chamfer_brute_force, PointIndex};
pub use error::{GeometryError, Result};
pub use mc::{marching_cubes, ScalarGrid};
pub use mesh::Mesh;
pub use points::{read_points, write_points};
pub use sample::sample_surface;
pub use sdf::Sdf;
pub use voxel::VoxelGrid;

pub type Point = [f64; 3];
