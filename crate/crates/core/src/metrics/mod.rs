//! Evaluation: part overlap (POR), instantiation distance (ID), and the
//! MMD / COV / 1-NNA set scores built on ID.

mod id;
mod object;
mod por;
mod set;

use serde::{Deserialize, Serialize};

pub use id::{id_signature, instantiation_distance, normalized_mesh, IdSignature};
pub use object::{ObjectGeometry, PartGeometry};
pub use por::{mean_interpenetration, por, posed_voxels, viou};
pub use set::{id_matrices, set_metrics, DistanceMatrices, SetMetrics};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Joint-state draws per object for POR.
    pub joint_states: usize,
    pub voxel_res: usize,
    /// Openness ratios at which ID compares objects.
    pub openness: Vec<f64>,
    pub surface_samples: usize,
    /// Marching-cubes resolution for analytic part meshes.
    pub mesh_res: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            joint_states: 10,
            voxel_res: 96,
            openness: vec![0.0, 0.5, 1.0],
            surface_samples: 2048,
            mesh_res: 32,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn check(&self) -> Result<()> {
        if self.joint_states == 0 || self.voxel_res < 32 || self.openness.is_empty() || self.surface_samples == 0 {
            return Err(Error::Config(format!("bad evaluation config {self:?}")));
        }
        Ok(())
    }
}
