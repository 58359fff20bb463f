//! Articulated objects as trees of parts.

pub(crate) mod json;
mod kinematics;
mod token;
mod urdf;
mod validate;

use serde::{Deserialize, Serialize};

pub use json::{from_json, to_json, FORMAT};
pub use kinematics::{joint_transform, openness_states, pose, pose_at_openness, sample_states, JointState};
pub use token::{pack_token, token_len, unpack_token};
pub use urdf::export_urdf;
pub use validate::{validate_tree, Rule, Violation};

/// One rigid part. Coordinates are global rest-pose coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartNode {
    /// Index of the parent node; `None` for the root.
    pub parent: Option<usize>,
    pub label: String,
    /// `[xmin, ymin, zmin, xmax, ymax, zmax]`.
    pub bbox: [f64; 6],
    /// Geometry latent.
    pub z: Vec<f64>,
    /// Joint origin followed by unit direction.
    pub joint: [f64; 6],
    /// `[t_min, t_max, r_min, r_max]`.
    pub limit: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Fixed,
    Revolute,
    Prismatic,
    /// Both translation and rotation ranges are nonzero.
    Mixed,
}

impl PartNode {
    pub fn origin(&self) -> [f64; 3] {
        [self.joint[0], self.joint[1], self.joint[2]]
    }

    pub fn direction(&self) -> [f64; 3] {
        [self.joint[3], self.joint[4], self.joint[5]]
    }

    pub fn lo(&self) -> [f64; 3] {
        [self.bbox[0], self.bbox[1], self.bbox[2]]
    }

    pub fn hi(&self) -> [f64; 3] {
        [self.bbox[3], self.bbox[4], self.bbox[5]]
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| 0.5 * (self.bbox[k] + self.bbox[k + 3]))
    }

    pub fn joint_kind(&self) -> JointKind {
        let [t0, t1, r0, r1] = self.limit;
        let slides = t0 != 0.0 || t1 != 0.0;
        let turns = r0 != 0.0 || r1 != 0.0;
        match (slides, turns) {
            (false, false) => JointKind::Fixed,
            (false, true) => JointKind::Revolute,
            (true, false) => JointKind::Prismatic,
            (true, true) => JointKind::Mixed,
        }
    }
}

/// Nodes in topological order; the root is node 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArticTree {
    pub nodes: Vec<PartNode>,
}

impl ArticTree {
    pub fn new(nodes: Vec<PartNode>) -> Self {
        ArticTree { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.parent.is_none())
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&c| self.nodes[c].parent == Some(i))
            .collect()
    }

    /// Node indices from the root down to `i`, inclusive.
    pub fn path(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut cur = i;
        while let Some(p) = self.nodes[cur].parent {
            if out.len() > self.nodes.len() {
                break;
            }
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Number of edges between the root and `i`.
    pub fn depth(&self, i: usize) -> usize {
        self.path(i).len() - 1
    }

    pub fn max_depth(&self) -> usize {
        (0..self.len()).map(|i| self.depth(i)).max().unwrap_or(0)
    }

    pub fn max_out_degree(&self) -> usize {
        (0..self.len()).map(|i| self.children(i).len()).max().unwrap_or(0)
    }

    /// Latent width shared by every node, if any.
    pub fn d_z(&self) -> Option<usize> {
        self.nodes.first().map(|n| n.z.len())
    }

    /// Union of all part boxes.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.nodes.first()?;
        let (mut lo, mut hi) = (first.lo(), first.hi());
        for n in &self.nodes {
            for k in 0..3 {
                lo[k] = lo[k].min(n.bbox[k]);
                hi[k] = hi[k].max(n.bbox[k + 3]);
            }
        }
        Some((lo, hi))
    }

    /// Children of the root whose joints slide and whose joints turn.
    pub fn count_root_joints(&self) -> (usize, usize) {
        let Some(r) = self.root() else { return (0, 0) };
        let kinds: Vec<JointKind> = self.children(r).iter().map(|&c| self.nodes[c].joint_kind()).collect();
        let slides = kinds.iter().filter(|&&k| k == JointKind::Prismatic).count();
        let turns = kinds.iter().filter(|&&k| k == JointKind::Revolute).count();
        (slides, turns)
    }
}
