use std::sync::Arc;

use artkit_geometry::{Mesh, Point, ScalarGrid, Sdf};

use crate::artic::ArticTree;
use crate::dataset::shapes::{lo, hi, to_frame, FRAME};
use crate::dataset::{CorpusObject, PartShape};
use crate::error::{Error, Result};

/// One part's shape in its normalized frame.
#[derive(Clone, Debug)]
pub enum PartGeometry {
    Analytic(PartShape),
    /// Sampled field over `[-1, 1]³`, e.g. decoded from a latent.
    Grid(Arc<ScalarGrid>),
}

impl PartGeometry {
    pub fn field(&self) -> &dyn Sdf {
        match self {
            PartGeometry::Analytic(s) => s,
            PartGeometry::Grid(g) => g.as_ref(),
        }
    }

    pub fn frame_mesh(&self, res: usize) -> Result<Mesh> {
        match self {
            PartGeometry::Analytic(s) => s.frame_mesh(res),
            PartGeometry::Grid(g) => {
                let mut m = g.extract(0.0);
                m.cleanup();
                Ok(m)
            }
        }
    }
}

/// An articulated object with geometry for every part.
#[derive(Clone, Debug)]
pub struct ObjectGeometry {
    pub name: String,
    pub tree: ArticTree,
    pub parts: Vec<PartGeometry>,
}

impl ObjectGeometry {
    pub fn new(name: impl Into<String>, tree: ArticTree, parts: Vec<PartGeometry>) -> Result<Self> {
        if parts.len() != tree.len() {
            return Err(Error::Dimension {
                what: "part geometries",
                expected: tree.len(),
                got: parts.len(),
            });
        }
        Ok(ObjectGeometry {
            name: name.into(),
            tree,
            parts,
        })
    }

    pub fn from_corpus(obj: &CorpusObject) -> Self {
        ObjectGeometry {
            name: obj.id.clone(),
            tree: obj.tree.clone(),
            parts: obj.shapes.iter().cloned().map(PartGeometry::Analytic).collect(),
        }
    }

    /// Part `i` placed in its bounding box, in rest-pose coordinates.
    pub fn part_mesh(&self, i: usize, res: usize) -> Result<Mesh> {
        let b = &self.tree.nodes[i].bbox;
        let mut m = self.parts[i].frame_mesh(res)?;
        m.map_box([-FRAME; 3], [FRAME; 3], lo(b), hi(b));
        Ok(m)
    }

    /// Rest-pose part meshes; empty parts yield empty meshes.
    pub fn part_meshes(&self, res: usize) -> Result<Vec<Mesh>> {
        (0..self.tree.len()).map(|i| self.part_mesh(i, res)).collect()
    }

    /// Sign of part `i`'s field at a rest-pose point.
    pub fn rest_field(&self, i: usize) -> impl Sdf + '_ {
        let b = self.tree.nodes[i].bbox;
        let field = self.parts[i].field();
        move |p: Point| {
            let q = to_frame(&b, p);
            if q.iter().any(|v| !v.is_finite()) {
                f64::INFINITY
            } else {
                field.distance(q)
            }
        }
    }
}
