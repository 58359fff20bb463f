use thiserror::Error;

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("grid resolution {res} is below the minimum of {min}")]
    Resolution { res: usize, min: usize },
    #[error("invalid bounds: {0}")]
    Bounds(String),
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("point set is empty")]
    EmptyPoints,
    #[error("voxel grids do not share origin, cell size and resolution")]
    GridMismatch,
    #[error("malformed point file: {0}")]
    PointFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
