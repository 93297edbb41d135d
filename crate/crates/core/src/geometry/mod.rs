//! Meshes, surface sampling, synthetic shapes and point-cloud files.

mod io;
mod mesh;
mod pointcloud;
mod sampling;
mod synthetic;

use thiserror::Error;

pub use io::{parse_xyz, read_xyz, write_ply, write_xyz, xyz_string};
pub use mesh::{load_mesh, parse_obj, parse_off, Mesh, MeshFormat};
pub use pointcloud::{Axis3, PointCloud};
pub use sampling::{sample_surface, sample_surface_with_faces};
pub use synthetic::{synthetic_dataset, synthetic_shape, Shape, ShapeKind, DATASET_JITTER, DATASET_RESOLUTION};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    BadIndex { face: usize, index: usize, count: usize },
    #[error("all faces are degenerate (zero area)")]
    Degenerate,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud has a non-finite coordinate")]
    NonFinite,
    #[error("all points are identical; cannot normalize")]
    ZeroExtent,
    #[error("invalid shape parameters: {0}")]
    InvalidParams(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GeometryError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
