//! Sparse voxel reconstruction: a world-frame background grid, one
//! body-frame grid per annotated object, the pixel-voxel table produced by
//! ray casting, and PnP camera pose recovery.

mod grid;
mod pnp;
mod raycast;
mod split;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::types::ObjectId;

pub use grid::{integrate_scan, GridFrame, SparseVoxelGrid, VoxelKey};
pub use pnp::{mean_reprojection_error, solve_pnp, Correspondence, Degeneracy, PnpError, PnpSolution};
pub use raycast::{first_hit, raycast_table, PixelHit, PixelVoxelTable, RaycastScene, TableSlice};
pub use split::{split_foreground, FramePose, IndexedPoints, ObjectBox, Partition};

#[derive(Debug, Error, PartialEq)]
pub enum ReconError {
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("non-finite or out-of-range point {0:?}")]
    NonFinitePoint([f64; 3]),
    #[error("object {0} has non-positive half extents")]
    InvalidBox(ObjectId),
    #[error("object {object} has no pose for frame {frame}")]
    MissingBoxPose { object: ObjectId, frame: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
