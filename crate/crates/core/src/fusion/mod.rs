//! Label fusion: 2D masklets are voted onto voxels through the pixel-voxel
//! table, denoised by BEV clustering, merged across cameras, transferred to
//! LiDAR points, and scored by cross-modal IoU.

mod dbscan;
mod masklet;
mod merge;
mod score;
mod select;
mod transfer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::MaskError;
use crate::types::CameraId;

pub use dbscan::dbscan_bev;
pub use masklet::{
    project_masklet, Masklet2D, Masklet3D, MaskletSource, VoteRecord, VoxelMasklet, VoxelPlacer, VoxelRef,
};
pub use merge::{merge_cross_video, voxel_iou, MergeResult};
pub use score::{image_observations, score_masklet, ImageObservation, MaskletScore};
pub use select::{bev_positions, filter_masklet, select_main_cluster, ClusterStatus, MainCluster};
pub use transfer::transfer_to_points;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("no pixel-voxel table for camera {camera}, frame {frame}")]
    MissingTableSlice { camera: CameraId, frame: usize },
    #[error("mask for camera {camera}, frame {frame} is {mask:?} but the image is {image:?}")]
    MaskShape { camera: CameraId, frame: usize, mask: (u32, u32), image: (u32, u32) },
    #[error("{name} = {value} violates bound {bound}")]
    InvalidParameter { name: &'static str, value: f64, bound: &'static str },
    #[error("{voxels} voxels but {labels} labels")]
    LabelMismatch { voxels: usize, labels: usize },
    #[error("labeled voxel is not part of the masklet")]
    UnknownVoxel,
    #[error("voxel {0:?} belongs to an object without any pose")]
    UnplaceableVoxel(VoxelRef),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Tunable fusion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// DBSCAN neighborhood radius in the BEV plane, meters.
    pub eps: f64,
    pub min_pts: usize,
    /// Candidate voxels need at least this vote rate.
    pub min_vote_rate: f64,
    /// Voxel IoU needed to merge masklets from different cameras.
    pub overlap_threshold: f64,
    /// Max point-to-voxel-center distance for label transfer, meters.
    pub transfer_radius: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            eps: 0.5,
            min_pts: 5,
            min_vote_rate: 0.0,
            overlap_threshold: 0.5,
            transfer_radius: 0.15,
        }
    }
}

impl FusionParams {
    pub fn for_voxel_size(voxel_size: f64) -> Self {
        Self {
            transfer_radius: 1.5 * voxel_size,
            ..Self::default()
        }
    }

    fn checks(&self) -> [(&'static str, f64, bool, &'static str); 5] {
        [
            ("eps", self.eps, self.eps > 0.0 && self.eps <= 100.0, "(0, 100]"),
            ("min_pts", self.min_pts as f64, (1..=10_000).contains(&self.min_pts), "[1, 10000]"),
            ("min_vote_rate", self.min_vote_rate, (0.0..=1.0).contains(&self.min_vote_rate), "[0, 1]"),
            ("overlap_threshold", self.overlap_threshold, (0.0..=1.0).contains(&self.overlap_threshold), "[0, 1]"),
            ("transfer_radius", self.transfer_radius, self.transfer_radius > 0.0 && self.transfer_radius <= 10.0, "(0, 10]"),
        ]
    }

    /// Allowed range per parameter, as interval notation.
    pub fn bounds() -> [(&'static str, &'static str); 5] {
        Self::default().checks().map(|(name, _, _, bound)| (name, bound))
    }

    /// Checks every parameter against its allowed range.
    pub fn validate(&self) -> Result<(), FusionError> {
        for (name, value, ok, bound) in self.checks() {
            if !ok {
                return Err(FusionError::InvalidParameter { name, value, bound });
            }
        }
        Ok(())
    }
}
