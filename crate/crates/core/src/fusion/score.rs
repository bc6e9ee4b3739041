use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::masklet::{Masklet2D, VoxelMasklet, VoxelRef};
use super::merge::voxel_iou;
use super::FusionError;
use crate::recon::PixelVoxelTable;
use crate::types::CameraId;

/// What one image contributes to a masklet's score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageObservation {
    pub camera: CameraId,
    pub frame: usize,
    /// Voxels hit by masked pixels.
    pub mapped: BTreeSet<VoxelRef>,
    /// Voxels hit by any pixel.
    pub visible: BTreeSet<VoxelRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MaskletScore {
    Scored { score: f64, images: usize },
    /// The masklet is not visible in any image; no score exists.
    NotVisible,
}

impl MaskletScore {
    pub fn value(&self) -> Option<f64> {
        match self {
            MaskletScore::Scored { score, .. } => Some(*score),
            MaskletScore::NotVisible => None,
        }
    }
}

/// Observations for every frame of the given 2D tracks.
pub fn image_observations(tracks: &[&Masklet2D], table: &PixelVoxelTable) -> Result<Vec<ImageObservation>, FusionError> {
    let mut out = Vec::new();
    for m in tracks {
        for (&frame, rle) in &m.frames {
            let slice = table.get(m.camera, frame).ok_or(FusionError::MissingTableSlice { camera: m.camera, frame })?;
            let mask = rle.decode()?;
            let mut obs = ImageObservation { camera: m.camera, frame, ..Default::default() };
            for (u, v, hit) in slice.iter_hits() {
                let r = VoxelRef { grid: hit.grid, key: hit.key };
                obs.visible.insert(r);
                if mask.get(u, v) {
                    obs.mapped.insert(r);
                }
            }
            out.push(obs);
        }
    }
    Ok(out)
}

/// Mean over images where the masklet is visible of
/// IoU(mapped voxels, visible part of the masklet).
pub fn score_masklet(vm: &VoxelMasklet, images: &[ImageObservation]) -> MaskletScore {
    let set = vm.voxel_set();
    let mut sum = 0.0;
    let mut n = 0usize;
    for img in images {
        let visible: BTreeSet<VoxelRef> = set.intersection(&img.visible).copied().collect();
        if visible.is_empty() {
            continue;
        }
        sum += voxel_iou(&img.mapped, &visible);
        n += 1;
    }
    if n == 0 {
        MaskletScore::NotVisible
    } else {
        MaskletScore::Scored { score: sum / n as f64, images: n }
    }
}
