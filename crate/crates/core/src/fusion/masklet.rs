use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::mask::{PointMask, RleMask};
use crate::recon::{GridFrame, ObjectBox, PixelVoxelTable, VoxelKey};
use crate::types::{CameraId, MaskletId, ObjectId};

/// A voxel in one of the reconstruction grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelRef {
    pub grid: GridFrame,
    pub key: VoxelKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteRecord {
    /// Frames in which a masked pixel mapped to this voxel.
    pub votes: u32,
    /// Frames in which any pixel mapped to this voxel.
    pub observations: u32,
}

impl VoteRecord {
    pub fn rate(&self) -> f64 {
        if self.observations == 0 {
            0.0
        } else {
            self.votes as f64 / self.observations as f64
        }
    }
}

/// Which 2D track (and camera) a voxel masklet was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaskletSource {
    pub camera: CameraId,
    pub track: MaskletId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelMasklet {
    pub id: MaskletId,
    pub sources: Vec<MaskletSource>,
    /// First frame with at least one vote; positions body-frame voxels for
    /// BEV clustering.
    pub anchor_frame: Option<usize>,
    pub voxels: BTreeMap<VoxelRef, VoteRecord>,
}

impl VoxelMasklet {
    pub fn cameras(&self) -> BTreeSet<CameraId> {
        self.sources.iter().map(|s| s.camera).collect()
    }

    /// Voxels with at least one vote and a vote rate of at least `min_rate`.
    pub fn candidates(&self, min_rate: f64) -> Vec<VoxelRef> {
        self.voxels
            .iter()
            .filter(|(_, r)| r.votes > 0 && r.rate() >= min_rate)
            .map(|(v, _)| *v)
            .collect()
    }

    pub fn voxel_set(&self) -> BTreeSet<VoxelRef> {
        self.voxels.keys().copied().collect()
    }

    pub fn retain(&self, keep: &BTreeSet<VoxelRef>) -> VoxelMasklet {
        VoxelMasklet {
            id: self.id,
            sources: self.sources.clone(),
            anchor_frame: self.anchor_frame,
            voxels: self.voxels.iter().filter(|(v, _)| keep.contains(v)).map(|(v, r)| (*v, *r)).collect(),
        }
    }
}

/// A 2D segmentation track from one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Masklet2D {
    pub id: MaskletId,
    pub camera: CameraId,
    pub frames: BTreeMap<usize, RleMask>,
}

/// LiDAR point indices per frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Masklet3D {
    pub id: MaskletId,
    pub frames: BTreeMap<usize, PointMask>,
}

/// Places voxels of any grid in the world frame at a given frame.
#[derive(Debug, Clone, Copy)]
pub struct VoxelPlacer<'a> {
    pub voxel_size: f64,
    pub boxes: &'a BTreeMap<ObjectId, ObjectBox>,
}

impl VoxelPlacer<'_> {
    /// World-frame voxel center, `None` when the owning object has no pose.
    pub fn world_center(&self, v: &VoxelRef, frame: usize) -> Option<Vector3<f64>> {
        let c = v.key.center(self.voxel_size);
        match v.grid {
            GridFrame::World => Some(c),
            GridFrame::Body(id) => self.boxes.get(&id)?.poses.get(&frame).map(|p| p.apply(&c)),
        }
    }

    /// World-frame center at `frame`, or at the object's nearest posed frame.
    pub fn anchored_center(&self, v: &VoxelRef, frame: usize) -> Option<Vector3<f64>> {
        let c = v.key.center(self.voxel_size);
        match v.grid {
            GridFrame::World => Some(c),
            GridFrame::Body(id) => {
                let b = self.boxes.get(&id)?;
                let pose = b
                    .poses
                    .range(frame..)
                    .next()
                    .or_else(|| b.poses.range(..frame).next_back())
                    .map(|(_, p)| p)?;
                Some(pose.apply(&c))
            }
        }
    }
}

/// Votes and observations of one 2D track over the pixel-voxel table.
///
/// Per frame, a voxel gains one observation if any pixel maps to it and one
/// vote if any masked pixel maps to it.
pub fn project_masklet(m: &Masklet2D, table: &PixelVoxelTable) -> Result<VoxelMasklet, FusionError> {
    let mut voxels: BTreeMap<VoxelRef, VoteRecord> = BTreeMap::new();
    let mut anchor = None;
    for (&frame, rle) in &m.frames {
        let slice = table.get(m.camera, frame).ok_or(FusionError::MissingTableSlice { camera: m.camera, frame })?;
        if (rle.width, rle.height) != (slice.width, slice.height) {
            return Err(FusionError::MaskShape {
                camera: m.camera,
                frame,
                mask: (rle.width, rle.height),
                image: (slice.width, slice.height),
            });
        }
        let mask = rle.decode()?;
        let mut seen: BTreeMap<VoxelRef, bool> = BTreeMap::new();
        for (u, v, hit) in slice.iter_hits() {
            let r = VoxelRef { grid: hit.grid, key: hit.key };
            let voted = seen.entry(r).or_insert(false);
            *voted |= mask.get(u, v);
        }
        for (r, voted) in seen {
            let rec = voxels.entry(r).or_default();
            rec.observations += 1;
            if voted {
                rec.votes += 1;
                anchor.get_or_insert(frame);
            }
        }
    }
    Ok(VoxelMasklet {
        id: m.id,
        sources: vec![MaskletSource { camera: m.camera, track: m.id }],
        anchor_frame: anchor,
        voxels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{rle_encode, Mask2D};
    use crate::recon::{PixelHit, TableSlice};

    fn vref(x: i32) -> VoxelRef {
        VoxelRef { grid: GridFrame::World, key: VoxelKey(x, 0, 0) }
    }

    /// 4x1 image: pixels 0,1 → voxel 0; pixel 2 → voxel 1; pixel 3 → nothing
    fn table(frames: usize) -> PixelVoxelTable {
        let mut t = PixelVoxelTable::default();
        for f in 0..frames {
            let mut s = TableSlice::empty(4, 1);
            for (u, x) in [(0, 0), (1, 0), (2, 1)] {
                s.hits[u] = Some(PixelHit { grid: GridFrame::World, key: VoxelKey(x, 0, 0), distance: 1.0 });
            }
            t.insert(CameraId(0), f, s);
        }
        t
    }

    fn masklet(frames: &[[bool; 4]]) -> Masklet2D {
        Masklet2D {
            id: MaskletId(1),
            camera: CameraId(0),
            frames: frames
                .iter()
                .enumerate()
                .map(|(f, m)| (f, rle_encode(&Mask2D::from_data(4, 1, m.to_vec()).unwrap())))
                .collect(),
        }
    }

    #[test]
    fn full_agreement() {
        let vm = project_masklet(&masklet(&[[true, true, false, false]; 4]), &table(4)).unwrap();
        assert_eq!(vm.voxels[&vref(0)], VoteRecord { votes: 4, observations: 4 });
        assert_eq!(vm.voxels[&vref(0)].rate(), 1.0);
        assert_eq!(vm.voxels[&vref(1)], VoteRecord { votes: 0, observations: 4 });
        assert_eq!(vm.anchor_frame, Some(0));
    }

    #[test]
    fn empty_mask_no_votes() {
        let vm = project_masklet(&masklet(&[[false; 4]; 3]), &table(3)).unwrap();
        assert!(vm.voxels.values().all(|r| r.votes == 0 && r.rate() == 0.0 && r.observations == 3));
        assert!(vm.candidates(0.0).is_empty());
        assert_eq!(vm.anchor_frame, None);
    }

    #[test]
    fn brute_force_tally() {
        let frames = [[false, true, true, true], [true, false, false, true]];
        let vm = project_masklet(&masklet(&frames), &table(2)).unwrap();
        // voxel 0: frame 0 via pixel 1, frame 1 via pixel 0 → 2/2; voxel 1: frame 0 only → 1/2
        assert_eq!(vm.voxels[&vref(0)], VoteRecord { votes: 2, observations: 2 });
        assert_eq!(vm.voxels[&vref(1)], VoteRecord { votes: 1, observations: 2 });
        assert_eq!(vm.candidates(0.6), vec![vref(0)]);
    }

    #[test]
    fn missing_slice_rejected() {
        let err = project_masklet(&masklet(&[[true; 4]; 3]), &table(2)).unwrap_err();
        assert_eq!(err, FusionError::MissingTableSlice { camera: CameraId(0), frame: 2 });
    }
}
