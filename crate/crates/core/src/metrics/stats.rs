use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::fusion::{Masklet2D, Masklet3D, MaskletScore, VoxelMasklet};
use crate::types::MaskletId;

/// One sequence's worth of annotation artifacts.
#[derive(Debug, Clone, Copy)]
pub struct StatsInput<'a> {
    pub frame_count: usize,
    pub camera_count: usize,
    pub masklets2d: &'a [Masklet2D],
    /// Point masklets, keyed like the fused voxel masklets.
    pub masklets3d: &'a [Masklet3D],
    pub voxel_masklets: &'a [VoxelMasklet],
    pub scores: &'a BTreeMap<MaskletId, MaskletScore>,
}

/// Counts over power-of-two buckets: bucket 0 holds 0, bucket k ≥ 1 holds
/// `[2^(k-1), 2^k)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bucket(value: u64) -> usize {
        (u64::BITS - value.leading_zeros()) as usize
    }

    pub fn add(&mut self, value: u64) {
        let b = Self::bucket(value);
        if self.counts.len() <= b {
            self.counts.resize(b + 1, 0);
        }
        self.counts[b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sequences: usize,
    pub images: usize,
    pub scans: usize,
    pub masks_per_image: f64,
    pub masks_per_scan: f64,
    /// Voxels per fused masklet.
    pub volume_histogram: Histogram,
    /// Pixels per image mask.
    pub area_histogram: Histogram,
    /// Per fused masklet: frames present in both modalities over frames
    /// present in either.
    pub co_occurrence: BTreeMap<String, f64>,
    /// Ten equal bins over [0, 1].
    pub score_histogram: [u64; 10],
    pub not_visible: u64,
    pub mean_score: Option<f64>,
}

pub fn dataset_stats(inputs: &[StatsInput<'_>]) -> DatasetStats {
    let mut s = DatasetStats { sequences: inputs.len(), ..Default::default() };
    let (mut image_masks, mut scan_masks) = (0usize, 0usize);
    let mut score_sum = 0.0;
    let mut scored = 0usize;
    for (seq, input) in inputs.iter().enumerate() {
        s.images += input.frame_count * input.camera_count;
        s.scans += input.frame_count;
        let tracks: BTreeMap<MaskletId, &Masklet2D> = input.masklets2d.iter().map(|m| (m.id, m)).collect();
        for m in input.masklets2d {
            for rle in m.frames.values() {
                let area = rle.area();
                if area > 0 {
                    image_masks += 1;
                    s.area_histogram.add(area);
                }
            }
        }
        for m in input.masklets3d {
            scan_masks += m.frames.values().filter(|p| !p.is_empty()).count();
        }
        for vm in input.voxel_masklets {
            s.volume_histogram.add(vm.voxels.len() as u64);
            let image_frames: BTreeSet<usize> = vm
                .sources
                .iter()
                .filter_map(|src| tracks.get(&src.track))
                .flat_map(|t| t.frames.iter().filter(|(_, r)| r.area() > 0).map(|(f, _)| *f))
                .collect();
            let lidar_frames: BTreeSet<usize> = input
                .masklets3d
                .iter()
                .filter(|m| m.id == vm.id)
                .flat_map(|m| m.frames.iter().filter(|(_, p)| !p.is_empty()).map(|(f, _)| *f))
                .collect();
            let either = image_frames.union(&lidar_frames).count();
            if either > 0 {
                let both = image_frames.intersection(&lidar_frames).count();
                s.co_occurrence.insert(format!("{seq}/{}", vm.id), both as f64 / either as f64);
            }
        }
        for score in input.scores.values() {
            match score.value() {
                Some(v) => {
                    let bin = ((v * 10.0).floor() as usize).min(9);
                    s.score_histogram[bin] += 1;
                    score_sum += v;
                    scored += 1;
                }
                None => s.not_visible += 1,
            }
        }
    }
    if s.images > 0 {
        s.masks_per_image = image_masks as f64 / s.images as f64;
    }
    if s.scans > 0 {
        s.masks_per_scan = scan_masks as f64 / s.scans as f64;
    }
    s.mean_score = (scored > 0).then(|| score_sum / scored as f64);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{MaskletSource, VoteRecord, VoxelRef};
    use crate::mask::{rle_encode, Mask2D, PointMask};
    use crate::recon::{GridFrame, VoxelKey};
    use crate::types::CameraId;

    fn track(id: u32, frames: &[(usize, bool)]) -> Masklet2D {
        Masklet2D {
            id: MaskletId(id),
            camera: CameraId(0),
            frames: frames
                .iter()
                .map(|(f, on)| (*f, rle_encode(&Mask2D::from_fn(4, 4, |u, _| *on && u < 2))))
                .collect(),
        }
    }

    #[test]
    fn masks_per_image_counts_visible() {
        let ms = [track(1, &[(0, true)]), track(2, &[(0, true)]), track(3, &[(0, true)])];
        let scores = BTreeMap::new();
        let s = dataset_stats(&[StatsInput {
            frame_count: 1,
            camera_count: 1,
            masklets2d: &ms,
            masklets3d: &[],
            voxel_masklets: &[],
            scores: &scores,
        }]);
        assert_eq!(s.masks_per_image, 3.0);
        assert_eq!(s.area_histogram.counts, vec![0, 0, 0, 0, 3]);
    }

    #[test]
    fn co_occurrence_ratio() {
        // image frames 0..6, lidar frames 2..8 → both {2..5} = 4 of 8
        let t = track(5, &(0..6).map(|f| (f, true)).collect::<Vec<_>>());
        let m3 = Masklet3D { id: MaskletId(5), frames: (2..8).map(|f| (f, PointMask::new(vec![1, 2]))).collect() };
        let vm = VoxelMasklet {
            id: MaskletId(5),
            sources: vec![MaskletSource { camera: CameraId(0), track: MaskletId(5) }],
            anchor_frame: Some(0),
            voxels: [(VoxelRef { grid: GridFrame::World, key: VoxelKey(0, 0, 0) }, VoteRecord { votes: 1, observations: 1 })].into(),
        };
        let scores = BTreeMap::from([(MaskletId(5), MaskletScore::Scored { score: 0.55, images: 3 }), (MaskletId(6), MaskletScore::NotVisible)]);
        let s = dataset_stats(&[StatsInput {
            frame_count: 8,
            camera_count: 1,
            masklets2d: &[t],
            masklets3d: &[m3],
            voxel_masklets: &[vm],
            scores: &scores,
        }]);
        assert_eq!(s.co_occurrence["0/5"], 0.5);
        assert_eq!(s.masks_per_scan, 6.0 / 8.0);
        assert_eq!(s.score_histogram[5], 1);
        assert_eq!(s.not_visible, 1);
        assert_eq!(s.mean_score, Some(0.55));
    }

    #[test]
    fn histogram_buckets() {
        assert_eq!(Histogram::bucket(0), 0);
        assert_eq!(Histogram::bucket(1), 1);
        assert_eq!(Histogram::bucket(3), 2);
        assert_eq!(Histogram::bucket(4), 3);
    }
}
