use std::collections::{BTreeMap, BTreeSet};

use super::masklet::{VoxelMasklet, VoxelRef};
use crate::types::MaskletId;

#[derive(Debug, Clone, PartialEq)]
pub struct MergeResult {
    pub merged: Vec<VoxelMasklet>,
    /// Input masklet id → id of the merged masklet containing it.
    pub mapping: BTreeMap<MaskletId, MaskletId>,
}

pub fn voxel_iou(a: &BTreeSet<VoxelRef>, b: &BTreeSet<VoxelRef>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let n = parent[c];
        parent[c] = r;
        c = n;
    }
    r
}

fn union_members(group: &[&VoxelMasklet]) -> VoxelMasklet {
    let mut out = VoxelMasklet {
        id: group.iter().map(|m| m.id).min().expect("non-empty group"),
        sources: Vec::new(),
        anchor_frame: group.iter().filter_map(|m| m.anchor_frame).min(),
        voxels: BTreeMap::new(),
    };
    for m in group {
        out.sources.extend(m.sources.iter().copied());
        for (v, r) in &m.voxels {
            let e = out.voxels.entry(*v).or_default();
            e.votes += r.votes;
            e.observations += r.observations;
        }
    }
    out.sources.sort();
    out.sources.dedup();
    out
}

/// Merges masklets seen by disjoint camera sets whose voxel IoU reaches
/// `overlap_threshold`, repeating until no pair qualifies. The merged id is
/// the smallest member id; votes and observations are summed per voxel.
pub fn merge_cross_video(masklets: &[VoxelMasklet], overlap_threshold: f64) -> MergeResult {
    let mut current: Vec<VoxelMasklet> = masklets.to_vec();
    current.sort_by_key(|m| m.id);
    let mut mapping: BTreeMap<MaskletId, MaskletId> = masklets.iter().map(|m| (m.id, m.id)).collect();
    loop {
        let n = current.len();
        let sets: Vec<_> = current.iter().map(|m| m.voxel_set()).collect();
        let cams: Vec<_> = current.iter().map(|m| m.cameras()).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        let mut any = false;
        for i in 0..n {
            for j in (i + 1)..n {
                if !cams[i].is_disjoint(&cams[j]) || sets[i].is_empty() || sets[j].is_empty() {
                    continue;
                }
                if voxel_iou(&sets[i], &sets[j]) >= overlap_threshold {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                        any = true;
                    }
                }
            }
        }
        if !any {
            break;
        }
        let mut groups: BTreeMap<usize, Vec<&VoxelMasklet>> = BTreeMap::new();
        for (i, m) in current.iter().enumerate() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(m);
        }
        let next: Vec<VoxelMasklet> = groups.values().map(|g| union_members(g)).collect();
        for g in groups.values() {
            let new_id = g.iter().map(|m| m.id).min().expect("non-empty group");
            for m in g {
                for target in mapping.values_mut() {
                    if *target == m.id {
                        *target = new_id;
                    }
                }
            }
        }
        current = next;
        current.sort_by_key(|m| m.id);
    }
    MergeResult { merged: current, mapping }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{MaskletSource, VoteRecord};
    use crate::recon::{GridFrame, VoxelKey};
    use crate::types::CameraId;

    fn m(id: u32, cam: u32, xs: std::ops::Range<i32>) -> VoxelMasklet {
        VoxelMasklet {
            id: MaskletId(id),
            sources: vec![MaskletSource { camera: CameraId(cam), track: MaskletId(id) }],
            anchor_frame: Some(0),
            voxels: xs
                .map(|x| (VoxelRef { grid: GridFrame::World, key: VoxelKey(x, 0, 0) }, VoteRecord { votes: 1, observations: 2 }))
                .collect(),
        }
    }

    #[test]
    fn disjoint_stay_apart() {
        let r = merge_cross_video(&[m(1, 0, 0..5), m(2, 1, 10..15)], 0.5);
        assert_eq!(r.merged.len(), 2);
        assert_eq!(r.mapping[&MaskletId(2)], MaskletId(2));
    }

    #[test]
    fn identical_across_cameras_merge() {
        let r = merge_cross_video(&[m(4, 0, 0..5), m(2, 1, 0..5)], 0.5);
        assert_eq!(r.merged.len(), 1);
        let merged = &r.merged[0];
        assert_eq!(merged.id, MaskletId(2));
        assert!(merged.voxels.values().all(|v| *v == VoteRecord { votes: 2, observations: 4 }));
        assert_eq!(r.mapping[&MaskletId(4)], MaskletId(2));
    }

    #[test]
    fn same_camera_never_merges() {
        let r = merge_cross_video(&[m(1, 0, 0..5), m(2, 0, 0..5)], 0.5);
        assert_eq!(r.merged.len(), 2);
    }

    #[test]
    fn chain_forms_one_component() {
        // A=[0,8), B=[2,10): IoU 6/10 ; B, C=[4,12): 6/10 ; A, C: 4/12
        let (a, b, c) = (m(1, 0, 0..8), m(2, 1, 2..10), m(3, 2, 4..12));
        assert!((voxel_iou(&a.voxel_set(), &b.voxel_set()) - 0.6).abs() < 1e-12);
        let r = merge_cross_video(&[a, b, c], 0.5);
        assert_eq!(r.merged.len(), 1);
        assert_eq!(r.merged[0].voxels.len(), 12);
        assert!(r.mapping.values().all(|v| *v == MaskletId(1)));
    }

    #[test]
    fn idempotent() {
        let input = [m(1, 0, 0..8), m(2, 1, 2..10), m(3, 0, 20..25), m(4, 2, 21..26), m(5, 1, 40..41)];
        let once = merge_cross_video(&input, 0.5);
        let twice = merge_cross_video(&once.merged, 0.5);
        assert_eq!(once.merged, twice.merged);
    }
}
