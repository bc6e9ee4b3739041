use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::dbscan::dbscan_bev;
use super::masklet::{VoxelMasklet, VoxelPlacer, VoxelRef};
use super::{FusionError, FusionParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ClusterStatus {
    Selected { cluster: u32, clusters: u32 },
    /// Every candidate voxel was noise (or there were none).
    AllNoise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MainCluster {
    pub masklet: VoxelMasklet,
    pub status: ClusterStatus,
}

/// Keeps the cluster with the highest mean vote rate (ties: more voxels,
/// then lower cluster id); everything else, noise included, is dropped.
pub fn select_main_cluster(vm: &VoxelMasklet, voxels: &[VoxelRef], labels: &[Option<u32>]) -> Result<MainCluster, FusionError> {
    if voxels.len() != labels.len() {
        return Err(FusionError::LabelMismatch { voxels: voxels.len(), labels: labels.len() });
    }
    let mut stats: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (v, l) in voxels.iter().zip(labels) {
        let Some(l) = l else { continue };
        let rate = vm.voxels.get(v).ok_or(FusionError::UnknownVoxel)?.rate();
        let e = stats.entry(*l).or_insert((0.0, 0));
        e.0 += rate;
        e.1 += 1;
    }
    let best = stats
        .iter()
        .map(|(id, (sum, n))| (*id, sum / *n as f64, *n))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)).then(b.0.cmp(&a.0)));
    let Some((cluster, _, _)) = best else {
        return Ok(MainCluster {
            masklet: vm.retain(&BTreeSet::new()),
            status: ClusterStatus::AllNoise,
        });
    };
    let keep: BTreeSet<VoxelRef> = voxels
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Some(cluster))
        .map(|(v, _)| *v)
        .collect();
    Ok(MainCluster {
        masklet: vm.retain(&keep),
        status: ClusterStatus::Selected {
            cluster,
            clusters: stats.len() as u32,
        },
    })
}

/// BEV positions of `voxels`, placing body-frame voxels at the masklet's
/// anchor frame.
pub fn bev_positions(vm: &VoxelMasklet, voxels: &[VoxelRef], placer: &VoxelPlacer<'_>) -> Result<Vec<[f64; 2]>, FusionError> {
    let frame = vm.anchor_frame.unwrap_or(0);
    voxels
        .iter()
        .map(|v| {
            placer
                .anchored_center(v, frame)
                .map(|c| [c.x, c.y])
                .ok_or(FusionError::UnplaceableVoxel(*v))
        })
        .collect()
}

/// Candidate selection, BEV clustering and main-cluster selection.
pub fn filter_masklet(vm: &VoxelMasklet, params: &FusionParams, placer: &VoxelPlacer<'_>) -> Result<MainCluster, FusionError> {
    let candidates = vm.candidates(params.min_vote_rate);
    let bev = bev_positions(vm, &candidates, placer)?;
    let labels = dbscan_bev(&bev, params.eps, params.min_pts)?;
    select_main_cluster(vm, &candidates, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::VoteRecord;
    use crate::recon::{GridFrame, VoxelKey};
    use crate::types::MaskletId;

    fn vm(rates: &[(i32, u32, u32)]) -> (VoxelMasklet, Vec<VoxelRef>) {
        let refs: Vec<_> = rates.iter().map(|(x, _, _)| VoxelRef { grid: GridFrame::World, key: VoxelKey(*x, 0, 0) }).collect();
        let voxels = refs
            .iter()
            .zip(rates)
            .map(|(r, (_, v, o))| (*r, VoteRecord { votes: *v, observations: *o }))
            .collect();
        (VoxelMasklet { id: MaskletId(1), sources: vec![], anchor_frame: Some(0), voxels }, refs)
    }

    #[test]
    fn single_cluster_passthrough() {
        let (m, refs) = vm(&[(0, 1, 2), (1, 2, 2), (2, 1, 1)]);
        let out = select_main_cluster(&m, &refs, &[Some(0); 3]).unwrap();
        assert_eq!(out.masklet, m);
        assert_eq!(out.status, ClusterStatus::Selected { cluster: 0, clusters: 1 });
    }

    #[test]
    fn higher_mean_rate_wins() {
        let (m, refs) = vm(&[(0, 8, 10), (1, 8, 10), (5, 3, 10), (6, 3, 10), (7, 3, 10)]);
        let out = select_main_cluster(&m, &refs, &[Some(0), Some(0), Some(1), Some(1), Some(1)]).unwrap();
        assert_eq!(out.masklet.voxels.len(), 2);
        assert_eq!(out.status, ClusterStatus::Selected { cluster: 0, clusters: 2 });
    }

    #[test]
    fn three_clusters_with_ties() {
        // cluster 0: rates {0.5, 0.7} → 0.6 ; cluster 1: {0.6} → 0.6 ; cluster 2: {0.2, 0.4} → 0.3
        let (m, refs) = vm(&[(0, 5, 10), (1, 7, 10), (4, 6, 10), (8, 2, 10), (9, 4, 10)]);
        let labels = [Some(0), Some(0), Some(1), Some(2), Some(2)];
        let out = select_main_cluster(&m, &refs, &labels).unwrap();
        assert_eq!(out.status, ClusterStatus::Selected { cluster: 0, clusters: 3 }, "equal mean, larger cluster");
        // same mean and size → lower id
        let (m, refs) = vm(&[(0, 6, 10), (4, 6, 10)]);
        let out = select_main_cluster(&m, &refs, &[Some(3), Some(1)]).unwrap();
        assert_eq!(out.status, ClusterStatus::Selected { cluster: 1, clusters: 2 });
    }

    #[test]
    fn all_noise_flagged() {
        let (m, refs) = vm(&[(0, 1, 1), (9, 1, 1)]);
        let out = select_main_cluster(&m, &refs, &[None, None]).unwrap();
        assert_eq!(out.status, ClusterStatus::AllNoise);
        assert!(out.masklet.voxels.is_empty());
        assert!(select_main_cluster(&m, &refs, &[None]).is_err());
    }
}
