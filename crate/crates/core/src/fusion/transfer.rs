use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector3;

use super::masklet::{VoxelMasklet, VoxelPlacer};
use super::FusionError;
use crate::mask::PointMask;
use crate::types::MaskletId;

/// Assigns world-frame LiDAR points of `frame` to the masklet owning the
/// nearest voxel center within `radius` (ties: lower masklet id). Body-frame
/// voxels are placed with the object's pose at `frame`; objects without a
/// pose there contribute nothing.
pub fn transfer_to_points(
    masklets: &[VoxelMasklet],
    points: &[Vector3<f64>],
    placer: &VoxelPlacer<'_>,
    frame: usize,
    radius: f64,
) -> Result<BTreeMap<MaskletId, PointMask>, FusionError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(FusionError::InvalidParameter { name: "transfer_radius", value: radius, bound: "> 0" });
    }
    let cell = |p: &Vector3<f64>| {
        (
            (p.x / radius).floor() as i64,
            (p.y / radius).floor() as i64,
            (p.z / radius).floor() as i64,
        )
    };
    let mut index: HashMap<(i64, i64, i64), Vec<(Vector3<f64>, MaskletId)>> = HashMap::new();
    for m in masklets {
        for v in m.voxels.keys() {
            if let Some(c) = placer.world_center(v, frame) {
                index.entry(cell(&c)).or_default().push((c, m.id));
            }
        }
    }
    let r2 = radius * radius;
    let mut out: BTreeMap<MaskletId, Vec<u32>> = masklets.iter().map(|m| (m.id, Vec::new())).collect();
    for (i, p) in points.iter().enumerate() {
        let (cx, cy, cz) = cell(p);
        let mut best: Option<(f64, MaskletId)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = index.get(&(cx + dx, cy + dy, cz + dz)) else { continue };
                    for (c, id) in list {
                        let d = (p - c).norm_squared();
                        if d <= r2 && best.is_none_or(|(bd, bid)| d < bd || (d == bd && *id < bid)) {
                            best = Some((d, *id));
                        }
                    }
                }
            }
        }
        if let Some((_, id)) = best {
            out.get_mut(&id).expect("indexed masklet").push(i as u32);
        }
    }
    Ok(out.into_iter().map(|(k, v)| (k, PointMask::new(v))).collect())
}
