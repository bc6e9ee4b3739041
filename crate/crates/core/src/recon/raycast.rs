//! Per-pixel ray casting against a background grid and frame-posed
//! foreground grids, using Amanatides–Woo integer voxel stepping.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{GridFrame, SparseVoxelGrid, VoxelKey};
use super::split::ObjectBox;
use super::ReconError;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::types::CameraId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelHit {
    pub grid: GridFrame,
    pub key: VoxelKey,
    /// Distance from the camera center to where the ray enters the voxel.
    pub distance: f64,
}

/// Ray-cast results for one (camera, frame), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSlice {
    pub width: u32,
    pub height: u32,
    pub hits: Vec<Option<PixelHit>>,
}

impl TableSlice {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            hits: vec![None; width as usize * height as usize],
        }
    }

    pub fn get(&self, u: u32, v: u32) -> Option<&PixelHit> {
        if u >= self.width || v >= self.height {
            return None;
        }
        self.hits[v as usize * self.width as usize + u as usize].as_ref()
    }

    /// `(u, v, hit)` in row-major pixel order.
    pub fn iter_hits(&self) -> impl Iterator<Item = (u32, u32, &PixelHit)> {
        let w = self.width;
        self.hits
            .iter()
            .enumerate()
            .filter_map(move |(i, h)| h.as_ref().map(|h| (i as u32 % w, i as u32 / w, h)))
    }

    pub fn hit_count(&self) -> usize {
        self.hits.iter().filter(|h| h.is_some()).count()
    }
}

/// Pixel → first occupied voxel, for every ray-cast (camera, frame).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelVoxelTable {
    pub slices: BTreeMap<(CameraId, usize), TableSlice>,
}

impl PixelVoxelTable {
    pub fn insert(&mut self, camera: CameraId, frame: usize, slice: TableSlice) {
        self.slices.insert((camera, frame), slice);
    }

    pub fn get(&self, camera: CameraId, frame: usize) -> Option<&TableSlice> {
        self.slices.get(&(camera, frame))
    }
}

/// Background grid plus the foreground grids and their box tracks.
#[derive(Debug, Clone, Copy)]
pub struct RaycastScene<'a> {
    pub background: Option<&'a SparseVoxelGrid>,
    pub foreground: &'a [(SparseVoxelGrid, ObjectBox)],
}

/// First occupied voxel along a unit-direction ray expressed in the grid's
/// own frame, with entry distance in `(0, limit]`.
pub fn first_hit(grid: &SparseVoxelGrid, origin: &Vector3<f64>, dir: &Vector3<f64>, limit: f64) -> Option<(VoxelKey, f64)> {
    let (lo_key, hi_key) = grid.bounds()?;
    let s = grid.voxel_size();
    let lo = [lo_key.0 as f64 * s, lo_key.1 as f64 * s, lo_key.2 as f64 * s];
    let hi = [(hi_key.0 + 1) as f64 * s, (hi_key.1 + 1) as f64 * s, (hi_key.2 + 1) as f64 * s];

    // clip against the occupied bounding box
    let (mut t0, mut t1) = (0.0f64, limit);
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
        } else {
            let ta = (lo[a] - origin[a]) / dir[a];
            let tb = (hi[a] - origin[a]) / dir[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    if t0 > t1 {
        return None;
    }

    let start = origin + dir * t0;
    let mut key = VoxelKey(0, 0, 0);
    let mut step = [0i32; 3];
    for a in 0..3 {
        let k = ((start[a] / s).floor() as i64).clamp(lo_key.axis(a) as i64, hi_key.axis(a) as i64) as i32;
        key.set_axis(a, k);
        step[a] = if dir[a] > 0.0 {
            1
        } else if dir[a] < 0.0 {
            -1
        } else {
            0
        };
    }
    let boundary = |key: &VoxelKey, a: usize| -> f64 {
        match step[a] {
            1 => ((key.axis(a) + 1) as f64 * s - origin[a]) / dir[a],
            -1 => (key.axis(a) as f64 * s - origin[a]) / dir[a],
            _ => f64::INFINITY,
        }
    };
    let mut t_next = [boundary(&key, 0), boundary(&key, 1), boundary(&key, 2)];
    let mut t_entry = t0;
    loop {
        if t_entry > 0.0 && grid.is_occupied(&key) {
            return Some((key, t_entry));
        }
        let a = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        t_entry = t_next[a];
        if t_entry > t1 {
            return None;
        }
        let k = key.axis(a) + step[a];
        if k < lo_key.axis(a) || k > hi_key.axis(a) {
            return None;
        }
        key.set_axis(a, k);
        t_next[a] = boundary(&key, a);
    }
}

struct PosedGrid<'a> {
    grid: &'a SparseVoxelGrid,
    world_to_grid: Pose,
}

/// Casts one ray per pixel from `cam_to_world` and records the nearest
/// occupied voxel across all grids within `max_range`. Equal distances go to
/// foreground grids (lowest object id first); objects without a box pose at
/// `frame` are skipped.
pub fn raycast_table(
    scene: &RaycastScene<'_>,
    cam_to_world: &Pose,
    intrinsics: &CameraIntrinsics,
    frame: usize,
    max_range: f64,
) -> Result<TableSlice, ReconError> {
    intrinsics.validate()?;
    let mut grids: Vec<(GridFrame, PosedGrid<'_>)> = Vec::new();
    let mut fg: Vec<_> = scene.foreground.iter().collect();
    fg.sort_by_key(|(_, b)| b.id);
    for (grid, bx) in fg {
        // an object without a box at this frame is absent from it
        if let Some(pose) = bx.poses.get(&frame) {
            grids.push((GridFrame::Body(bx.id), PosedGrid { grid, world_to_grid: pose.inverse() }));
        }
    }
    if let Some(bg) = scene.background {
        grids.push((GridFrame::World, PosedGrid { grid: bg, world_to_grid: Pose::identity() }));
    }

    let origin = *cam_to_world.translation();
    let (w, h) = (intrinsics.width, intrinsics.height);
    let hits: Vec<Option<PixelHit>> = (0..h)
        .into_par_iter()
        .flat_map_iter(|v| {
            let grids = &grids;
            (0..w).map(move |u| {
                let dir = cam_to_world.apply_vector(&intrinsics.ray_direction(u as f64, v as f64));
                let mut best: Option<PixelHit> = None;
                for (tag, pg) in grids {
                    let limit = best.map_or(max_range, |b| b.distance);
                    let o = pg.world_to_grid.apply(&origin);
                    let d = pg.world_to_grid.apply_vector(&dir);
                    if let Some((key, t)) = first_hit(pg.grid, &o, &d, limit) {
                        if best.is_none_or(|b| t < b.distance) {
                            best = Some(PixelHit { grid: *tag, key, distance: t });
                        }
                    }
                }
                best
            })
        })
        .collect();
    Ok(TableSlice { width: w, height: h, hits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ObjectId;
    use std::collections::BTreeMap;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(16.0, 16.0, 8.0, 8.0, 16, 16).unwrap()
    }

    fn grid_with(keys: &[VoxelKey], s: f64, frame: GridFrame) -> SparseVoxelGrid {
        let mut g = SparseVoxelGrid::new(s, frame).unwrap();
        for k in keys {
            g.add_weight(*k, 1);
        }
        g
    }

    #[test]
    fn axis_ray_hits_voxel_ahead() {
        // camera at origin looking down +z of the world
        let g = grid_with(&[VoxelKey(0, 0, 10)], 0.5, GridFrame::World);
        let scene = RaycastScene { background: Some(&g), foreground: &[] };
        let cam = Pose::from_translation(Vector3::new(0.25, 0.25, 0.0));
        let slice = raycast_table(&scene, &cam, &k(), 0, 100.0).unwrap();
        let hit = slice.get(8, 8).unwrap();
        assert_eq!(hit.key, VoxelKey(0, 0, 10));
        assert!((hit.distance - 5.0).abs() < 1e-12);
    }

    #[test]
    fn nothing_behind_camera() {
        let g = grid_with(&[VoxelKey(0, 0, -10)], 0.5, GridFrame::World);
        let scene = RaycastScene { background: Some(&g), foreground: &[] };
        let slice = raycast_table(&scene, &Pose::identity(), &k(), 0, 100.0).unwrap();
        assert_eq!(slice.hit_count(), 0);
    }

    #[test]
    fn range_limit() {
        let g = grid_with(&[VoxelKey(0, 0, 10)], 0.5, GridFrame::World);
        let scene = RaycastScene { background: Some(&g), foreground: &[] };
        let cam = Pose::from_translation(Vector3::new(0.25, 0.25, 0.0));
        assert_eq!(raycast_table(&scene, &cam, &k(), 0, 4.9).unwrap().hit_count(), 0);
    }

    #[test]
    fn foreground_occludes_background_and_keeps_body_keys() {
        let bg = grid_with(&[VoxelKey(0, 0, 20)], 0.5, GridFrame::World);
        let body = grid_with(&[VoxelKey(0, 0, 0)], 0.5, GridFrame::Body(ObjectId(3)));
        let bx = ObjectBox::new(
            ObjectId(3),
            Vector3::new(1.0, 1.0, 1.0),
            BTreeMap::from([(0, Pose::from_translation(Vector3::new(0.0, 0.0, 4.0))), (1, Pose::from_translation(Vector3::new(0.0, 0.0, 6.0)))]),
        )
        .unwrap();
        let fg = vec![(body, bx.clone())];
        let scene = RaycastScene { background: Some(&bg), foreground: &fg };
        let cam = Pose::from_translation(Vector3::new(0.25, 0.25, 0.0));
        for (frame, expect) in [(0, 4.0), (1, 6.0)] {
            let slice = raycast_table(&scene, &cam, &k(), frame, 100.0).unwrap();
            let hit = slice.get(8, 8).unwrap();
            assert_eq!(hit.grid, GridFrame::Body(ObjectId(3)));
            assert_eq!(hit.key, VoxelKey(0, 0, 0));
            assert!((hit.distance - expect).abs() < 1e-12);
            let world = bx.poses[&frame].apply(&hit.key.center(0.5));
            let along = cam.translation() + Vector3::z() * hit.distance;
            assert!((world - along).norm() <= 0.5 * 3f64.sqrt());
        }
        // no box at frame 2: the object is absent and the background shows
        let slice = raycast_table(&scene, &cam, &k(), 2, 100.0).unwrap();
        assert_eq!(slice.get(8, 8).unwrap().grid, GridFrame::World);
    }

    #[test]
    fn equal_distance_prefers_foreground() {
        let bg = grid_with(&[VoxelKey(0, 0, 8)], 0.5, GridFrame::World);
        let body = grid_with(&[VoxelKey(0, 0, 8)], 0.5, GridFrame::Body(ObjectId(1)));
        let bx = ObjectBox::new(ObjectId(1), Vector3::new(1.0, 1.0, 1.0), BTreeMap::from([(0, Pose::identity())])).unwrap();
        let fg = vec![(body, bx)];
        let scene = RaycastScene { background: Some(&bg), foreground: &fg };
        let cam = Pose::from_translation(Vector3::new(0.25, 0.25, 0.0));
        let slice = raycast_table(&scene, &cam, &k(), 0, 100.0).unwrap();
        assert_eq!(slice.get(8, 8).unwrap().grid, GridFrame::Body(ObjectId(1)));
    }

    #[test]
    fn first_hit_skips_voxel_containing_origin() {
        let g = grid_with(&[VoxelKey(0, 0, 0), VoxelKey(0, 0, 3)], 1.0, GridFrame::World);
        let hit = first_hit(&g, &Vector3::new(0.5, 0.5, 0.5), &Vector3::z(), 100.0).unwrap();
        assert_eq!(hit.0, VoxelKey(0, 0, 3));
        assert!((hit.1 - 2.5).abs() < 1e-12);
    }

    #[test]
    fn negative_direction_traversal() {
        let g = grid_with(&[VoxelKey(-3, 0, 0), VoxelKey(-6, 0, 0)], 1.0, GridFrame::World);
        let hit = first_hit(&g, &Vector3::new(2.5, 0.5, 0.5), &-Vector3::x(), 100.0).unwrap();
        assert_eq!(hit.0, VoxelKey(-3, 0, 0));
        assert!((hit.1 - 4.5).abs() < 1e-12);
    }
}
