use std::collections::HashMap;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ReconError;
use crate::types::ObjectId;

/// Integer voxel coordinates: `floor(position / voxel_size)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey(pub i32, pub i32, pub i32);

impl VoxelKey {
    pub fn containing(p: &Vector3<f64>, voxel_size: f64) -> Result<Self, ReconError> {
        let f = |c: f64| -> Result<i32, ReconError> {
            let k = (c / voxel_size).floor();
            if !k.is_finite() || k < i32::MIN as f64 || k > i32::MAX as f64 {
                return Err(ReconError::NonFinitePoint([p.x, p.y, p.z]));
            }
            Ok(k as i32)
        };
        Ok(VoxelKey(f(p.x)?, f(p.y)?, f(p.z)?))
    }

    pub fn center(&self, voxel_size: f64) -> Vector3<f64> {
        Vector3::new(
            (self.0 as f64 + 0.5) * voxel_size,
            (self.1 as f64 + 0.5) * voxel_size,
            (self.2 as f64 + 0.5) * voxel_size,
        )
    }

    pub fn axis(&self, a: usize) -> i32 {
        match a {
            0 => self.0,
            1 => self.1,
            _ => self.2,
        }
    }

    pub(crate) fn set_axis(&mut self, a: usize, v: i32) {
        match a {
            0 => self.0 = v,
            1 => self.1 = v,
            _ => self.2 = v,
        }
    }
}

impl fmt::Display for VoxelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0, self.1, self.2)
    }
}

/// Coordinate frame a grid is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "frame", content = "object", rename_all = "snake_case")]
pub enum GridFrame {
    World,
    Body(ObjectId),
}

impl fmt::Display for GridFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridFrame::World => f.write_str("world"),
            GridFrame::Body(id) => write!(f, "body:{id}"),
        }
    }
}

/// Hash-addressed occupancy volume. Each present key carries the number of
/// points that fell into it.
#[derive(Debug, Clone)]
pub struct SparseVoxelGrid {
    voxel_size: f64,
    frame: GridFrame,
    cells: HashMap<VoxelKey, u32>,
    bounds: Option<(VoxelKey, VoxelKey)>,
}

impl PartialEq for SparseVoxelGrid {
    fn eq(&self, other: &Self) -> bool {
        self.voxel_size == other.voxel_size && self.frame == other.frame && self.cells == other.cells
    }
}

impl SparseVoxelGrid {
    pub fn new(voxel_size: f64, frame: GridFrame) -> Result<Self, ReconError> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(ReconError::InvalidVoxelSize(voxel_size));
        }
        Ok(Self {
            voxel_size,
            frame,
            cells: HashMap::new(),
            bounds: None,
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn frame(&self) -> GridFrame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn weight(&self, key: &VoxelKey) -> Option<u32> {
        self.cells.get(key).copied()
    }

    pub fn is_occupied(&self, key: &VoxelKey) -> bool {
        self.cells.contains_key(key)
    }

    /// Inclusive key bounds of occupied voxels.
    pub fn bounds(&self) -> Option<(VoxelKey, VoxelKey)> {
        self.bounds
    }

    /// Adds `weight` to `key` (used when loading dumps).
    pub fn add_weight(&mut self, key: VoxelKey, weight: u32) {
        if weight == 0 {
            return;
        }
        *self.cells.entry(key).or_insert(0) += weight;
        self.bounds = Some(match self.bounds {
            None => (key, key),
            Some((lo, hi)) => (
                VoxelKey(lo.0.min(key.0), lo.1.min(key.1), lo.2.min(key.2)),
                VoxelKey(hi.0.max(key.0), hi.1.max(key.1), hi.2.max(key.2)),
            ),
        });
    }

    /// Accumulates one hit per point. All points are validated before any
    /// voxel is touched.
    pub fn integrate(&mut self, points: &[Vector3<f64>]) -> Result<(), ReconError> {
        let keys = points
            .iter()
            .map(|p| {
                if p.iter().all(|c| c.is_finite()) {
                    VoxelKey::containing(p, self.voxel_size)
                } else {
                    Err(ReconError::NonFinitePoint([p.x, p.y, p.z]))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        for k in keys {
            self.add_weight(k, 1);
        }
        Ok(())
    }

    /// `(key, weight)` pairs in ascending key order.
    pub fn sorted(&self) -> Vec<(VoxelKey, u32)> {
        let mut v: Vec<_> = self.cells.iter().map(|(k, w)| (*k, *w)).collect();
        v.sort_unstable();
        v
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.cells.keys()
    }
}

/// Free-function form of [`SparseVoxelGrid::integrate`].
pub fn integrate_scan(grid: &mut SparseVoxelGrid, points: &[Vector3<f64>]) -> Result<(), ReconError> {
    grid.integrate(points)
}
