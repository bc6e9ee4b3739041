use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ReconError;
use crate::geometry::Pose;
use crate::types::ObjectId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub frame: usize,
    pub pose: Pose,
}

/// Annotated 3D box track. Each pose maps the object's body frame (box
/// center, box axes) into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectBox {
    pub id: ObjectId,
    pub half_extents: Vector3<f64>,
    pub poses: BTreeMap<usize, Pose>,
}

impl ObjectBox {
    pub fn new(id: ObjectId, half_extents: Vector3<f64>, poses: BTreeMap<usize, Pose>) -> Result<Self, ReconError> {
        if !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
            return Err(ReconError::InvalidBox(id));
        }
        Ok(Self { id, half_extents, poses })
    }

    pub fn pose_at(&self, frame: usize) -> Result<&Pose, ReconError> {
        self.poses.get(&frame).ok_or(ReconError::MissingBoxPose { object: self.id, frame })
    }

    pub fn exists_at(&self, frame: usize) -> bool {
        self.poses.contains_key(&frame)
    }

    pub fn contains_body(&self, p: &Vector3<f64>) -> bool {
        p.iter().zip(self.half_extents.iter()).all(|(c, h)| c.abs() <= *h)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndexedPoints {
    /// Index of each point in the source scan.
    pub indices: Vec<usize>,
    pub points: Vec<Vector3<f64>>,
}

impl IndexedPoints {
    fn push(&mut self, i: usize, p: Vector3<f64>) {
        self.indices.push(i);
        self.points.push(p);
    }
}

/// Scan points split into world-frame background and per-object body-frame
/// foreground.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub background: IndexedPoints,
    pub foreground: BTreeMap<ObjectId, IndexedPoints>,
}

/// Assigns each ego-frame point to the nearest-center box containing it
/// (ties: lowest object id), or to the background.
pub fn split_foreground(
    scan: &[Vector3<f64>],
    ego_pose: &Pose,
    boxes: &[ObjectBox],
    frame: usize,
) -> Result<Partition, ReconError> {
    let mut posed: Vec<(&ObjectBox, Pose)> = boxes
        .iter()
        .map(|b| Ok((b, b.pose_at(frame)?.inverse())))
        .collect::<Result<_, ReconError>>()?;
    posed.sort_by_key(|(b, _)| b.id);

    let mut out = Partition::default();
    for (i, p) in scan.iter().enumerate() {
        let world = ego_pose.apply(p);
        let mut best: Option<(f64, ObjectId, Vector3<f64>)> = None;
        for (b, world_to_body) in &posed {
            let body = world_to_body.apply(&world);
            if !b.contains_body(&body) {
                continue;
            }
            let d = body.norm_squared();
            if best.as_ref().is_none_or(|(bd, _, _)| d < *bd) {
                best = Some((d, b.id, body));
            }
        }
        match best {
            Some((_, id, body)) => out.foreground.entry(id).or_default().push(i, body),
            None => out.background.push(i, world),
        }
    }
    Ok(out)
}
