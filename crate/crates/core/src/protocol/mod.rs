//! Simulation of the interactive prompting protocols: corrective click
//! placement, offline and online prompting loops, and single-prompt
//! semi-supervised propagation, all driven by a pluggable oracle.

mod click;
mod oracle;
mod run;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{Mask2D, MaskError, PointMask};
use crate::metrics::{EvalMask, MetricsError};
use crate::types::{Modality, ObjectId};

pub use click::{
    connected_components, point_components, sample_click, sample_point_click, squared_distance_transform, PixelClick, PointClick,
};
pub use oracle::{Corruption, EmptyOracle, NoisyGtOracle, OracleError, PerfectOracle, Prediction, SegmenterOracle};
pub use run::{replay, run_offline, run_online, run_semisupervised, RoundLog, SemiPrompt};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("ground truth is empty; nothing to click")]
    EmptyGroundTruth,
    #[error("point index {index} out of range for a scan of {points} points")]
    PointIndex { index: u32, points: usize },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("frame budget must be at least 1")]
    InvalidBudget,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("oracle failed for object {object} in round {round}: {source}")]
    Oracle { object: ObjectId, round: usize, source: OracleError },
}

/// Ground truth for one object: one image mask and one point mask per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub image: Vec<Mask2D>,
    pub lidar: Vec<PointMask>,
}

impl ObjectTruth {
    pub fn present(&self, frame: usize, modality: Modality) -> bool {
        match modality {
            Modality::Image => !self.image[frame].is_empty(),
            Modality::Lidar => !self.lidar[frame].is_empty(),
        }
    }

    pub fn first_frame(&self) -> Option<usize> {
        (0..self.image.len()).find(|f| self.present(*f, Modality::Image) || self.present(*f, Modality::Lidar))
    }
}

/// What protocols see of a sequence: one camera view plus LiDAR scans.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolScene {
    pub width: u32,
    pub height: u32,
    pub scans: Vec<Vec<Vector3<f64>>>,
    pub objects: BTreeMap<ObjectId, ObjectTruth>,
}

impl ProtocolScene {
    pub fn frame_count(&self) -> usize {
        self.scans.len()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let n = self.frame_count();
        for (id, t) in &self.objects {
            if t.image.len() != n || t.lidar.len() != n {
                return Err(ProtocolError::InvalidScene(format!("object {id}: expected {n} frames")));
            }
            if let Some(m) = t.image.iter().find(|m| m.shape() != (self.width, self.height)) {
                return Err(ProtocolError::InvalidScene(format!("object {id}: mask is {:?}", m.shape())));
            }
            for (f, pm) in t.lidar.iter().enumerate() {
                if pm.indices().last().is_some_and(|i| *i as usize >= self.scans[f].len()) {
                    return Err(ProtocolError::InvalidScene(format!("object {id}: point index out of range in frame {f}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    PositiveClick,
    NegativeClick,
    Box,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PromptPayload {
    Pixel { u: u32, v: u32 },
    Point { index: u32 },
    /// Inclusive pixel corners.
    PixelBox { min: [u32; 2], max: [u32; 2] },
    PointBox { min: [f64; 3], max: [f64; 3] },
    Mask { mask: EvalMask },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub object: ObjectId,
    pub modality: Modality,
    pub kind: PromptKind,
    pub frame: usize,
    pub payload: PromptPayload,
}

impl Prompt {
    /// Frame and coordinate bounds plus kind/payload/modality consistency.
    pub fn validate(&self, scene: &ProtocolScene) -> Result<(), ProtocolError> {
        let bad = |m: &str| Err(ProtocolError::InvalidPrompt(m.to_string()));
        if self.frame >= scene.frame_count() {
            return bad("frame out of range");
        }
        let click = matches!(self.kind, PromptKind::PositiveClick | PromptKind::NegativeClick);
        match (&self.payload, self.modality) {
            (PromptPayload::Pixel { u, v }, Modality::Image) if click => {
                if *u >= scene.width || *v >= scene.height {
                    return bad("pixel outside image");
                }
            }
            (PromptPayload::Point { index }, Modality::Lidar) if click => {
                if *index as usize >= scene.scans[self.frame].len() {
                    return bad("point index outside scan");
                }
            }
            (PromptPayload::PixelBox { min, max }, Modality::Image) if self.kind == PromptKind::Box => {
                if min[0] > max[0] || min[1] > max[1] || max[0] >= scene.width || max[1] >= scene.height {
                    return bad("pixel box out of bounds or inverted");
                }
            }
            (PromptPayload::PointBox { min, max }, Modality::Lidar) if self.kind == PromptKind::Box => {
                if (0..3).any(|a| !(min[a] <= max[a])) {
                    return bad("point box inverted");
                }
            }
            (PromptPayload::Mask { mask }, m) if self.kind == PromptKind::Mask && mask.modality() == m => {
                if let EvalMask::Image(img) = mask {
                    if img.shape() != (scene.width, scene.height) {
                        return bad("mask shape differs from image");
                    }
                }
            }
            _ => return bad("kind, payload and modality disagree"),
        }
        Ok(())
    }
}

/// Protocol knobs; the defaults follow the evaluation setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolParams {
    pub clicks_per_prompt: usize,
    /// Maximum number of prompted frames per object.
    pub frame_budget: usize,
    /// Online mode prompts frames whose IoU falls below this.
    pub iou_threshold: f64,
    pub boundary_fraction: f64,
    /// Neighborhood radius for LiDAR error regions, meters.
    pub lidar_click_radius: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            clicks_per_prompt: 3,
            frame_budget: 5,
            iou_threshold: 0.75,
            boundary_fraction: crate::metrics::BOUNDARY_FRACTION,
            lidar_click_radius: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub protocol: String,
    pub params: ProtocolParams,
    pub prompts: Vec<Prompt>,
    pub rounds: Vec<RoundLog>,
    pub prompted_frames: BTreeMap<ObjectId, Vec<usize>>,
    pub report: crate::metrics::MetricsReport,
    #[serde(skip)]
    pub records: Vec<crate::metrics::EvalRecord>,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Two objects over `frames` frames on a 24x16 image with a 1-D scan.
    /// Object 2 is absent from LiDAR and enters the image at frame 1.
    pub(crate) fn toy_scene(frames: usize) -> ProtocolScene {
        let scans: Vec<Vec<Vector3<f64>>> = (0..frames).map(|_| (0..40).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect()).collect();
        let obj1 = ObjectTruth {
            image: (0..frames).map(|f| Mask2D::from_fn(24, 16, |u, v| (2 + f as u32 % 3..10).contains(&u) && (3..12).contains(&v))).collect(),
            lidar: (0..frames).map(|f| PointMask::new((f as u32 % 4..12).collect())).collect(),
        };
        let obj2 = ObjectTruth {
            image: (0..frames).map(|f| Mask2D::from_fn(24, 16, |u, v| f > 0 && (14..22).contains(&u) && (2..9).contains(&v))).collect(),
            lidar: vec![PointMask::default(); frames],
        };
        ProtocolScene { width: 24, height: 16, scans, objects: BTreeMap::from([(ObjectId(1), obj1), (ObjectId(2), obj2)]) }
    }

    #[test]
    fn toy_scene_is_valid() {
        let s = toy_scene(5);
        s.validate().unwrap();
        assert_eq!(s.objects[&ObjectId(2)].first_frame(), Some(1));
    }

    #[test]
    fn prompt_validation() {
        let s = toy_scene(3);
        let p = |modality, kind, frame, payload| Prompt { object: ObjectId(1), modality, kind, frame, payload };
        assert!(p(Modality::Image, PromptKind::PositiveClick, 0, PromptPayload::Pixel { u: 3, v: 3 }).validate(&s).is_ok());
        assert!(p(Modality::Image, PromptKind::PositiveClick, 0, PromptPayload::Pixel { u: 24, v: 3 }).validate(&s).is_err());
        assert!(p(Modality::Image, PromptKind::PositiveClick, 3, PromptPayload::Pixel { u: 1, v: 1 }).validate(&s).is_err());
        assert!(p(Modality::Lidar, PromptKind::PositiveClick, 0, PromptPayload::Pixel { u: 1, v: 1 }).validate(&s).is_err());
        assert!(p(Modality::Lidar, PromptKind::Box, 0, PromptPayload::PointBox { min: [0.0; 3], max: [1.0; 3] }).validate(&s).is_ok());
        assert!(p(Modality::Image, PromptKind::Box, 0, PromptPayload::PixelBox { min: [5, 5], max: [4, 9] }).validate(&s).is_err());
        let json = serde_json::to_string(&p(Modality::Lidar, PromptKind::NegativeClick, 1, PromptPayload::Point { index: 7 })).unwrap();
        let back: Prompt = serde_json::from_str(&json).unwrap();
        assert_eq!(back.payload, PromptPayload::Point { index: 7 });
    }
}
