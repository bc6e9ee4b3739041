use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Prompt, ProtocolScene};
use crate::mask::{Mask2D, PointMask};
use crate::types::ObjectId;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("{0}")]
    Failed(String),
}

/// Per-frame masks for one object in both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image: Vec<Mask2D>,
    pub lidar: Vec<PointMask>,
}

impl Prediction {
    pub fn empty(scene: &ProtocolScene) -> Self {
        Self {
            image: vec![Mask2D::empty(scene.width, scene.height); scene.frame_count()],
            lidar: vec![PointMask::default(); scene.frame_count()],
        }
    }
}

/// Stand-in for a promptable segmenter: given the prompts so far, returns
/// masks for every frame. Must be deterministic.
pub trait SegmenterOracle {
    fn segment(&self, scene: &ProtocolScene, object: ObjectId, prompts: &[Prompt]) -> Result<Prediction, OracleError>;
}

/// Always returns ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectOracle;

impl SegmenterOracle for PerfectOracle {
    fn segment(&self, scene: &ProtocolScene, object: ObjectId, _prompts: &[Prompt]) -> Result<Prediction, OracleError> {
        let t = scene.objects.get(&object).ok_or(OracleError::UnknownObject(object))?;
        Ok(Prediction { image: t.image.clone(), lidar: t.lidar.clone() })
    }
}

/// Never segments anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyOracle;

impl SegmenterOracle for EmptyOracle {
    fn segment(&self, scene: &ProtocolScene, object: ObjectId, _prompts: &[Prompt]) -> Result<Prediction, OracleError> {
        if !scene.objects.contains_key(&object) {
            return Err(OracleError::UnknownObject(object));
        }
        Ok(Prediction::empty(scene))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    Erode,
    Dilate,
    Drop,
    Subsample,
}

/// Ground truth with seeded per-frame corruption. Any prompt on a frame pins
/// that frame to exact ground truth.
///
/// On LiDAR, `Erode` and `Subsample` keep each point with probability 1/2
/// and `Dilate` adds scan points within `lidar_radius` of the object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyGtOracle {
    pub seed: u64,
    pub rate: f64,
    /// Erosion/dilation steps in pixels.
    pub magnitude: u32,
    pub corruptions: Vec<Corruption>,
    pub lidar_radius: f64,
}

impl NoisyGtOracle {
    pub fn new(seed: u64, rate: f64, magnitude: u32) -> Self {
        Self {
            seed,
            rate: rate.clamp(0.0, 1.0),
            magnitude,
            corruptions: vec![Corruption::Erode, Corruption::Dilate, Corruption::Drop, Corruption::Subsample],
            lidar_radius: 0.3,
        }
    }

    pub fn with_corruptions(mut self, c: &[Corruption]) -> Self {
        self.corruptions = c.to_vec();
        self
    }

    fn frame_rng(&self, object: ObjectId, frame: usize) -> ChaCha8Rng {
        let mut x = self.seed ^ (u64::from(object.0) << 32) ^ frame as u64;
        // splitmix64 finalizer
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ChaCha8Rng::seed_from_u64(x ^ (x >> 31))
    }

    /// The corruption applied to an unprompted frame, if any.
    pub fn corruption_at(&self, object: ObjectId, frame: usize) -> Option<Corruption> {
        if self.corruptions.is_empty() {
            return None;
        }
        let mut rng = self.frame_rng(object, frame);
        let hit = rng.random::<f64>() < self.rate;
        let pick = rng.random_range(0..self.corruptions.len());
        hit.then(|| self.corruptions[pick])
    }
}

fn morph(m: &Mask2D, steps: u32, grow: bool) -> Mask2D {
    let mut cur = m.clone();
    for _ in 0..steps {
        let prev = cur.clone();
        let (w, h) = prev.shape();
        cur = Mask2D::from_fn(w, h, |u, v| {
            let n = [
                prev.get(u, v),
                u > 0 && prev.get(u - 1, v),
                prev.get(u + 1, v),
                v > 0 && prev.get(u, v - 1),
                prev.get(u, v + 1),
            ];
            if grow {
                n.iter().any(|b| *b)
            } else {
                n.iter().all(|b| *b) && u > 0 && v > 0 && u + 1 < w && v + 1 < h
            }
        });
    }
    cur
}

impl SegmenterOracle for NoisyGtOracle {
    fn segment(&self, scene: &ProtocolScene, object: ObjectId, prompts: &[Prompt]) -> Result<Prediction, OracleError> {
        let truth = scene.objects.get(&object).ok_or(OracleError::UnknownObject(object))?;
        let pinned: BTreeSet<usize> = prompts.iter().filter(|p| p.object == object).map(|p| p.frame).collect();
        let mut out = Prediction { image: truth.image.clone(), lidar: truth.lidar.clone() };
        for f in 0..scene.frame_count() {
            if pinned.contains(&f) {
                continue;
            }
            let Some(c) = self.corruption_at(object, f) else { continue };
            let mut rng = self.frame_rng(object, f);
            let _ = rng.random::<u64>();
            let (img, pts) = (&truth.image[f], &truth.lidar[f]);
            let half = |rng: &mut ChaCha8Rng| PointMask::new(pts.indices().iter().copied().filter(|_| rng.random_bool(0.5)).collect());
            match c {
                Corruption::Drop => {
                    out.image[f] = Mask2D::empty(img.width(), img.height());
                    out.lidar[f] = PointMask::default();
                }
                Corruption::Erode => {
                    out.image[f] = morph(img, self.magnitude, false);
                    out.lidar[f] = half(&mut rng);
                }
                Corruption::Subsample => {
                    let (w, h) = img.shape();
                    out.image[f] = Mask2D::from_fn(w, h, |u, v| img.get(u, v) && rng.random_bool(0.5));
                    out.lidar[f] = half(&mut rng);
                }
                Corruption::Dilate => {
                    out.image[f] = morph(img, self.magnitude, true);
                    let scan = &scene.scans[f];
                    let r2 = self.lidar_radius * self.lidar_radius;
                    let grown: Vec<u32> = (0..scan.len() as u32)
                        .filter(|i| {
                            pts.contains(*i) || pts.indices().iter().any(|j| (scan[*i as usize] - scan[*j as usize]).norm_squared() <= r2)
                        })
                        .collect();
                    out.lidar[f] = PointMask::new(grown);
                }
            }
        }
        Ok(out)
    }
}
