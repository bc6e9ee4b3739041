//! Deterministic synthetic sequences with exact ground truth: a ground slab,
//! three static panels and one moving panel, seen by two forward cameras
//! and a LiDAR that samples every occupied voxel once per frame.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fusion::Masklet2D;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::io::{self, BoxRecord, CameraSpec, IoError, MaskletFileRef, SequenceManifest, MANIFEST_VERSION};
use crate::mask::{rle_encode, Mask2D, PointMask};
use crate::protocol::{ObjectTruth, ProtocolScene};
use crate::types::{CameraId, MaskletId, ObjectId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub voxel_size: f64,
    /// Ego forward motion per frame, meters.
    pub ego_step: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { seed: 7, frames: 20, width: 320, height: 200, focal: 260.0, voxel_size: 0.1, ego_step: 0.3 }
    }
}

/// Axis-aligned occupied region, in world (ground) or body (objects)
/// coordinates, snapped to the voxel lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Slab {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Slab {
    /// Entry distance of a ray starting outside the slab.
    fn entry(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
            } else {
                let ta = (self.min[a] - o[a]) / d[a];
                let tb = (self.max[a] - o[a]) / d[a];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }

    fn voxel_keys(&self, s: f64) -> Vec<[i32; 3]> {
        let lo: Vec<i32> = (0..3).map(|a| (self.min[a] / s).round() as i32).collect();
        let hi: Vec<i32> = (0..3).map(|a| (self.max[a] / s).round() as i32).collect();
        let mut out = Vec::new();
        for x in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for z in lo[2]..hi[2] {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Panel {
    id: ObjectId,
    half_extents: Vector3<f64>,
    occupied: Slab,
    poses: Vec<Pose>,
}

/// Ground truth kept alongside the generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub version: u32,
    /// Which object each 2D track follows.
    pub track_objects: BTreeMap<MaskletId, ObjectId>,
    /// Per frame, the scan indices sampled from each object.
    pub object_points: Vec<BTreeMap<ObjectId, PointMask>>,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub params: SynthParams,
    pub manifest: SequenceManifest,
    /// Ego-frame scans, already rounded to the on-disk `f32` precision.
    pub scans: Vec<Vec<Vector3<f64>>>,
    pub masklets: BTreeMap<CameraId, Vec<Masklet2D>>,
    pub truth: SynthTruth,
    ground: Slab,
    panels: Vec<Panel>,
}

pub fn track_id(object: ObjectId, camera: CameraId) -> MaskletId {
    MaskletId(object.0 * 10 + camera.0)
}

fn camera_rotation(yaw: f64) -> Matrix3<f64> {
    // camera x → −y, y → −z, z → +x of the LiDAR frame, then yaw about z
    let base = Matrix3::from_columns(&[Vector3::new(0.0, -1.0, 0.0), Vector3::new(0.0, 0.0, -1.0), Vector3::new(1.0, 0.0, 0.0)]);
    *Pose::from_yaw(yaw, Vector3::zeros()).rotation() * base
}

fn round_f32(p: Vector3<f64>) -> Vector3<f64> {
    p.map(|c| c as f32 as f64)
}

/// Builds the sequence: geometry, poses, LiDAR scans and exact masks.
pub fn generate(params: &SynthParams) -> SynthScene {
    let s = params.voxel_size;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let ground = Slab { min: Vector3::new(2.0, -8.0, -0.1), max: Vector3::new(30.0, 8.0, 0.0) };
    let panel_slab = Slab { min: Vector3::new(-0.1, -0.5, -0.6), max: Vector3::new(0.0, 0.5, 0.6) };
    let n = params.frames;
    let statics = [(1, 12.0, -2.5, 1.0, 0.1), (2, 15.0, 1.2, 1.0, -0.15), (3, 19.0, -0.6, 1.1, 0.0)];
    let mut panels: Vec<Panel> = statics
        .iter()
        .map(|&(id, x, y, z, yaw)| Panel {
            id: ObjectId(id),
            half_extents: Vector3::new(0.1, 0.5, 0.6),
            occupied: panel_slab,
            poses: vec![Pose::from_yaw(yaw, Vector3::new(x, y, z)); n],
        })
        .collect();
    panels.push(Panel {
        id: ObjectId(4),
        half_extents: Vector3::new(0.1, 0.5, 0.6),
        occupied: panel_slab,
        poses: (0..n).map(|f| Pose::from_yaw(0.25, Vector3::new(9.0 + 0.35 * f as f64, 2.6, 1.0))).collect(),
    });

    let ego: Vec<Pose> = (0..n).map(|f| Pose::from_translation(Vector3::new(params.ego_step * f as f64, 0.0, 1.8))).collect();
    let k = CameraIntrinsics::new(params.focal, params.focal, params.width as f64 / 2.0, params.height as f64 / 2.0, params.width, params.height)
        .expect("valid synthetic intrinsics");
    let cameras = vec![
        CameraSpec {
            id: CameraId(0),
            intrinsics: k,
            extrinsic: Pose::new(camera_rotation(0.0), Vector3::new(0.05, 0.2, -0.1)).expect("rotation"),
        },
        CameraSpec {
            id: CameraId(1),
            intrinsics: k,
            extrinsic: Pose::new(camera_rotation(-0.15), Vector3::new(0.05, -0.2, -0.1)).expect("rotation"),
        },
    ];

    let jitter = |rng: &mut ChaCha8Rng| Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)) * s;
    let center = |k: &[i32; 3]| Vector3::new((k[0] as f64 + 0.5) * s, (k[1] as f64 + 0.5) * s, (k[2] as f64 + 0.5) * s);
    let ground_keys = ground.voxel_keys(s);
    let panel_keys = panel_slab.voxel_keys(s);
    let mut scans = Vec::with_capacity(n);
    let mut object_points = Vec::with_capacity(n);
    for f in 0..n {
        let to_ego = ego[f].inverse();
        let mut scan = Vec::with_capacity(ground_keys.len() + panels.len() * panel_keys.len());
        for key in &ground_keys {
            let w = center(key) + jitter(&mut rng);
            scan.push(round_f32(to_ego.apply(&w)));
        }
        let mut labels = BTreeMap::new();
        for p in &panels {
            let start = scan.len() as u32;
            for key in &panel_keys {
                let body = center(key) + jitter(&mut rng);
                scan.push(round_f32(to_ego.apply(&p.poses[f].apply(&body))));
            }
            labels.insert(p.id, PointMask::new((start..scan.len() as u32).collect()));
        }
        scans.push(scan);
        object_points.push(labels);
    }

    let boxes = panels
        .iter()
        .flat_map(|p| {
            p.poses.iter().enumerate().map(|(f, pose)| BoxRecord {
                object: p.id,
                frame: f,
                half_extents: [p.half_extents.x, p.half_extents.y, p.half_extents.z],
                pose: *pose,
            })
        })
        .collect();
    let manifest = SequenceManifest {
        version: MANIFEST_VERSION,
        sequence_id: format!("synth-{}", params.seed),
        frame_count: n,
        ego_poses: ego,
        cameras: cameras.clone(),
        lidar_scans: (0..n).map(|f| format!("lidar/{f:03}.bin")).collect(),
        boxes,
        masklets: cameras.iter().map(|c| MaskletFileRef { camera: c.id, file: format!("masklets/cam{}.json", c.id) }).collect(),
    };

    let mut scene = SynthScene {
        params: params.clone(),
        manifest,
        scans,
        masklets: BTreeMap::new(),
        truth: SynthTruth { version: 1, track_objects: BTreeMap::new(), object_points },
        ground,
        panels,
    };
    for cam in &cameras {
        let mut tracks: BTreeMap<ObjectId, Masklet2D> = BTreeMap::new();
        for f in 0..n {
            for (obj, mask) in scene.render_masks(cam.id, f) {
                if mask.is_empty() {
                    continue;
                }
                let id = track_id(obj, cam.id);
                scene.truth.track_objects.insert(id, obj);
                tracks
                    .entry(obj)
                    .or_insert_with(|| Masklet2D { id, camera: cam.id, frames: BTreeMap::new() })
                    .frames
                    .insert(f, rle_encode(&mask));
            }
        }
        scene.masklets.insert(cam.id, tracks.into_values().collect());
    }
    scene
}

impl SynthScene {
    pub fn object_ids(&self) -> Vec<ObjectId> {
        self.panels.iter().map(|p| p.id).collect()
    }

    /// Exact per-object masks: a pixel belongs to the object whose occupied
    /// region its ray enters first (objects win exact ties with the ground).
    pub fn render_masks(&self, camera: CameraId, frame: usize) -> BTreeMap<ObjectId, Mask2D> {
        let cam = self.manifest.camera(camera).expect("known camera");
        let k = cam.intrinsics;
        let cam_to_world = self.manifest.ego_poses[frame].compose(&cam.extrinsic);
        let o = *cam_to_world.translation();
        let posed: Vec<(ObjectId, Pose)> = self.panels.iter().map(|p| (p.id, p.poses[frame].inverse())).collect();
        let mut masks: BTreeMap<ObjectId, Mask2D> = self.panels.iter().map(|p| (p.id, Mask2D::empty(k.width, k.height))).collect();
        for v in 0..k.height {
            for u in 0..k.width {
                let d = cam_to_world.apply_vector(&k.ray_direction(u as f64, v as f64));
                let mut best: Option<(f64, ObjectId)> = None;
                for (i, (id, to_body)) in posed.iter().enumerate() {
                    if let Some(t) = self.panels[i].occupied.entry(&to_body.apply(&o), &to_body.apply_vector(&d)) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, *id));
                        }
                    }
                }
                let ground_t = self.ground.entry(&o, &d);
                if let Some((t, id)) = best {
                    if ground_t.is_none_or(|g| t <= g) {
                        masks.get_mut(&id).expect("panel mask").set(u, v, true);
                    }
                }
            }
        }
        masks
    }

    /// Writes the manifest, scans, 2D masklets and `truth.json` under `dir`;
    /// returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, IoError> {
        for (f, scan) in self.scans.iter().enumerate() {
            io::write_scan(&dir.join(&self.manifest.lidar_scans[f]), scan)?;
        }
        for r in &self.manifest.masklets {
            let ms = self.masklets.get(&r.camera).map(Vec::as_slice).unwrap_or_default();
            io::write_file(&dir.join(&r.file), &io::encode_masklets2d(ms))?;
        }
        io::write_file(&dir.join("truth.json"), &io::to_pretty(&self.truth))?;
        let path = dir.join("manifest.json");
        io::write_file(&path, self.manifest.to_json().as_bytes())?;
        Ok(path)
    }

    /// The protocol view of this sequence through one camera.
    pub fn protocol_scene(&self, camera: CameraId) -> ProtocolScene {
        let k = self.manifest.camera(camera).expect("known camera").intrinsics;
        let n = self.manifest.frame_count;
        let mut objects: BTreeMap<ObjectId, ObjectTruth> = self
            .panels
            .iter()
            .map(|p| {
                (
                    p.id,
                    ObjectTruth {
                        image: vec![Mask2D::empty(k.width, k.height); n],
                        lidar: (0..n).map(|f| self.truth.object_points[f][&p.id].clone()).collect(),
                    },
                )
            })
            .collect();
        for m in self.masklets.get(&camera).into_iter().flatten() {
            let obj = self.truth.track_objects[&m.id];
            for (f, rle) in &m.frames {
                objects.get_mut(&obj).expect("panel").image[*f] = rle.decode().expect("generated mask");
            }
        }
        ProtocolScene { width: k.width, height: k.height, scans: self.scans.clone(), objects }
    }
}

pub fn read_truth(path: &Path) -> Result<SynthTruth, IoError> {
    serde_json::from_slice(&io::read_file(path)?).map_err(|e| IoError::Json { path: path.to_path_buf(), source: e })
}
