use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::recon::ObjectBox;
use crate::types::{CameraId, ObjectId};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub id: CameraId,
    pub intrinsics: CameraIntrinsics,
    /// Camera → LiDAR transform.
    pub extrinsic: Pose,
}

/// One object's box at one frame; `pose` maps body → world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub object: ObjectId,
    pub frame: usize,
    pub half_extents: [f64; 3],
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskletFileRef {
    pub camera: CameraId,
    pub file: String,
}

/// A validated sequence description. File references are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub version: u32,
    pub sequence_id: String,
    pub frame_count: usize,
    /// LiDAR (ego) → world, one per frame.
    pub ego_poses: Vec<Pose>,
    pub cameras: Vec<CameraSpec>,
    pub lidar_scans: Vec<String>,
    pub boxes: Vec<BoxRecord>,
    pub masklets: Vec<MaskletFileRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestIssue {
    /// JSON-path-like location, e.g. `$.cameras[1].intrinsics`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Every problem found in a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestErrors(pub Vec<ManifestIssue>);

impl fmt::Display for ManifestErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} manifest error(s)", self.0.len())?;
        for i in &self.0 {
            write!(f, "\n  {i}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ManifestErrors {}

#[derive(Deserialize)]
struct RawCamera {
    id: Option<CameraId>,
    intrinsics: Option<CameraIntrinsics>,
    extrinsic: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawBox {
    object: Option<ObjectId>,
    frame: Option<usize>,
    half_extents: Option<[f64; 3]>,
    pose: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawManifest {
    version: Option<u32>,
    sequence_id: Option<String>,
    frame_count: Option<usize>,
    ego_poses: Option<Vec<Vec<f64>>>,
    cameras: Option<Vec<RawCamera>>,
    lidar_scans: Option<Vec<String>>,
    #[serde(default)]
    boxes: Vec<RawBox>,
    #[serde(default)]
    masklets: Vec<MaskletFileRef>,
}

struct Issues(Vec<ManifestIssue>);

impl Issues {
    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.0.push(ManifestIssue { location: location.into(), message: message.into() });
    }

    fn require<T>(&mut self, v: Option<T>, location: &str) -> Option<T> {
        if v.is_none() {
            self.push(location, "missing field");
        }
        v
    }

    fn pose(&mut self, v: Option<Vec<f64>>, location: &str) -> Option<Pose> {
        let v = self.require(v, location)?;
        let Ok(arr) = <[f64; 16]>::try_from(v.as_slice()) else {
            self.push(location, format!("expected 16 numbers, got {}", v.len()));
            return None;
        };
        match Pose::from_row_major(&arr) {
            Ok(p) => Some(p),
            Err(e) => {
                self.push(location, e.to_string());
                None
            }
        }
    }
}

/// Parses and validates manifest JSON, reporting every problem at once.
/// Referenced files are not touched; see [`parse_manifest`].
pub fn parse_manifest_str(text: &str) -> Result<SequenceManifest, ManifestErrors> {
    let raw: RawManifest = serde_json::from_str(text).map_err(|e| {
        ManifestErrors(vec![ManifestIssue { location: format!("line {}, column {}", e.line(), e.column()), message: e.to_string() }])
    })?;
    let mut is = Issues(Vec::new());
    let version = is.require(raw.version, "$.version");
    if let Some(v) = version {
        if v != MANIFEST_VERSION {
            is.push("$.version", format!("unsupported version {v}, expected {MANIFEST_VERSION}"));
        }
    }
    let sequence_id = is.require(raw.sequence_id, "$.sequence_id");
    if sequence_id.as_deref() == Some("") {
        is.push("$.sequence_id", "must not be empty");
    }
    let frame_count = is.require(raw.frame_count, "$.frame_count");
    if frame_count == Some(0) {
        is.push("$.frame_count", "must be at least 1");
    }
    let ego_raw = is.require(raw.ego_poses, "$.ego_poses").unwrap_or_default();
    if let Some(n) = frame_count {
        if !ego_raw.is_empty() && ego_raw.len() != n {
            is.push("$.ego_poses", format!("{} poses for {} frames", ego_raw.len(), n));
        }
    }
    let ego_poses: Vec<Option<Pose>> = ego_raw
        .into_iter()
        .enumerate()
        .map(|(i, p)| is.pose(Some(p), &format!("$.ego_poses[{i}]")))
        .collect();
    let lidar_scans = is.require(raw.lidar_scans, "$.lidar_scans").unwrap_or_default();
    if let Some(n) = frame_count {
        if lidar_scans.len() != n {
            is.push("$.lidar_scans", format!("{} scan files for {} frames", lidar_scans.len(), n));
        }
    }
    let raw_cams = is.require(raw.cameras, "$.cameras").unwrap_or_default();
    let mut cameras = Vec::new();
    let mut cam_ids = BTreeSet::new();
    for (i, c) in raw_cams.into_iter().enumerate() {
        let loc = format!("$.cameras[{i}]");
        let id = is.require(c.id, &format!("{loc}.id"));
        if let Some(id) = id {
            if !cam_ids.insert(id) {
                is.push(format!("{loc}.id"), format!("duplicate camera id {id}"));
            }
        }
        let k = is.require(c.intrinsics, &format!("{loc}.intrinsics"));
        if let Some(k) = &k {
            if let Err(e) = k.validate() {
                is.push(format!("{loc}.intrinsics"), e.to_string());
            }
        }
        let ext = is.pose(c.extrinsic, &format!("{loc}.extrinsic"));
        if let (Some(id), Some(intrinsics), Some(extrinsic)) = (id, k, ext) {
            cameras.push(CameraSpec { id, intrinsics, extrinsic });
        }
    }
    let mut boxes = Vec::new();
    let mut seen_boxes = BTreeSet::new();
    let mut extents: BTreeMap<ObjectId, [f64; 3]> = BTreeMap::new();
    for (i, b) in raw.boxes.into_iter().enumerate() {
        let loc = format!("$.boxes[{i}]");
        let object = is.require(b.object, &format!("{loc}.object"));
        let frame = is.require(b.frame, &format!("{loc}.frame"));
        let he = is.require(b.half_extents, &format!("{loc}.half_extents"));
        let pose = is.pose(b.pose, &format!("{loc}.pose"));
        if let (Some(f), Some(n)) = (frame, frame_count) {
            if f >= n {
                is.push(format!("{loc}.frame"), format!("frame {f} out of range for {n} frames"));
            }
        }
        if let Some(he) = he {
            if !he.iter().all(|h| *h > 0.0 && h.is_finite()) {
                is.push(format!("{loc}.half_extents"), "must be positive");
            }
        }
        if let (Some(o), Some(f)) = (object, frame) {
            if !seen_boxes.insert((o, f)) {
                is.push(loc.clone(), format!("duplicate box for object {o} at frame {f}"));
            }
        }
        if let (Some(o), Some(he)) = (object, he) {
            let prev = *extents.entry(o).or_insert(he);
            if prev != he {
                is.push(format!("{loc}.half_extents"), format!("object {o} changes size"));
            }
        }
        if let (Some(object), Some(frame), Some(half_extents), Some(pose)) = (object, frame, he, pose) {
            boxes.push(BoxRecord { object, frame, half_extents, pose });
        }
    }
    for (i, m) in raw.masklets.iter().enumerate() {
        if !cam_ids.contains(&m.camera) {
            is.push(format!("$.masklets[{i}].camera"), format!("unknown camera {}", m.camera));
        }
    }
    if !is.0.is_empty() {
        return Err(ManifestErrors(is.0));
    }
    Ok(SequenceManifest {
        version: version.expect("checked"),
        sequence_id: sequence_id.expect("checked"),
        frame_count: frame_count.expect("checked"),
        ego_poses: ego_poses.into_iter().map(|p| p.expect("checked")).collect(),
        cameras,
        lidar_scans,
        boxes,
        masklets: raw.masklets,
    })
}

impl SequenceManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn camera(&self, id: CameraId) -> Option<&CameraSpec> {
        self.cameras.iter().find(|c| c.id == id)
    }

    /// Box records grouped into per-object tracks.
    pub fn object_boxes(&self) -> BTreeMap<ObjectId, ObjectBox> {
        let mut out: BTreeMap<ObjectId, ObjectBox> = BTreeMap::new();
        for b in &self.boxes {
            out.entry(b.object)
                .or_insert_with(|| ObjectBox {
                    id: b.object,
                    half_extents: Vector3::from(b.half_extents),
                    poses: BTreeMap::new(),
                })
                .poses
                .insert(b.frame, b.pose);
        }
        out
    }
}

/// Reads, validates, and checks that every referenced file exists and
/// parses.
pub fn parse_manifest(path: &Path) -> Result<(SequenceManifest, PathBuf), IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let m = parse_manifest_str(&text)?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut issues = Vec::new();
    for (i, s) in m.lidar_scans.iter().enumerate() {
        if let Err(e) = super::read_scan(&dir.join(s)) {
            issues.push(ManifestIssue { location: format!("$.lidar_scans[{i}]"), message: e.to_string() });
        }
    }
    for (i, r) in m.masklets.iter().enumerate() {
        match super::read_masklets2d(&dir.join(&r.file)) {
            Ok(ms) => {
                for t in ms.iter().filter(|t| t.camera != r.camera) {
                    issues.push(ManifestIssue {
                        location: format!("$.masklets[{i}]"),
                        message: format!("masklet {} belongs to camera {}, not {}", t.id, t.camera, r.camera),
                    });
                }
                if let Some(cam) = m.camera(r.camera) {
                    for t in &ms {
                        for (f, rle) in &t.frames {
                            if *f >= m.frame_count || (rle.width, rle.height) != (cam.intrinsics.width, cam.intrinsics.height) {
                                issues.push(ManifestIssue {
                                    location: format!("$.masklets[{i}]"),
                                    message: format!("masklet {} frame {f} does not fit the sequence or camera", t.id),
                                });
                            }
                        }
                    }
                }
            }
            Err(e) => issues.push(ManifestIssue { location: format!("$.masklets[{i}]"), message: e.to_string() }),
        }
    }
    if !issues.is_empty() {
        return Err(ManifestErrors(issues).into());
    }
    Ok((m, dir))
}
