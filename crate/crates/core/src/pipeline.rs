//! The batch pipeline `reconstruct → raycast → fuse` over one sequence, with
//! a content-addressed stage cache: each stage writes its artifacts to
//! `<work>/cache/<stage>-<sha256>/`, keyed by its inputs and configuration,
//! and is skipped when that directory already exists.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ReconConfig;
use crate::fusion::{
    filter_masklet, image_observations, merge_cross_video, project_masklet, score_masklet, transfer_to_points, ClusterStatus, FusionError,
    FusionParams, Masklet2D, Masklet3D, MaskletScore, VoxelMasklet, VoxelPlacer,
};
use crate::io::{self, IoError, ScoresFile, SequenceManifest, JSON_VERSION};
use crate::mask::Mask2D;
use crate::protocol::{ObjectTruth, ProtocolScene};
use crate::recon::{raycast_table, split_foreground, GridFrame, ObjectBox, PixelVoxelTable, RaycastScene, ReconError, SparseVoxelGrid};
use crate::types::{CameraId, MaskletId, ObjectId};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("masklet {masklet} uses camera {camera}, which the manifest does not define")]
    UnknownCamera { masklet: MaskletId, camera: CameraId },
    #[error("masklet {masklet} references frame {frame}, sequence has {frames}")]
    FrameRange { masklet: MaskletId, frame: usize, frames: usize },
    #[error("duplicate masklet id {0}")]
    DuplicateMasklet(MaskletId),
    #[error("camera {0} is not in the manifest")]
    NoCamera(CameraId),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// A loaded sequence plus digests of its raw input files.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub manifest: SequenceManifest,
    pub dir: PathBuf,
    /// Ego-frame points per frame.
    pub scans: Vec<Vec<Vector3<f64>>>,
    pub masklets: Vec<Masklet2D>,
    pub boxes: BTreeMap<ObjectId, ObjectBox>,
    geometry_digest: String,
    masklet_digest: String,
}

struct KeyHasher(Sha256);

impl KeyHasher {
    fn new(stage: &str) -> Self {
        let mut h = KeyHasher(Sha256::new());
        h.part(b"masklet4d-stage-v1");
        h.part(stage.as_bytes());
        h
    }

    /// Length-prefixed, so concatenations cannot collide.
    fn part(&mut self, bytes: &[u8]) {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

pub fn load_sequence(manifest_path: &Path) -> Result<Sequence, PipelineError> {
    let (manifest, dir) = io::parse_manifest(manifest_path)?;
    let mut geo = KeyHasher::new("geometry");
    geo.part(&io::read_file(manifest_path)?);
    let mut scans = Vec::with_capacity(manifest.lidar_scans.len());
    for rel in &manifest.lidar_scans {
        let bytes = io::read_file(&dir.join(rel))?;
        geo.part(&bytes);
        scans.push(io::decode_scan(&bytes)?);
    }
    let mut mh = KeyHasher::new("masklets");
    let mut masklets: Vec<Masklet2D> = Vec::new();
    for r in &manifest.masklets {
        let path = dir.join(&r.file);
        mh.part(&io::read_file(&path)?);
        for m in io::read_masklets2d(&path)? {
            // a file belongs to one camera; the masklet must agree
            if m.camera != r.camera {
                return Err(PipelineError::UnknownCamera { masklet: m.id, camera: m.camera });
            }
            masklets.push(m);
        }
    }
    masklets.sort_by_key(|m| m.id);
    for w in masklets.windows(2) {
        if w[0].id == w[1].id {
            return Err(PipelineError::DuplicateMasklet(w[0].id));
        }
    }
    for m in &masklets {
        if manifest.camera(m.camera).is_none() {
            return Err(PipelineError::UnknownCamera { masklet: m.id, camera: m.camera });
        }
        if let Some((&f, _)) = m.frames.range(manifest.frame_count..).next() {
            return Err(PipelineError::FrameRange { masklet: m.id, frame: f, frames: manifest.frame_count });
        }
    }
    let boxes = manifest.object_boxes();
    Ok(Sequence {
        manifest,
        dir,
        scans,
        masklets,
        boxes,
        geometry_digest: geo.finish(),
        masklet_digest: mh.finish(),
    })
}

/// Background grid in the world frame, one body-frame grid per object.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub background: SparseVoxelGrid,
    pub foreground: BTreeMap<ObjectId, SparseVoxelGrid>,
}

impl Reconstruction {
    pub fn voxel_size(&self) -> f64 {
        self.background.voxel_size()
    }
}

/// Splits every scan into background and per-object points and integrates
/// them. Only boxes posed at a frame take part in that frame's split.
pub fn reconstruct(seq: &Sequence, cfg: &ReconConfig) -> Result<Reconstruction, PipelineError> {
    let frames: Vec<usize> = (0..seq.manifest.frame_count).collect();
    let parts = frames
        .par_iter()
        .map(|&f| {
            let present: Vec<ObjectBox> = seq.boxes.values().filter(|b| b.exists_at(f)).cloned().collect();
            split_foreground(&seq.scans[f], &seq.manifest.ego_poses[f], &present, f)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut background = SparseVoxelGrid::new(cfg.voxel_size, GridFrame::World)?;
    let mut foreground: BTreeMap<ObjectId, SparseVoxelGrid> = BTreeMap::new();
    for part in parts {
        background.integrate(&part.background.points)?;
        for (id, pts) in part.foreground {
            let grid = match foreground.entry(id) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => e.insert(SparseVoxelGrid::new(cfg.voxel_size, GridFrame::Body(id))?),
            };
            grid.integrate(&pts.points)?;
        }
    }
    Ok(Reconstruction { background, foreground })
}

/// One table slice per (camera, frame).
pub fn raycast(seq: &Sequence, recon: &Reconstruction, cfg: &ReconConfig) -> Result<PixelVoxelTable, PipelineError> {
    let fg: Vec<(SparseVoxelGrid, ObjectBox)> = recon
        .foreground
        .iter()
        .filter_map(|(id, g)| seq.boxes.get(id).map(|b| (g.clone(), b.clone())))
        .collect();
    let scene = RaycastScene { background: Some(&recon.background), foreground: &fg };
    let mut table = PixelVoxelTable::default();
    for cam in &seq.manifest.cameras {
        for (f, ego) in seq.manifest.ego_poses.iter().enumerate() {
            let cam_to_world = ego.compose(&cam.extrinsic);
            table.insert(cam.id, f, raycast_table(&scene, &cam_to_world, &cam.intrinsics, f, cfg.max_range)?);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// Denoised, merged voxel masklets, sorted by id.
    pub masklets: Vec<VoxelMasklet>,
    /// Clustering outcome per input track.
    pub status: BTreeMap<MaskletId, ClusterStatus>,
    /// Input track → merged masklet.
    pub mapping: BTreeMap<MaskletId, MaskletId>,
    pub masklets3d: Vec<Masklet3D>,
    pub scores: BTreeMap<MaskletId, MaskletScore>,
}

/// Scan points of `frame` in the world frame.
pub fn world_points(seq: &Sequence, frame: usize) -> Vec<Vector3<f64>> {
    let ego = &seq.manifest.ego_poses[frame];
    seq.scans[frame].iter().map(|p| ego.apply(p)).collect()
}

/// Projection, BEV filtering, cross-camera merge, scoring and point transfer.
/// `voxel_size` must be the size the table's grids were built with.
pub fn fuse(seq: &Sequence, table: &PixelVoxelTable, voxel_size: f64, params: &FusionParams) -> Result<FusionOutput, PipelineError> {
    params.validate()?;
    let placer = VoxelPlacer { voxel_size, boxes: &seq.boxes };
    let filtered = seq
        .masklets
        .par_iter()
        .map(|m| {
            let vm = project_masklet(m, table)?;
            filter_masklet(&vm, params, &placer)
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    let status = seq.masklets.iter().zip(&filtered).map(|(m, c)| (m.id, c.status)).collect();
    let voxel: Vec<VoxelMasklet> = filtered.into_iter().map(|c| c.masklet).collect();
    let merged = merge_cross_video(&voxel, params.overlap_threshold);

    let by_id: BTreeMap<MaskletId, &Masklet2D> = seq.masklets.iter().map(|m| (m.id, m)).collect();
    let scores = merged
        .merged
        .par_iter()
        .map(|vm| {
            let tracks: Vec<&Masklet2D> = vm.sources.iter().filter_map(|s| by_id.get(&s.track).copied()).collect();
            Ok((vm.id, score_masklet(vm, &image_observations(&tracks, table)?)))
        })
        .collect::<Result<BTreeMap<_, _>, FusionError>>()?;

    let per_frame = (0..seq.manifest.frame_count)
        .into_par_iter()
        .map(|f| transfer_to_points(&merged.merged, &world_points(seq, f), &placer, f, params.transfer_radius))
        .collect::<Result<Vec<_>, _>>()?;
    let mut masklets3d: BTreeMap<MaskletId, Masklet3D> =
        merged.merged.iter().map(|m| (m.id, Masklet3D { id: m.id, frames: BTreeMap::new() })).collect();
    for (f, labels) in per_frame.into_iter().enumerate() {
        for (id, pm) in labels {
            if !pm.is_empty() {
                masklets3d.get_mut(&id).expect("merged id").frames.insert(f, pm);
            }
        }
    }
    Ok(FusionOutput {
        masklets: merged.merged,
        status,
        mapping: merged.mapping,
        masklets3d: masklets3d.into_values().collect(),
        scores,
    })
}

/// Fused annotations as protocol ground truth, seen through `camera`: each
/// fused masklet is one object whose image truth is the union of its source
/// tracks on that camera and whose LiDAR truth is its transferred points.
pub fn protocol_scene(seq: &Sequence, fused: &FusionOutput, camera: CameraId) -> Result<ProtocolScene, PipelineError> {
    let spec = seq.manifest.camera(camera).ok_or(PipelineError::NoCamera(camera))?;
    let (w, h) = (spec.intrinsics.width, spec.intrinsics.height);
    let n = seq.manifest.frame_count;
    let mut objects: BTreeMap<ObjectId, ObjectTruth> = fused
        .masklets3d
        .iter()
        .map(|m| {
            let lidar = (0..n).map(|f| m.frames.get(&f).cloned().unwrap_or_default()).collect();
            (ObjectId(m.id.0), ObjectTruth { image: vec![Mask2D::empty(w, h); n], lidar })
        })
        .collect();
    for track in seq.masklets.iter().filter(|m| m.camera == camera) {
        let Some(target) = fused.mapping.get(&track.id) else { continue };
        let Some(truth) = objects.get_mut(&ObjectId(target.0)) else { continue };
        for (f, rle) in &track.frames {
            let m = rle.decode().map_err(FusionError::from)?;
            truth.image[*f] = truth.image[*f].or(&m).map_err(FusionError::from)?;
        }
    }
    Ok(ProtocolScene { width: w, height: h, scans: seq.scans.clone(), objects })
}

/// A stage result and where its artifacts live.
#[derive(Debug, Clone)]
pub struct Stage<T> {
    pub value: T,
    pub dir: PathBuf,
    pub key: String,
    /// True when the artifacts were loaded rather than computed.
    pub cached: bool,
}

#[derive(Serialize, Deserialize)]
struct FusionSummary {
    version: u32,
    status: BTreeMap<MaskletId, ClusterStatus>,
    mapping: BTreeMap<MaskletId, MaskletId>,
}

/// Runs stages against a work directory, reusing cached artifacts.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub work: PathBuf,
    pub recon: ReconConfig,
    pub fusion: FusionParams,
}

type Artifacts = Vec<(String, Vec<u8>)>;

impl Pipeline {
    pub fn new(work: impl Into<PathBuf>, recon: ReconConfig, fusion: FusionParams) -> Self {
        Self { work: work.into(), recon, fusion }
    }

    /// Runs `f` on a pool sized by `recon.threads` (0 = all cores).
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.recon.threads)
            .build()
            .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
        Ok(pool.install(f))
    }

    fn stage<T>(
        &self,
        name: &str,
        key: String,
        load: impl FnOnce(&Path) -> Result<T, PipelineError>,
        compute: impl FnOnce() -> Result<(T, Artifacts), PipelineError>,
    ) -> Result<Stage<T>, PipelineError> {
        let cache = self.work.join("cache");
        let dir = cache.join(format!("{name}-{key}"));
        if dir.is_dir() {
            return Ok(Stage { value: load(&dir)?, dir, key, cached: true });
        }
        let (value, files) = compute()?;
        let tmp = cache.join(format!(".{name}-{key}.{}", std::process::id()));
        for (file, bytes) in &files {
            io::write_file(&tmp.join(file), bytes)?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| IoError::File { path: tmp.clone(), source: e })?;
        if let Err(e) = std::fs::rename(&tmp, &dir) {
            // another run finished the same stage first; its output is identical
            let _ = std::fs::remove_dir_all(&tmp);
            if !dir.is_dir() {
                return Err(IoError::File { path: dir, source: e }.into());
            }
        }
        Ok(Stage { value, dir, key, cached: false })
    }

    pub fn reconstruct_key(&self, seq: &Sequence) -> String {
        let mut h = KeyHasher::new("reconstruct");
        h.part(seq.geometry_digest.as_bytes());
        h.part(&self.recon.voxel_size.to_le_bytes());
        h.finish()
    }

    pub fn reconstruct(&self, seq: &Sequence) -> Result<Stage<Reconstruction>, PipelineError> {
        let load = |dir: &Path| -> Result<Reconstruction, PipelineError> {
            let background = io::decode_grid(&io::read_file(&dir.join("background.m4dg"))?)?;
            let mut foreground = BTreeMap::new();
            for id in seq.boxes.keys() {
                let path = dir.join(format!("object-{id}.m4dg"));
                if path.exists() {
                    foreground.insert(*id, io::decode_grid(&io::read_file(&path)?)?);
                }
            }
            Ok(Reconstruction { background, foreground })
        };
        self.stage("reconstruct", self.reconstruct_key(seq), load, || {
            let r = self.install(|| reconstruct(seq, &self.recon))??;
            let mut files = vec![("background.m4dg".to_string(), io::encode_grid(&r.background))];
            for (id, g) in &r.foreground {
                files.push((format!("object-{id}.m4dg"), io::encode_grid(g)));
            }
            Ok((r, files))
        })
    }

    pub fn raycast(&self, seq: &Sequence, recon: &Stage<Reconstruction>) -> Result<Stage<PixelVoxelTable>, PipelineError> {
        let mut h = KeyHasher::new("raycast");
        h.part(recon.key.as_bytes());
        h.part(seq.geometry_digest.as_bytes());
        h.part(&self.recon.max_range.to_le_bytes());
        let load = |dir: &Path| Ok(io::decode_table(&io::read_file(&dir.join("table.m4dt"))?)?);
        self.stage("raycast", h.finish(), load, || {
            let t = self.install(|| raycast(seq, &recon.value, &self.recon))??;
            let bytes = io::encode_table(&t);
            Ok((t, vec![("table.m4dt".to_string(), bytes)]))
        })
    }

    pub fn fuse(&self, seq: &Sequence, table: &Stage<PixelVoxelTable>) -> Result<Stage<FusionOutput>, PipelineError> {
        let mut h = KeyHasher::new("fuse");
        h.part(table.key.as_bytes());
        h.part(seq.masklet_digest.as_bytes());
        h.part(&self.recon.voxel_size.to_le_bytes());
        h.part(&serde_json::to_vec(&self.fusion).expect("params serialize"));
        let sequence_id = seq.manifest.sequence_id.clone();
        let load = |dir: &Path| -> Result<FusionOutput, PipelineError> {
            let masklets = io::decode_voxel_masklets(&io::read_file(&dir.join("voxel_masklets.m4dv"))?)?;
            let masklets3d = io::read_masklets3d(&dir.join("masklets3d.json"))?;
            let scores = io::read_scores(&dir.join("scores.json"))?.scores;
            let path = dir.join("fusion.json");
            let summary: FusionSummary = serde_json::from_slice(&io::read_file(&path)?).map_err(|e| IoError::Json { path, source: e })?;
            Ok(FusionOutput { masklets, status: summary.status, mapping: summary.mapping, masklets3d, scores })
        };
        self.stage("fuse", h.finish(), load, || {
            let out = self.install(|| fuse(seq, &table.value, self.recon.voxel_size, &self.fusion))??;
            let scores = ScoresFile { version: JSON_VERSION, sequence_id, scores: out.scores.clone() };
            let summary = FusionSummary { version: JSON_VERSION, status: out.status.clone(), mapping: out.mapping.clone() };
            let files = vec![
                ("voxel_masklets.m4dv".to_string(), io::encode_voxel_masklets(&out.masklets)),
                ("masklets3d.json".to_string(), io::encode_masklets3d(&out.masklets3d)),
                ("scores.json".to_string(), io::encode_scores(&scores)),
                ("fusion.json".to_string(), io::to_pretty(&summary)),
            ];
            Ok((out, files))
        })
    }

    /// All three stages.
    pub fn run(&self, seq: &Sequence) -> Result<(Stage<Reconstruction>, Stage<PixelVoxelTable>, Stage<FusionOutput>), PipelineError> {
        let r = self.reconstruct(seq)?;
        let t = self.raycast(seq, &r)?;
        let f = self.fuse(seq, &t)?;
        Ok((r, t, f))
    }
}
