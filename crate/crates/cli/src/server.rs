//! Review service under `/api/v1/`. Reads run concurrently; parameter and
//! verdict writes are serialized, and at most one re-fuse runs at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use masklet4d::config::Config;
use masklet4d::fusion::{FusionError, FusionParams, MaskletScore, VoxelPlacer};
use masklet4d::io::{self, Verdict, VerdictRecord, JSON_VERSION};
use masklet4d::mask::RleMask;
use masklet4d::pipeline::{load_sequence, FusionOutput, Pipeline, PipelineError, Sequence, Stage};
use masklet4d::recon::PixelVoxelTable;
use masklet4d::{CameraId, MaskletId};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::OwnedMutexGuard;

use crate::CliError;

struct Loaded {
    seq: Sequence,
    table: Stage<PixelVoxelTable>,
    fused: RwLock<Arc<FusionOutput>>,
}

struct Inner {
    cfg: Config,
    work: PathBuf,
    sequences: BTreeMap<String, Arc<Loaded>>,
    params: RwLock<FusionParams>,
    refuse: Arc<tokio::sync::Mutex<()>>,
    verdicts: Mutex<()>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn safe_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl AppState {
    /// Loads each sequence and runs (or reloads) its pipeline.
    pub fn load(cfg: Config, work: &Path, manifests: &[PathBuf]) -> Result<Self, CliError> {
        let p = Pipeline::new(work, cfg.recon.clone(), cfg.fusion);
        let mut sequences = BTreeMap::new();
        for m in manifests {
            let seq = load_sequence(m)?;
            let id = seq.manifest.sequence_id.clone();
            if !safe_id(&id) {
                return Err(CliError::Usage(format!("sequence id `{id}` is not usable as a file name")));
            }
            if sequences.contains_key(&id) {
                return Err(CliError::Usage(format!("sequence `{id}` given twice")));
            }
            let (_, table, fused) = p.run(&seq)?;
            let loaded = Loaded { seq, table, fused: RwLock::new(Arc::new(fused.value)) };
            sequences.insert(id, Arc::new(loaded));
        }
        Ok(AppState(Arc::new(Inner {
            params: RwLock::new(cfg.fusion),
            cfg,
            work: work.to_path_buf(),
            sequences,
            refuse: Arc::new(tokio::sync::Mutex::new(())),
            verdicts: Mutex::new(()),
        })))
    }

    /// Claims the single re-fuse slot; `None` while a re-fuse runs.
    pub fn try_claim_refuse(&self) -> Option<OwnedMutexGuard<()>> {
        self.0.refuse.clone().try_lock_owned().ok()
    }

    pub fn verdict_log(&self, sequence: &str) -> PathBuf {
        self.0.work.join("verdicts").join(format!("{sequence}.jsonl"))
    }

    fn sequence(&self, id: &str) -> Result<Arc<Loaded>, ApiError> {
        self.0
            .sequences
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_sequence", format!("no sequence `{id}`")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/sequences", get(list_sequences))
        .route("/api/v1/sequences/{id}/frames/{frame}", get(frame_bundle))
        .route("/api/v1/sequences/{id}/scores", get(scores))
        .route("/api/v1/sequences/{id}/refuse", post(refuse))
        .route("/api/v1/sequences/{id}/verdicts", get(verdicts))
        .route("/api/v1/sequences/{id}/masklets/{masklet}/verdict", post(record_verdict))
        .route("/api/v1/parameters", get(get_parameters).put(put_parameters))
        .fallback(|| async { ApiError::not_found("unknown_route", "no such endpoint".into()) })
        .with_state(state)
}

pub async fn serve(state: AppState, address: &str) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(address).await.map_err(|e| CliError::Serve(format!("{address}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::Serve(e.to_string()))?;
    eprintln!("serving {} sequence(s) on http://{local}/api/v1/", state.0.sequences.len());
    axum::serve(listener, router(state)).await.map_err(|e| CliError::Serve(e.to_string()))
}

// ------------------------------------------------------------------ errors

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: String) -> Self {
        Self { status, body: json!({ "code": code, "message": message }) }
    }

    fn not_found(code: &str, message: String) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    fn bad_request(message: String) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }

    fn validation(e: FusionError) -> Self {
        let mut err = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string());
        if let FusionError::InvalidParameter { name, value, bound } = e {
            err.body["parameter"] = json!(name);
            err.body["value"] = json!(value);
            err.body["bound"] = json!(bound);
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "version": JSON_VERSION, "error": self.body }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn versioned(mut v: Value) -> Json<Value> {
    v["version"] = json!(JSON_VERSION);
    Json(v)
}

// ---------------------------------------------------------------- handlers

#[derive(Serialize)]
struct SequenceSummary {
    id: String,
    frame_count: usize,
    cameras: Vec<CameraId>,
    tracks: usize,
    masklets: usize,
    /// Masklets by score status: scored / not visible.
    scored: usize,
    not_visible: usize,
}

async fn list_sequences(State(s): State<AppState>) -> ApiResult {
    let list: Vec<SequenceSummary> = s
        .0
        .sequences
        .iter()
        .map(|(id, l)| {
            let fused = l.fused.read().expect("fusion lock").clone();
            let scored = fused.scores.values().filter(|x| x.value().is_some()).count();
            SequenceSummary {
                id: id.clone(),
                frame_count: l.seq.manifest.frame_count,
                cameras: l.seq.manifest.cameras.iter().map(|c| c.id).collect(),
                tracks: l.seq.masklets.len(),
                masklets: fused.masklets.len(),
                scored,
                not_visible: fused.scores.len() - scored,
            }
        })
        .collect();
    Ok(versioned(json!({ "sequences": list })))
}

#[derive(Serialize)]
struct Overlay<'a> {
    track: MaskletId,
    /// Fused masklet the track ended up in, if any.
    masklet: Option<MaskletId>,
    rle: &'a RleMask,
}

#[derive(Serialize)]
struct ImageBundle<'a> {
    camera: CameraId,
    width: u32,
    height: u32,
    overlays: Vec<Overlay<'a>>,
}

#[derive(Serialize)]
struct LidarMasklet<'a> {
    masklet: MaskletId,
    indices: &'a [u32],
}

/// Where a fused masklet sits in the bird's-eye view at one frame.
#[derive(Serialize)]
struct BevSummary {
    masklet: MaskletId,
    voxels: usize,
    /// Occupied BEV cells, in voxel units.
    cells: Vec<[i64; 2]>,
    min: [f64; 2],
    max: [f64; 2],
    centroid: [f64; 2],
    score: MaskletScore,
    verdict: Option<Verdict>,
}

fn latest(state: &AppState, sequence: &str) -> Result<BTreeMap<MaskletId, Verdict>, ApiError> {
    let log = io::read_verdicts(&state.verdict_log(sequence)).map_err(ApiError::internal)?;
    Ok(io::latest_verdicts(&log))
}

async fn frame_bundle(State(s): State<AppState>, UrlPath((id, frame)): UrlPath<(String, usize)>) -> ApiResult {
    let l = s.sequence(&id)?;
    let n = l.seq.manifest.frame_count;
    if frame >= n {
        return Err(ApiError::not_found("frame_out_of_range", format!("frame {frame} outside 0..{n}")));
    }
    let fused = l.fused.read().expect("fusion lock").clone();
    let verdicts = latest(&s, &id)?;

    let images: Vec<ImageBundle<'_>> = l
        .seq
        .manifest
        .cameras
        .iter()
        .map(|c| ImageBundle {
            camera: c.id,
            width: c.intrinsics.width,
            height: c.intrinsics.height,
            overlays: l
                .seq
                .masklets
                .iter()
                .filter(|m| m.camera == c.id)
                .filter_map(|m| {
                    m.frames.get(&frame).map(|rle| Overlay { track: m.id, masklet: fused.mapping.get(&m.id).copied(), rle })
                })
                .collect(),
        })
        .collect();

    let lidar: Vec<LidarMasklet<'_>> = fused
        .masklets3d
        .iter()
        .filter_map(|m| m.frames.get(&frame).map(|p| LidarMasklet { masklet: m.id, indices: p.indices() }))
        .collect();

    let voxel_size = s.0.cfg.recon.voxel_size;
    let placer = VoxelPlacer { voxel_size, boxes: &l.seq.boxes };
    let mut bev = Vec::new();
    for m in &fused.masklets {
        let centers: Vec<_> = m.voxels.keys().filter_map(|v| placer.world_center(v, frame)).collect();
        if centers.is_empty() {
            continue;
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        let mut sum = [0.0; 2];
        let mut cells = BTreeSet::new();
        for c in &centers {
            for a in 0..2 {
                min[a] = min[a].min(c[a]);
                max[a] = max[a].max(c[a]);
                sum[a] += c[a];
            }
            cells.insert([(c.x / voxel_size).floor() as i64, (c.y / voxel_size).floor() as i64]);
        }
        let k = centers.len() as f64;
        bev.push(BevSummary {
            masklet: m.id,
            voxels: centers.len(),
            cells: cells.into_iter().collect(),
            min,
            max,
            centroid: [sum[0] / k, sum[1] / k],
            score: fused.scores.get(&m.id).copied().unwrap_or(MaskletScore::NotVisible),
            verdict: verdicts.get(&m.id).copied(),
        });
    }
    Ok(versioned(json!({
        "sequence": id,
        "frame": frame,
        "frame_count": n,
        "images": images,
        "lidar": { "points": l.seq.scans[frame].len(), "masklets": lidar },
        "bev": bev,
    })))
}

async fn scores(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let l = s.sequence(&id)?;
    let fused = l.fused.read().expect("fusion lock").clone();
    Ok(versioned(json!({
        "sequence": id,
        "scores": fused.scores,
        "mapping": fused.mapping,
        "verdicts": latest(&s, &id)?,
    })))
}

fn parameters_body(p: &FusionParams) -> Value {
    let bounds: BTreeMap<&str, &str> = FusionParams::bounds().into_iter().collect();
    json!({ "parameters": p, "bounds": bounds })
}

async fn get_parameters(State(s): State<AppState>) -> ApiResult {
    let p = *s.0.params.read().expect("parameter lock");
    Ok(versioned(parameters_body(&p)))
}

/// Accepts any subset of the parameters; the merged set is validated and
/// swapped in whole.
async fn put_parameters(State(s): State<AppState>, body: Result<Json<Value>, JsonRejection>) -> ApiResult {
    let Json(patch) = body?;
    let Value::Object(patch) = patch else {
        return Err(ApiError::bad_request("expected a JSON object of parameters".into()));
    };
    let mut guard = s.0.params.write().expect("parameter lock");
    let mut merged = serde_json::to_value(*guard).map_err(ApiError::internal)?;
    for (k, v) in patch {
        merged[k] = v;
    }
    let next: FusionParams = serde_json::from_value(merged).map_err(|e| ApiError::bad_request(e.to_string()))?;
    next.validate().map_err(ApiError::validation)?;
    *guard = next;
    Ok(versioned(parameters_body(&next)))
}

async fn refuse(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let l = s.sequence(&id)?;
    let Some(slot) = s.try_claim_refuse() else {
        let body = json!({ "version": JSON_VERSION, "status": "busy", "message": "a re-fuse is already running" });
        return Ok((StatusCode::CONFLICT, Json(body)).into_response());
    };
    // one consistent snapshot; later edits apply to the next run
    let params = *s.0.params.read().expect("parameter lock");
    let previous = l.fused.read().expect("fusion lock").clone();
    let pipeline = Pipeline::new(&s.0.work, s.0.cfg.recon.clone(), params);
    let job = {
        let l = l.clone();
        tokio::task::spawn_blocking(move || {
            let _slot = slot;
            pipeline.fuse(&l.seq, &l.table)
        })
    };
    let stage = match job.await.map_err(ApiError::internal)? {
        Ok(stage) => stage,
        Err(PipelineError::Fusion(e @ FusionError::InvalidParameter { .. })) => return Err(ApiError::validation(e)),
        Err(e) => return Err(ApiError::internal(e)),
    };
    let fused = Arc::new(stage.value);
    *l.fused.write().expect("fusion lock") = fused.clone();
    let body = json!({
        "version": JSON_VERSION,
        "status": "done",
        "sequence": id,
        "cached": stage.cached,
        "parameters": params,
        "scores": fused.scores,
        "previous_scores": previous.scores,
        "mapping": fused.mapping,
    });
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    verdict: Verdict,
}

async fn record_verdict(
    State(s): State<AppState>,
    UrlPath((id, masklet)): UrlPath<(String, u32)>,
    body: Result<Json<VerdictBody>, JsonRejection>,
) -> ApiResult {
    let l = s.sequence(&id)?;
    let Json(body) = body?;
    let masklet = MaskletId(masklet);
    let known = l.fused.read().expect("fusion lock").masklets.iter().any(|m| m.id == masklet);
    if !known {
        return Err(ApiError::not_found("unknown_masklet", format!("sequence `{id}` has no masklet {masklet}")));
    }
    let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
    let rec = VerdictRecord { masklet, verdict: body.verdict, timestamp_ms };
    let path = s.verdict_log(&id);
    {
        let _w = s.0.verdicts.lock().expect("verdict lock");
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(ApiError::internal)?;
        }
        io::append_verdict(&path, &rec).map_err(ApiError::internal)?;
    }
    Ok(versioned(json!({ "sequence": id, "record": rec })))
}

async fn verdicts(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    s.sequence(&id)?;
    let log = io::read_verdicts(&s.verdict_log(&id)).map_err(ApiError::internal)?;
    Ok(versioned(json!({ "sequence": id, "latest": io::latest_verdicts(&log), "log": log })))
}
