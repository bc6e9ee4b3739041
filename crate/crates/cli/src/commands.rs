use std::path::{Path, PathBuf};

use masklet4d::config::Config;
use masklet4d::io::{self, JSON_VERSION};
use masklet4d::metrics::{dataset_stats, DatasetStats, StatsInput};
use masklet4d::pipeline::{load_sequence, protocol_scene, FusionOutput, Pipeline, Sequence, Stage};
use masklet4d::protocol::{
    run_offline, run_online, run_semisupervised, NoisyGtOracle, PerfectOracle, ProtocolResult, SegmenterOracle, SemiPrompt,
};
use masklet4d::synth::{generate, SynthParams};
use masklet4d::{CameraId, ObjectId};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn pipeline(cfg: &Config, work: &Path) -> Pipeline {
    Pipeline::new(work, cfg.recon.clone(), cfg.fusion)
}

/// What a stage command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub version: u32,
    pub stage: String,
    pub sequence_id: String,
    pub dir: PathBuf,
    pub key: String,
    pub cached: bool,
}

fn report<T>(stage: &str, seq: &Sequence, s: &Stage<T>) -> StageReport {
    StageReport {
        version: JSON_VERSION,
        stage: stage.into(),
        sequence_id: seq.manifest.sequence_id.clone(),
        dir: s.dir.clone(),
        key: s.key.clone(),
        cached: s.cached,
    }
}

/// Writes the synthetic fixture under `out`; returns the manifest path.
pub fn synth(out: &Path, params: &SynthParams) -> Result<PathBuf, CliError> {
    Ok(generate(params).write(out)?)
}

pub fn reconstruct(cfg: &Config, work: &Path, manifest: &Path) -> Result<StageReport, CliError> {
    let seq = load_sequence(manifest)?;
    let r = pipeline(cfg, work).reconstruct(&seq)?;
    Ok(report("reconstruct", &seq, &r))
}

/// Ray casts, reconstructing first unless the grids are cached.
pub fn raycast(cfg: &Config, work: &Path, manifest: &Path) -> Result<StageReport, CliError> {
    let seq = load_sequence(manifest)?;
    let p = pipeline(cfg, work);
    let r = p.reconstruct(&seq)?;
    let t = p.raycast(&seq, &r)?;
    Ok(report("raycast", &seq, &t))
}

pub fn fuse_sequence(cfg: &Config, work: &Path, seq: &Sequence) -> Result<Stage<FusionOutput>, CliError> {
    let (_, _, f) = pipeline(cfg, work).run(seq)?;
    Ok(f)
}

/// Runs every stage; with `out`, copies the fusion artifacts there.
pub fn fuse(cfg: &Config, work: &Path, manifest: &Path, out: Option<&Path>) -> Result<StageReport, CliError> {
    let seq = load_sequence(manifest)?;
    let f = fuse_sequence(cfg, work, &seq)?;
    if let Some(out) = out {
        for name in ["voxel_masklets.m4dv", "masklets3d.json", "scores.json", "fusion.json"] {
            io::write_file(&out.join(name), &io::read_file(&f.dir.join(name))?)?;
        }
    }
    Ok(report("fuse", &seq, &f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsOutput {
    pub version: u32,
    pub sequence_ids: Vec<String>,
    pub stats: DatasetStats,
}

pub fn stats(cfg: &Config, work: &Path, manifests: &[PathBuf]) -> Result<StatsOutput, CliError> {
    if manifests.is_empty() {
        return Err(CliError::Usage("stats needs at least one manifest".into()));
    }
    let mut loaded = Vec::new();
    for m in manifests {
        let seq = load_sequence(m)?;
        let f = fuse_sequence(cfg, work, &seq)?;
        loaded.push((seq, f.value));
    }
    let inputs: Vec<StatsInput<'_>> = loaded
        .iter()
        .map(|(seq, f)| StatsInput {
            frame_count: seq.manifest.frame_count,
            camera_count: seq.manifest.cameras.len(),
            masklets2d: &seq.masklets,
            masklets3d: &f.masklets3d,
            voxel_masklets: &f.masklets,
            scores: &f.scores,
        })
        .collect();
    Ok(StatsOutput {
        version: JSON_VERSION,
        sequence_ids: loaded.iter().map(|(s, _)| s.manifest.sequence_id.clone()).collect(),
        stats: dataset_stats(&inputs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    Offline,
    Online,
    Semi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Perfect,
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalArgs {
    pub mode: ProtocolMode,
    /// Only used by semi-supervised runs.
    pub prompt: SemiPrompt,
    pub oracle: OracleKind,
}

/// Everything a run depends on, echoed next to its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub sequence_id: String,
    pub protocol: ProtocolMode,
    pub prompt: Option<SemiPrompt>,
    pub oracle: OracleKind,
    pub camera: CameraId,
    pub seed: u64,
    pub iou_threshold: f64,
    pub clicks_per_prompt: usize,
    pub frame_budget: usize,
    pub corruption_rate: f64,
    pub corruption_magnitude: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub version: u32,
    pub metadata: EvalMetadata,
    pub result: ProtocolResult,
}

/// Runs a protocol against the fused annotations of one sequence.
pub fn eval(cfg: &Config, work: &Path, manifest: &Path, args: EvalArgs) -> Result<EvalOutput, CliError> {
    let seq = load_sequence(manifest)?;
    let fused = fuse_sequence(cfg, work, &seq)?;
    let camera = CameraId(cfg.protocol.camera);
    let scene = protocol_scene(&seq, &fused.value, camera)?;
    let objects: Vec<ObjectId> = scene.objects.keys().copied().collect();
    let params = cfg.protocol_params();
    let p = &cfg.protocol;
    let result = match args.oracle {
        OracleKind::Perfect => run(&PerfectOracle, &scene, &objects, args, &params)?,
        OracleKind::Noisy => {
            let oracle = NoisyGtOracle::new(p.seed, p.corruption_rate, p.corruption_magnitude);
            run(&oracle, &scene, &objects, args, &params)?
        }
    };
    Ok(EvalOutput {
        version: JSON_VERSION,
        metadata: EvalMetadata {
            sequence_id: seq.manifest.sequence_id.clone(),
            protocol: args.mode,
            prompt: (args.mode == ProtocolMode::Semi).then_some(args.prompt),
            oracle: args.oracle,
            camera,
            seed: p.seed,
            iou_threshold: params.iou_threshold,
            clicks_per_prompt: params.clicks_per_prompt,
            frame_budget: params.frame_budget,
            corruption_rate: p.corruption_rate,
            corruption_magnitude: p.corruption_magnitude,
        },
        result,
    })
}

fn run<O: SegmenterOracle>(
    oracle: &O,
    scene: &masklet4d::protocol::ProtocolScene,
    objects: &[ObjectId],
    args: EvalArgs,
    params: &masklet4d::protocol::ProtocolParams,
) -> Result<ProtocolResult, CliError> {
    Ok(match args.mode {
        ProtocolMode::Offline => run_offline(oracle, scene, objects, params)?,
        ProtocolMode::Online => run_online(oracle, scene, objects, params)?,
        ProtocolMode::Semi => run_semisupervised(oracle, scene, objects, args.prompt, params)?,
    })
}
