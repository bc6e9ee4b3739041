use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::fusion::{Masklet2D, Masklet3D, MaskletScore};
use crate::types::MaskletId;

pub const JSON_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Masklet2DFile {
    version: u32,
    masklets: Vec<Masklet2D>,
}

#[derive(Serialize, Deserialize)]
struct Masklet3DFile {
    version: u32,
    masklets: Vec<Masklet3D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresFile {
    pub version: u32,
    pub sequence_id: String,
    pub scores: BTreeMap<MaskletId, MaskletScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

/// One line of the append-only verdict log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub masklet: MaskletId,
    pub verdict: Verdict,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

fn check_version(v: u32, what: &'static str) -> Result<(), IoError> {
    if v != JSON_VERSION {
        return Err(IoError::Format { what, message: format!("unsupported version {v}") });
    }
    Ok(())
}

pub fn to_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

pub fn encode_masklets2d(ms: &[Masklet2D]) -> Vec<u8> {
    to_pretty(&Masklet2DFile { version: JSON_VERSION, masklets: ms.to_vec() })
}

pub fn read_masklets2d(path: &Path) -> Result<Vec<Masklet2D>, IoError> {
    let f: Masklet2DFile = serde_json::from_slice(&super::read_file(path)?).map_err(|e| IoError::json(path, e))?;
    check_version(f.version, "2D masklet file")?;
    for m in &f.masklets {
        for rle in m.frames.values() {
            rle.decode().map_err(|e| IoError::Format { what: "2D masklet file", message: format!("masklet {}: {e}", m.id) })?;
        }
    }
    Ok(f.masklets)
}

pub fn encode_masklets3d(ms: &[Masklet3D]) -> Vec<u8> {
    to_pretty(&Masklet3DFile { version: JSON_VERSION, masklets: ms.to_vec() })
}

pub fn read_masklets3d(path: &Path) -> Result<Vec<Masklet3D>, IoError> {
    let f: Masklet3DFile = serde_json::from_slice(&super::read_file(path)?).map_err(|e| IoError::json(path, e))?;
    check_version(f.version, "3D masklet file")?;
    Ok(f.masklets)
}

pub fn encode_scores(f: &ScoresFile) -> Vec<u8> {
    to_pretty(f)
}

pub fn read_scores(path: &Path) -> Result<ScoresFile, IoError> {
    let f: ScoresFile = serde_json::from_slice(&super::read_file(path)?).map_err(|e| IoError::json(path, e))?;
    check_version(f.version, "scores file")?;
    Ok(f)
}

pub fn append_verdict(path: &Path, rec: &VerdictRecord) -> Result<(), IoError> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| IoError::file(path, e))?;
    let mut line = serde_json::to_vec(rec).expect("serializable");
    line.push(b'\n');
    f.write_all(&line).map_err(|e| IoError::file(path, e))?;
    f.sync_data().map_err(|e| IoError::file(path, e))
}

/// All log lines in order; a missing file is an empty log.
pub fn read_verdicts(path: &Path) -> Result<Vec<VerdictRecord>, IoError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
        Err(e) => return Err(IoError::file(path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| IoError::json(path, e)))
        .collect()
}

/// Latest verdict per masklet.
pub fn latest_verdicts(log: &[VerdictRecord]) -> BTreeMap<MaskletId, Verdict> {
    log.iter().map(|r| (r.masklet, r.verdict)).collect()
}
