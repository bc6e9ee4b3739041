//! File formats: the sequence manifest, LiDAR scans, voxel grids,
//! pixel-voxel tables, masklets, scores and the verdict log.

mod binary;
mod json;
mod manifest;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use binary::{
    decode_grid, decode_scan, decode_table, decode_voxel_masklets, encode_grid, encode_scan, encode_table, encode_voxel_masklets,
    grid_text_dump, read_scan, write_scan, GRID_MAGIC, MASKLET_MAGIC, TABLE_MAGIC,
};
pub use json::{
    append_verdict, encode_masklets2d, encode_masklets3d, encode_scores, latest_verdicts, read_masklets2d, read_masklets3d, read_scores,
    read_verdicts, ScoresFile, Verdict, VerdictRecord, JSON_VERSION,
};
pub use manifest::{
    parse_manifest, parse_manifest_str, BoxRecord, CameraSpec, ManifestErrors, ManifestIssue, MaskletFileRef, SequenceManifest,
    MANIFEST_VERSION,
};

pub use json::to_pretty;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
    #[error(transparent)]
    Manifest(#[from] ManifestErrors),
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File { path: path.to_path_buf(), source }
    }

    pub(crate) fn json(path: &Path, source: serde_json::Error) -> Self {
        IoError::Json { path: path.to_path_buf(), source }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::file(path, e))
}

/// Writes via a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| IoError::file(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| IoError::file(path, e))
}
