//! Rigid transforms, pinhole projection, pixel lifting and the unified
//! positional encoding.

mod camera;
mod encoding;
mod pose;

use thiserror::Error;

pub use camera::{lift_pixels, CameraIntrinsics, DepthSource, PseudoPointCloud};
pub use encoding::{
    mlp_embed, sinpe2d, sinpe2d_with, sinpe3d, sinpe3d_with, umpe, DenseLayer, EncodingKind, MlpParams,
    PosEncoding, SinusoidLadder, TokenPosition, Umpe,
};
pub use pose::{se3_apply, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (|RᵀR−I|={orthogonality:e}, det={determinant})")]
    NotARotation { orthogonality: f64, determinant: f64 },
    #[error("last row of homogeneous matrix must be [0, 0, 0, 1]")]
    NotHomogeneous,
    #[error("expected 16 matrix entries, got {0}")]
    MatrixLength(usize),
    #[error("non-finite value in transform")]
    NonFinite,
    #[error("invalid intrinsics {0:?}")]
    InvalidIntrinsics(CameraIntrinsics),
    #[error("depth must be finite and strictly positive, got {0}")]
    InvalidDepth(f64),
    #[error("depth map is {actual:?}, image is {expected:?}")]
    DepthShape { expected: (u32, u32), actual: (u32, u32) },
    #[error("encoding dimension {dim} must be a positive multiple of {multiple_of}")]
    EncodingDim { dim: usize, multiple_of: usize },
    #[error("mlp layer {layer} does not chain with its input")]
    MlpShape { layer: usize },
    #[error("image token needs a lifted 3D position for the shared encoding")]
    MissingLiftedPosition,
}
