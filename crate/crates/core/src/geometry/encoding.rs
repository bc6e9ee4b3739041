//! Positional encodings: modality-native sinusoidal ladders plus a shared
//! MLP over 3D positions. Their element-wise sum is the unified encoding
//! used by memory attention.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    Sinusoidal2d,
    Sinusoidal3d,
    Mlp,
    Composed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosEncoding {
    pub values: DVector<f64>,
    pub kind: EncodingKind,
}

impl PosEncoding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Geometric wavelength ladder: band `k` has wavelength `base · 2^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidLadder {
    pub base_wavelength: f64,
}

impl SinusoidLadder {
    pub const IMAGE: SinusoidLadder = SinusoidLadder { base_wavelength: 32.0 };
    pub const LIDAR: SinusoidLadder = SinusoidLadder { base_wavelength: 2.0 };

    pub fn angular_frequency(&self, band: usize) -> f64 {
        2.0 * PI / (self.base_wavelength * (1u64 << band) as f64)
    }

    /// Axis-major layout: for each axis, for each band, `[sin, cos]`.
    fn encode(&self, coords: &[f64], d: usize) -> DVector<f64> {
        let bands = d / (2 * coords.len());
        let mut out = DVector::zeros(d);
        let mut i = 0;
        for &c in coords {
            for band in 0..bands {
                let phase = c * self.angular_frequency(band);
                out[i] = phase.sin();
                out[i + 1] = phase.cos();
                i += 2;
            }
        }
        out
    }
}

/// 2D sinusoidal encoding of a pixel. `d` must be a positive multiple of 4.
pub fn sinpe2d(u: f64, v: f64, d: usize) -> Result<PosEncoding, GeometryError> {
    sinpe2d_with(&SinusoidLadder::IMAGE, u, v, d)
}

pub fn sinpe2d_with(ladder: &SinusoidLadder, u: f64, v: f64, d: usize) -> Result<PosEncoding, GeometryError> {
    if d == 0 || d % 4 != 0 {
        return Err(GeometryError::EncodingDim { dim: d, multiple_of: 4 });
    }
    Ok(PosEncoding {
        values: ladder.encode(&[u, v], d),
        kind: EncodingKind::Sinusoidal2d,
    })
}

/// 3D sinusoidal encoding of a point. `d` must be a positive multiple of 6.
pub fn sinpe3d(x: f64, y: f64, z: f64, d: usize) -> Result<PosEncoding, GeometryError> {
    sinpe3d_with(&SinusoidLadder::LIDAR, x, y, z, d)
}

pub fn sinpe3d_with(ladder: &SinusoidLadder, x: f64, y: f64, z: f64, d: usize) -> Result<PosEncoding, GeometryError> {
    if d == 0 || d % 6 != 0 {
        return Err(GeometryError::EncodingDim { dim: d, multiple_of: 6 });
    }
    Ok(PosEncoding {
        values: ladder.encode(&[x, y, z], d),
        kind: EncodingKind::Sinusoidal3d,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Untrained feed-forward network `3 → … → d` with `tanh` after every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<DenseLayer>,
    seed: Option<u64>,
}

impl MlpParams {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, GeometryError> {
        let mut fan_in = 3;
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.ncols() != fan_in || layer.bias.len() != layer.weights.nrows() {
                return Err(GeometryError::MlpShape { layer: i });
            }
            fan_in = layer.weights.nrows();
        }
        if layers.is_empty() {
            return Err(GeometryError::MlpShape { layer: 0 });
        }
        Ok(Self { layers, seed: None })
    }

    /// Two hidden layers of width `d` and a `d`-wide output, initialized
    /// uniformly in `±1/√fan_in` from `seed`.
    pub fn seeded(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [3, d, d, d];
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                DenseLayer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..=bound)),
                    bias: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Self { layers, seed: Some(seed) }
    }

    pub fn zeros(d: usize) -> Self {
        let sizes = [3, d, d, d];
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer {
                weights: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Self { layers, seed: None }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.nrows())
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn forward(&self, p: &Vector3<f64>) -> DVector<f64> {
        let mut x = DVector::from_column_slice(p.as_slice());
        for layer in &self.layers {
            x = (&layer.weights * x + &layer.bias).map(f64::tanh);
        }
        x
    }
}

pub fn mlp_embed(points: &[Vector3<f64>], params: &MlpParams) -> Vec<PosEncoding> {
    points
        .iter()
        .map(|p| PosEncoding {
            values: params.forward(p),
            kind: EncodingKind::Mlp,
        })
        .collect()
}

/// Where a token lives: an image pixel (with its lifted 3D position, when
/// known) or a LiDAR point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenPosition {
    Image { u: f64, v: f64, lifted: Option<Vector3<f64>> },
    Lidar(Vector3<f64>),
}

/// Unified multi-modal positional encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Umpe {
    dim: usize,
    mlp: MlpParams,
    pub image_ladder: SinusoidLadder,
    pub lidar_ladder: SinusoidLadder,
    /// Scale applied to the sinusoidal part; `0` disables it.
    pub sin_amplitude: f64,
}

impl Umpe {
    /// `d` must be a multiple of 12 so both sinusoidal layouts fill it exactly.
    pub fn new(mlp: MlpParams) -> Result<Self, GeometryError> {
        let dim = mlp.output_dim();
        if dim == 0 || dim % 12 != 0 {
            return Err(GeometryError::EncodingDim { dim, multiple_of: 12 });
        }
        Ok(Self {
            dim,
            mlp,
            image_ladder: SinusoidLadder::IMAGE,
            lidar_ladder: SinusoidLadder::LIDAR,
            sin_amplitude: 1.0,
        })
    }

    pub fn seeded(d: usize, seed: u64) -> Result<Self, GeometryError> {
        Self::new(MlpParams::seeded(d, seed))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    pub fn sinusoidal(&self, position: &TokenPosition) -> DVector<f64> {
        let raw = match position {
            TokenPosition::Image { u, v, .. } => self.image_ladder.encode(&[*u, *v], self.dim),
            TokenPosition::Lidar(p) => self.lidar_ladder.encode(&[p.x, p.y, p.z], self.dim),
        };
        raw * self.sin_amplitude
    }

    pub fn mlp_part(&self, position: &TokenPosition) -> Result<DVector<f64>, GeometryError> {
        let p = match position {
            TokenPosition::Image { lifted: Some(p), .. } | TokenPosition::Lidar(p) => p,
            TokenPosition::Image { lifted: None, .. } => return Err(GeometryError::MissingLiftedPosition),
        };
        Ok(self.mlp.forward(p))
    }

    pub fn encode(&self, position: &TokenPosition) -> Result<PosEncoding, GeometryError> {
        let mlp = self.mlp_part(position)?;
        Ok(PosEncoding {
            values: self.sinusoidal(position) + mlp,
            kind: EncodingKind::Composed,
        })
    }
}

/// Free-function form of [`Umpe::encode`].
pub fn umpe(position: &TokenPosition, encoder: &Umpe) -> Result<PosEncoding, GeometryError> {
    encoder.encode(position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_input_alternates() {
        let e = sinpe2d(0.0, 0.0, 16).unwrap();
        for pair in e.values.as_slice().chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        let e = sinpe3d(0.0, 0.0, 0.0, 12).unwrap();
        for pair in e.values.as_slice().chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
    }

    #[test]
    fn deterministic() {
        let a = sinpe2d(13.5, 7.25, 32).unwrap();
        let b = sinpe2d(13.5, 7.25, 32).unwrap();
        assert_eq!(a.values.as_slice(), b.values.as_slice());
    }

    #[test]
    fn lowest_band_is_periodic() {
        let ladder = SinusoidLadder::IMAGE;
        let shift = 2.0 * PI / ladder.angular_frequency(0);
        let a = sinpe2d(5.0, 9.0, 16).unwrap();
        let b = sinpe2d(5.0 + shift, 9.0, 16).unwrap();
        // band 0 of axis u is entries [0, 1]
        assert!((a.values[0] - b.values[0]).abs() < 1e-12);
        assert!((a.values[1] - b.values[1]).abs() < 1e-12);
        // slower bands are not periodic with that shift
        assert!((a.values[2] - b.values[2]).abs() > 1e-3 || (a.values[3] - b.values[3]).abs() > 1e-3);
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(sinpe2d(0.0, 0.0, 6).is_err());
        assert!(sinpe2d(0.0, 0.0, 0).is_err());
        assert!(sinpe3d(0.0, 0.0, 0.0, 8).is_err());
    }

    #[test]
    fn axis_permutation_permutes_blocks() {
        let d = 18;
        let block = d / 3;
        let a = sinpe3d(1.0, 2.0, 3.0, d).unwrap();
        let b = sinpe3d(3.0, 1.0, 2.0, d).unwrap();
        // b's x-block encodes 3.0, which is a's z-block
        assert_eq!(b.values.rows(0, block), a.values.rows(2 * block, block));
        assert_eq!(b.values.rows(block, block), a.values.rows(0, block));
        assert_eq!(b.values.rows(2 * block, block), a.values.rows(block, block));
    }

    #[test]
    fn sinpe3d_matches_direct_trig() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 24;
        for _ in 0..10 {
            let p = [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-5.0..5.0)];
            let e = sinpe3d(p[0], p[1], p[2], d).unwrap();
            let bands = d / 6;
            for (axis, c) in p.iter().enumerate() {
                for k in 0..bands {
                    let wavelength = 2.0 * 2f64.powi(k as i32);
                    let phase = 2.0 * PI * c / wavelength;
                    let i = axis * bands * 2 + 2 * k;
                    assert!((e.values[i] - phase.sin()).abs() < 1e-12);
                    assert!((e.values[i + 1] - phase.cos()).abs() < 1e-12);
                }
            }
            assert!(e.values.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn zero_mlp_is_zero() {
        let mlp = MlpParams::zeros(12);
        let out = mlp_embed(&[Vector3::new(3.0, -1.0, 2.0)], &mlp);
        assert!(out[0].values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn seeded_mlp_reproducible() {
        let a = MlpParams::seeded(24, 99);
        let b = MlpParams::seeded(24, 99);
        assert_eq!(a, b);
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(a.forward(&p).as_slice(), b.forward(&p).as_slice());
        assert_ne!(a, MlpParams::seeded(24, 100));
    }

    #[test]
    fn single_layer_hand_evaluation() {
        let w = DMatrix::from_row_slice(2, 3, &[0.5, -0.25, 0.0, 0.1, 0.2, 0.3]);
        let b = DVector::from_vec(vec![0.05, -0.1]);
        let mlp = MlpParams::from_layers(vec![DenseLayer { weights: w, bias: b }]).unwrap();
        let out = mlp.forward(&Vector3::new(1.0, 2.0, 3.0));
        // 0.5 - 0.5 + 0 + 0.05 = 0.05 ; 0.1 + 0.4 + 0.9 - 0.1 = 1.3
        assert!((out[0] - 0.05f64.tanh()).abs() < 1e-15);
        assert!((out[1] - 1.3f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn mlp_shape_mismatch_rejected() {
        let l1 = DenseLayer { weights: DMatrix::zeros(4, 3), bias: DVector::zeros(4) };
        let l2 = DenseLayer { weights: DMatrix::zeros(2, 5), bias: DVector::zeros(2) };
        assert!(matches!(MlpParams::from_layers(vec![l1, l2]), Err(GeometryError::MlpShape { layer: 1 })));
    }

    #[test]
    fn umpe_degenerate_mlp_is_sinusoid() {
        let enc = Umpe::new(MlpParams::zeros(24)).unwrap();
        let p = Vector3::new(1.5, -2.0, 0.3);
        let e = enc.encode(&TokenPosition::Lidar(p)).unwrap();
        assert_eq!(e.values.as_slice(), sinpe3d(p.x, p.y, p.z, 24).unwrap().values.as_slice());
    }

    #[test]
    fn umpe_shares_mlp_across_modalities() {
        let enc = Umpe::seeded(24, 1).unwrap();
        let p = Vector3::new(4.0, 1.0, -0.5);
        let img = TokenPosition::Image { u: 10.0, v: 20.0, lifted: Some(p) };
        let lidar = TokenPosition::Lidar(p);
        assert_eq!(enc.mlp_part(&img).unwrap(), enc.mlp_part(&lidar).unwrap());
        let (ei, el) = (enc.encode(&img).unwrap(), enc.encode(&lidar).unwrap());
        assert_eq!(ei.dim(), 24);
        assert!(ei.values.iter().chain(el.values.iter()).all(|v| v.is_finite()));
        let diff = (ei.values.clone() - enc.sinusoidal(&img)) - (el.values.clone() - enc.sinusoidal(&lidar));
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn umpe_requires_lifted_image_position() {
        let enc = Umpe::seeded(12, 1).unwrap();
        let e = enc.encode(&TokenPosition::Image { u: 1.0, v: 1.0, lifted: None });
        assert!(matches!(e, Err(GeometryError::MissingLiftedPosition)));
        assert!(Umpe::seeded(16, 1).is_err());
    }
}
