use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose};

/// Pinhole intrinsics. Camera axes: +z forward, +x right, +y down.
///
/// Integer pixel coordinates `(u, v)` address pixel centers, so pixel
/// `(u, v)` back-projects through the continuous image point `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(*self))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// `K⁻¹ [u·D, v·D, D]ᵀ`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    /// Unit ray direction through pixel `(u, v)` in camera coordinates.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }
}

/// Per-pixel depth hypotheses for lifting an image into 3D.
#[derive(Debug, Clone, PartialEq)]
pub enum DepthSource {
    /// Row-major `width × height` depth map, meters.
    Map { width: u32, height: u32, values: Vec<f64> },
    /// The same depth ladder applied to every pixel.
    Bins(Vec<f64>),
}

impl DepthSource {
    /// `count` log-spaced bins between `near` and `far` inclusive.
    pub fn log_bins(count: usize, near: f64, far: f64) -> Result<Self, GeometryError> {
        if count == 0 || near <= 0.0 || far < near {
            return Err(GeometryError::InvalidDepth(near.min(far)));
        }
        if count == 1 {
            return Ok(DepthSource::Bins(vec![near]));
        }
        let ratio = (far / near).ln() / (count - 1) as f64;
        Ok(DepthSource::Bins((0..count).map(|i| near * (ratio * i as f64).exp()).collect()))
    }
}

impl Default for DepthSource {
    fn default() -> Self {
        DepthSource::log_bins(8, 1.0, 60.0).expect("static bins")
    }
}

/// Image pixels lifted into the LiDAR frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoPointCloud {
    pub points: Vec<Vector3<f64>>,
    pub pixels: Vec<(f64, f64)>,
    pub depths: Vec<f64>,
}

impl PseudoPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lifts every pixel (times every depth bin) into the LiDAR frame:
/// `x = T_cam→lidar · K⁻¹ · [u·D, v·D, D]ᵀ`.
///
/// Pixels are emitted in row-major order; with depth bins, all bins of a
/// pixel are adjacent.
pub fn lift_pixels(
    intrinsics: &CameraIntrinsics,
    cam_to_lidar: &Pose,
    depth: &DepthSource,
) -> Result<PseudoPointCloud, GeometryError> {
    intrinsics.validate()?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    let per_pixel: usize = match depth {
        DepthSource::Map { width, height, values } => {
            if *width != w || *height != h || values.len() != intrinsics.pixel_count() {
                return Err(GeometryError::DepthShape {
                    expected: (w, h),
                    actual: (*width, *height),
                });
            }
            if let Some(bad) = values.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
                return Err(GeometryError::InvalidDepth(*bad));
            }
            1
        }
        DepthSource::Bins(bins) => {
            if bins.is_empty() {
                return Err(GeometryError::InvalidDepth(0.0));
            }
            if let Some(bad) = bins.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
                return Err(GeometryError::InvalidDepth(*bad));
            }
            bins.len()
        }
    };
    let n = intrinsics.pixel_count() * per_pixel;
    let mut cloud = PseudoPointCloud {
        points: Vec::with_capacity(n),
        pixels: Vec::with_capacity(n),
        depths: Vec::with_capacity(n),
    };
    for v in 0..h {
        for u in 0..w {
            let idx = v as usize * w as usize + u as usize;
            let ds: &[f64] = match depth {
                DepthSource::Map { values, .. } => std::slice::from_ref(&values[idx]),
                DepthSource::Bins(bins) => bins,
            };
            for &d in ds {
                let cam = intrinsics.unproject(u as f64, v as f64, d);
                cloud.points.push(cam_to_lidar.apply(&cam));
                cloud.pixels.push((u as f64, v as f64));
                cloud.depths.push(d);
            }
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 120.0, 2.0, 1.5, 4, 4).unwrap()
    }

    #[test]
    fn principal_point_lifts_onto_axis() {
        let k = CameraIntrinsics::new(200.0, 200.0, 16.0, 12.0, 32, 24).unwrap();
        let depth = DepthSource::Map { width: 32, height: 24, values: vec![5.0; 32 * 24] };
        let cloud = lift_pixels(&k, &Pose::identity(), &depth).unwrap();
        let idx = 12 * 32 + 16;
        assert_eq!(cloud.pixels[idx], (16.0, 12.0));
        assert!((cloud.points[idx] - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-15);
    }

    #[test]
    fn constant_depth_matches_inverse_k() {
        let k = k();
        let kinv = k.matrix().try_inverse().unwrap();
        let depth = DepthSource::Map { width: 4, height: 4, values: vec![2.0; 16] };
        let cloud = lift_pixels(&k, &Pose::identity(), &depth).unwrap();
        assert_eq!(cloud.len(), 16);
        for (p, (u, v)) in cloud.points.iter().zip(&cloud.pixels) {
            let expect = kinv * Vector3::new(u * 2.0, v * 2.0, 2.0);
            assert!((p - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn bins_multiply_points() {
        let bins = DepthSource::log_bins(8, 1.0, 60.0).unwrap();
        let DepthSource::Bins(b) = &bins else { unreachable!() };
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[7] - 60.0).abs() < 1e-9);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        let cloud = lift_pixels(&k(), &Pose::identity(), &bins).unwrap();
        assert_eq!(cloud.len(), 16 * 8);
    }

    #[test]
    fn rejects_bad_depth() {
        let depth = DepthSource::Map { width: 4, height: 4, values: vec![0.0; 16] };
        assert!(matches!(lift_pixels(&k(), &Pose::identity(), &depth), Err(GeometryError::InvalidDepth(_))));
        let depth = DepthSource::Map { width: 3, height: 4, values: vec![1.0; 12] };
        assert!(matches!(lift_pixels(&k(), &Pose::identity(), &depth), Err(GeometryError::DepthShape { .. })));
        assert!(lift_pixels(&k(), &Pose::identity(), &DepthSource::Bins(vec![1.0, -2.0])).is_err());
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraIntrinsics::new(-1.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
    }
}
