use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rigid transform in SE(3): `p' = R p + t`.
///
/// Poses are named by what they map, e.g. a `cam_to_lidar` pose takes camera
/// coordinates to LiDAR coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotARotation { orthogonality: ortho, determinant: det });
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about +z by `yaw` radians followed by translation `t`.
    pub fn from_yaw(yaw: f64, t: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: t,
        }
    }

    /// Rotation given as a scaled axis (axis * angle).
    pub fn from_scaled_axis(axis_angle: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_scaled_axis(axis_angle).matrix(),
            translation: t,
        }
    }

    /// Parses a row-major homogeneous 4x4 matrix.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self, GeometryError> {
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > ORTHONORMAL_TOL) {
            return Err(GeometryError::NotHomogeneous);
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Re-orthonormalizes the rotation after accumulated numerical drift.
    pub(crate) fn renormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Pose {
            rotation: r,
            translation: self.translation,
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Applies `pose` to every point, preserving order.
pub fn se3_apply(pose: &Pose, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points.iter().map(|p| pose.apply(p)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct PoseRepr(Vec<f64>);

impl TryFrom<PoseRepr> for Pose {
    type Error = GeometryError;

    fn try_from(value: PoseRepr) -> Result<Self, Self::Error> {
        let m: [f64; 16] = value
            .0
            .try_into()
            .map_err(|v: Vec<f64>| GeometryError::MatrixLength(v.len()))?;
        Pose::from_row_major(&m)
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr(p.to_row_major().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        Pose::from_scaled_axis(axis * 2.0, t)
    }

    #[test]
    fn identity_leaves_points() {
        let out = se3_apply(&Pose::identity(), &[Vector3::new(1.0, 2.0, 3.0)]);
        assert_eq!(out, vec![Vector3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn yaw_quarter_turn() {
        let out = se3_apply(&Pose::from_yaw(FRAC_PI_2, Vector3::zeros()), &[Vector3::x()]);
        assert!((out[0] - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn matches_homogeneous_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pose = random_pose(&mut rng);
        let m = pose.to_homogeneous();
        let points: Vec<_> = (0..100)
            .map(|_| Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        for (p, q) in points.iter().zip(se3_apply(&pose, &points)) {
            let h = m * p.push(1.0);
            assert!((h.xyz() - q).amax() < 1e-12);
        }
    }

    #[test]
    fn group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let lhs = (a * b) * c;
            let rhs = a * (b * c);
            assert!((lhs.to_homogeneous() - rhs.to_homogeneous()).amax() < 1e-9);
            let id = a * a.inverse();
            assert!((id.to_homogeneous() - Matrix4::identity()).amax() < 1e-9);
            let back = a.inverse().inverse();
            assert!((back.to_homogeneous() - a.to_homogeneous()).amax() < 1e-9);
        }
    }

    #[test]
    fn rejects_reflection_and_bad_rows() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(Pose::new(reflect, Vector3::zeros()), Err(GeometryError::NotARotation { .. })));
        let mut m = Pose::identity().to_row_major();
        m[14] = 0.5;
        assert!(matches!(Pose::from_row_major(&m), Err(GeometryError::NotHomogeneous)));
    }

    #[test]
    fn row_major_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        let q = Pose::from_row_major(&p.to_row_major()).unwrap();
        assert_eq!(p, q);
        let json = serde_json::to_string(&p).unwrap();
        let r: Pose = serde_json::from_str(&json).unwrap();
        assert_eq!(p, r);
    }
}
