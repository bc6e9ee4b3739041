//! Camera pose from 3D–2D correspondences: normalized DLT initialization
//! followed by Levenberg–Marquardt-damped Gauss–Newton on SE(3).

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix6, Rotation3, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose};

const MIN_POINTS: usize = 6;
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("need at least {MIN_POINTS} correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite correspondence at index {0}")]
    NonFinite(usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(Degeneracy),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum Degeneracy {
    #[error("3D points are coincident")]
    CoincidentPoints,
    #[error("linear system is rank deficient (σ₁₁/σ₁ = {0:e}); points may be coplanar or collinear")]
    RankDeficient(f64),
    #[error("recovered pose places the points behind the camera")]
    BehindCamera,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Vector3<f64>,
    /// Pixel coordinates `(u, v)`.
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub world_to_camera: Pose,
    /// Mean pixel distance between observed and reprojected points.
    pub mean_reprojection_error: f64,
    pub iterations: usize,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn residuals(pose: &Pose, corr: &[Correspondence], k: &CameraIntrinsics) -> (f64, Vec<Vector2<f64>>) {
    let mut cost = 0.0;
    let mut r = Vec::with_capacity(corr.len());
    for c in corr {
        let p = pose.apply(&c.world);
        let proj = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
        let e = proj - c.pixel;
        cost += e.norm_squared();
        r.push(e);
    }
    (cost, r)
}

pub fn mean_reprojection_error(pose: &Pose, corr: &[Correspondence], k: &CameraIntrinsics) -> f64 {
    let (_, r) = residuals(pose, corr, k);
    r.iter().map(|e| e.norm()).sum::<f64>() / r.len().max(1) as f64
}

fn dlt(corr: &[Correspondence], k: &CameraIntrinsics) -> Result<Pose, PnpError> {
    let n = corr.len();
    let centroid = corr.iter().map(|c| c.world).sum::<Vector3<f64>>() / n as f64;
    let mean_dist = corr.iter().map(|c| (c.world - centroid).norm()).sum::<f64>() / n as f64;
    if mean_dist < 1e-12 {
        return Err(PnpError::Degenerate(Degeneracy::CoincidentPoints));
    }
    let scale = 3f64.sqrt() / mean_dist;

    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, c) in corr.iter().enumerate() {
        let xw = (c.world - centroid) * scale;
        let x = (c.pixel.x - k.cx) / k.fx;
        let y = (c.pixel.y - k.cy) / k.fy;
        let hom = [xw.x, xw.y, xw.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = hom[j];
            a[(2 * i, 8 + j)] = -x * hom[j];
            a[(2 * i + 1, 4 + j)] = hom[j];
            a[(2 * i + 1, 8 + j)] = -y * hom[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |r: usize| svd.singular_values[order[r]];
    if order.len() < 12 || sv(10) / sv(0) < RANK_TOL {
        let ratio = if order.len() < 12 { 0.0 } else { sv(10) / sv(0) };
        return Err(PnpError::Degenerate(Degeneracy::RankDeficient(ratio)));
    }
    let h: Vec<f64> = v_t.row(order[11]).iter().copied().collect();
    let p_norm = Matrix3x4::from_row_slice(&h);

    // undo the 3D normalization: P = P_norm · [sI, −s·c; 0, 1]
    let m_norm = p_norm.fixed_view::<3, 3>(0, 0).into_owned();
    let mut m = m_norm * scale;
    let mut p4 = p_norm.column(3) - m_norm * centroid * scale;
    if m.determinant() < 0.0 {
        m = -m;
        p4 = -p4;
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    let s = svd.singular_values.mean();
    let pose = Pose::new(r, p4 / s).unwrap_or_else(|_| Pose::identity());
    let front = corr.iter().filter(|c| pose.apply(&c.world).z > 0.0).count();
    if front * 2 < n {
        return Err(PnpError::Degenerate(Degeneracy::BehindCamera));
    }
    Ok(pose)
}

fn refine(mut pose: Pose, corr: &[Correspondence], k: &CameraIntrinsics) -> (Pose, usize) {
    let (mut cost, _) = residuals(&pose, corr, k);
    let mut lambda = 1e-6;
    let mut iterations = 0;
    for it in 0..100 {
        iterations = it + 1;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in corr {
            let p = pose.apply(&c.world);
            let iz = 1.0 / p.z;
            let e = Vector2::new(k.fx * p.x * iz + k.cx, k.fy * p.y * iz + k.cy) - c.pixel;
            let dproj = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz, 0.0, k.fy * iz, -k.fy * p.y * iz * iz);
            let mut dp = nalgebra::Matrix3x6::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&-skew(&p));
            let j = dproj * dp;
            jtj += j.transpose() * j;
            jtr += j.transpose() * e;
        }
        let mut accepted = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for d in 0..6 {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = damped.cholesky().map(|ch| ch.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let rot = Rotation3::from_scaled_axis(Vector3::new(delta[3], delta[4], delta[5]));
            let step = Pose::new(*rot.matrix(), Vector3::new(delta[0], delta[1], delta[2])).unwrap_or_default();
            let candidate = step.compose(&pose).renormalized();
            let (c_cost, _) = residuals(&candidate, corr, k);
            if c_cost <= cost {
                let done = delta.norm() < 1e-15 || (cost - c_cost) <= 1e-30 + 1e-20 * cost;
                pose = candidate;
                cost = c_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if done {
                    return (pose, iterations);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    (pose, iterations)
}

/// Estimates the world-to-camera pose from at least six correspondences.
pub fn solve_pnp(correspondences: &[Correspondence], intrinsics: &CameraIntrinsics) -> Result<PnpSolution, PnpError> {
    if correspondences.len() < MIN_POINTS {
        return Err(PnpError::TooFewPoints(correspondences.len()));
    }
    if let Some(i) = correspondences
        .iter()
        .position(|c| !c.world.iter().chain(c.pixel.iter()).all(|v| v.is_finite()))
    {
        return Err(PnpError::NonFinite(i));
    }
    let init = dlt(correspondences, intrinsics)?;
    let (pose, iterations) = refine(init, correspondences, intrinsics);
    Ok(PnpSolution {
        mean_reprojection_error: mean_reprojection_error(&pose, correspondences, intrinsics),
        world_to_camera: pose,
        iterations,
    })
}
