use std::collections::{HashMap, VecDeque};

use nalgebra::Vector3;

use super::ProtocolError;
use crate::mask::{Mask2D, PointMask};

/// A corrective click on an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelClick {
    pub u: u32,
    pub v: u32,
    pub positive: bool,
}

/// A corrective click on a LiDAR point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointClick {
    pub index: u32,
    pub positive: bool,
}

fn dt1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let parabola = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
        let mut s = parabola(v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every set pixel to the nearest
/// unset pixel; pixels outside the image count as unset.
pub fn squared_distance_transform(mask: &Mask2D) -> Vec<f64> {
    let (w, h) = (mask.width() as usize + 2, mask.height() as usize + 2);
    let inside = |x: usize, y: usize| x >= 1 && y >= 1 && x <= w - 2 && y <= h - 2 && mask.get(x as u32 - 1, y as u32 - 1);
    let big = 1e18;
    let mut grid: Vec<f64> = (0..w * h).map(|i| if inside(i % w, i / w) { big } else { 0.0 }).collect();
    let n = w.max(h);
    let (mut f, mut out, mut v, mut z) = (vec![0.0; n], vec![0.0; n], vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        dt1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        dt1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    let (mw, mh) = (mask.width() as usize, mask.height() as usize);
    let mut res = vec![0.0; mw * mh];
    for y in 0..mh {
        for x in 0..mw {
            res[y * mw + x] = grid[(y + 1) * w + x + 1];
        }
    }
    res
}

/// 4-connected components, labeled in row-major order of their first pixel.
pub fn connected_components(mask: &Mask2D) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = mask.shape();
    let mut seen = vec![false; w as usize * h as usize];
    let mut comps = Vec::new();
    for (u, v) in mask.pixels() {
        if seen[(v * w + u) as usize] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([(u, v)]);
        seen[(v * w + u) as usize] = true;
        while let Some((x, y)) = queue.pop_front() {
            comp.push((x, y));
            let nbrs = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
            for (nx, ny) in nbrs {
                if nx < w && ny < h && mask.get(nx, ny) && !seen[(ny * w + nx) as usize] {
                    seen[(ny * w + nx) as usize] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        comp.sort_by_key(|(x, y)| (*y, *x));
        comps.push(comp);
    }
    comps
}

fn largest(comps: Vec<Vec<(u32, u32)>>) -> Option<Vec<(u32, u32)>> {
    // max_by_key keeps the last maximum; reverse to keep the first.
    comps.into_iter().rev().max_by_key(|c| c.len())
}

/// Interior-most pixel (maximal distance to the region's outside), ties in
/// row-major order.
fn interior_most(region: &[(u32, u32)], width: u32, height: u32) -> (u32, u32) {
    let mut m = Mask2D::empty(width, height);
    for (u, v) in region {
        m.set(*u, *v, true);
    }
    let dt = squared_distance_transform(&m);
    let mut best = region[0];
    let mut bd = -1.0;
    for &(u, v) in region {
        let d = dt[(v * width + u) as usize];
        if d > bd {
            bd = d;
            best = (u, v);
        }
    }
    best
}

/// Places the next corrective click: inside the largest false-negative
/// region (positive) or the largest false-positive region (negative),
/// whichever is larger (ties: positive). `None` when `pred == gt`.
pub fn sample_click(pred: &Mask2D, gt: &Mask2D) -> Result<Option<PixelClick>, ProtocolError> {
    if gt.is_empty() {
        return Err(ProtocolError::EmptyGroundTruth);
    }
    let fn_mask = gt.and_not(pred)?;
    let fp_mask = pred.and_not(gt)?;
    let fn_region = largest(connected_components(&fn_mask));
    let fp_region = largest(connected_components(&fp_mask));
    let (region, positive) = match (fn_region, fp_region) {
        (None, None) => return Ok(None),
        (Some(a), None) => (a, true),
        (None, Some(b)) => (b, false),
        (Some(a), Some(b)) => {
            if a.len() >= b.len() {
                (a, true)
            } else {
                (b, false)
            }
        }
    };
    let (u, v) = interior_most(&region, gt.width(), gt.height());
    Ok(Some(PixelClick { u, v, positive }))
}

/// Components of `indices` under the radius graph, each sorted by index;
/// components are ordered by their smallest index.
pub fn point_components(indices: &[u32], points: &[Vector3<f64>], radius: f64) -> Vec<Vec<u32>> {
    let cell = |p: &Vector3<f64>| ((p.x / radius).floor() as i64, (p.y / radius).floor() as i64, (p.z / radius).floor() as i64);
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (slot, &i) in indices.iter().enumerate() {
        grid.entry(cell(&points[i as usize])).or_default().push(slot);
    }
    let mut label = vec![usize::MAX; indices.len()];
    let mut comps = Vec::new();
    for start in 0..indices.len() {
        if label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        label[start] = id;
        let mut comp = vec![];
        let mut stack = vec![start];
        while let Some(s) = stack.pop() {
            comp.push(indices[s]);
            let p = points[indices[s] as usize];
            let (cx, cy, cz) = cell(&p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(list) = grid.get(&(cx + dx, cy + dy, cz + dz)) else { continue };
                        for &o in list {
                            if label[o] == usize::MAX && (points[indices[o] as usize] - p).norm() <= radius {
                                label[o] = id;
                                stack.push(o);
                            }
                        }
                    }
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// LiDAR analogue of [`sample_click`]: regions are radius-graph components
/// of the error points, and the click goes to the region point farthest
/// from any scan point outside the region (ties: lowest index).
pub fn sample_point_click(pred: &PointMask, gt: &PointMask, points: &[Vector3<f64>], radius: f64) -> Result<Option<PointClick>, ProtocolError> {
    if gt.is_empty() {
        return Err(ProtocolError::EmptyGroundTruth);
    }
    if let Some(&i) = gt.indices().iter().chain(pred.indices()).find(|i| **i as usize >= points.len()) {
        return Err(ProtocolError::PointIndex { index: i, points: points.len() });
    }
    let fn_idx: Vec<u32> = gt.indices().iter().copied().filter(|i| !pred.contains(*i)).collect();
    let fp_idx: Vec<u32> = pred.indices().iter().copied().filter(|i| !gt.contains(*i)).collect();
    let pick = |idx: &[u32]| point_components(idx, points, radius).into_iter().rev().max_by_key(|c| c.len());
    let (region, positive) = match (pick(&fn_idx), pick(&fp_idx)) {
        (None, None) => return Ok(None),
        (Some(a), None) => (a, true),
        (None, Some(b)) => (b, false),
        (Some(a), Some(b)) => {
            if a.len() >= b.len() {
                (a, true)
            } else {
                (b, false)
            }
        }
    };
    let inside = PointMask::new(region.clone());
    let outside: Vec<&Vector3<f64>> = points.iter().enumerate().filter(|(i, _)| !inside.contains(*i as u32)).map(|(_, p)| p).collect();
    let mut best = (region[0], f64::NEG_INFINITY);
    for &i in &region {
        let p = points[i as usize];
        let d = outside.iter().map(|q| (*q - p).norm_squared()).fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    Ok(Some(PointClick { index: best.0, positive }))
}
