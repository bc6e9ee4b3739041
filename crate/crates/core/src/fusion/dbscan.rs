//! DBSCAN over bird's-eye-view voxel centers.
//!
//! Points are processed in a canonical order (lexicographic by coordinates),
//! and a border point reachable from several clusters joins the cluster of
//! its lowest-ranked core neighbor. Both make the labeling independent of
//! input order, cluster ids included.

use std::collections::HashMap;

use super::FusionError;

fn cell(p: &[f64; 2], eps: f64) -> (i64, i64) {
    ((p[0] / eps).floor() as i64, (p[1] / eps).floor() as i64)
}

/// Cluster id per point, or `None` for noise. `min_pts` counts the point
/// itself.
pub fn dbscan_bev(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Result<Vec<Option<u32>>, FusionError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(FusionError::InvalidParameter { name: "eps", value: eps, bound: "> 0" });
    }
    if min_pts == 0 {
        return Err(FusionError::InvalidParameter { name: "min_pts", value: 0.0, bound: ">= 1" });
    }
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
            .then(a.cmp(&b))
    });
    let pts: Vec<[f64; 2]> = order.iter().map(|&i| points[i]).collect();

    let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        cells.entry(cell(p, eps)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        let (cx, cy) = cell(&pts[i], eps);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = cells.get(&(cx + dx, cy + dy)) {
                    for &j in list {
                        let (ax, ay) = (pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
                        if ax * ax + ay * ay <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };
    let hoods: Vec<Vec<usize>> = (0..n).map(neighbors).collect();
    let core: Vec<bool> = hoods.iter().map(|h| h.len() >= min_pts).collect();

    let mut labels: Vec<Option<u32>> = vec![None; n];
    let mut next = 0u32;
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        labels[seed] = Some(next);
        let mut stack = vec![seed];
        while let Some(i) = stack.pop() {
            for &j in &hoods[i] {
                if core[j] && labels[j].is_none() {
                    labels[j] = Some(next);
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = hoods[i].iter().find(|&&j| core[j]).and_then(|&j| labels[j]);
        }
    }

    let mut out = vec![None; n];
    for (rank, &orig) in order.iter().enumerate() {
        out[orig] = labels[rank];
    }
    Ok(out)
}
