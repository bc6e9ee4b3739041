use super::MetricsError;
use crate::mask::{Mask2D, MaskError};

/// Boundary match tolerance as a fraction of the image diagonal.
pub const BOUNDARY_FRACTION: f64 = 0.008;

/// Tolerance in pixels: `ceil(fraction * diagonal)`.
pub fn boundary_tolerance(width: u32, height: u32, fraction: f64) -> u32 {
    let diag = (width as f64).hypot(height as f64);
    (fraction * diag).ceil().max(0.0) as u32
}

/// Set pixels with at least one 4-neighbor outside the mask (the image
/// border counts as outside).
pub fn boundary_pixels(mask: &Mask2D) -> Mask2D {
    let (w, h) = mask.shape();
    Mask2D::from_fn(w, h, |u, v| {
        mask.get(u, v)
            && (u == 0 || v == 0 || !mask.get(u - 1, v) || !mask.get(u + 1, v) || !mask.get(u, v - 1) || !mask.get(u, v + 1))
    })
}

/// Fraction of `from` pixels with a `to` pixel within Euclidean distance `tol`.
fn matched_fraction(from: &Mask2D, to: &Mask2D, disk: &[(i64, i64)]) -> f64 {
    let (w, h) = (to.width() as i64, to.height() as i64);
    let (mut hit, mut n) = (0usize, 0usize);
    for (u, v) in from.pixels() {
        n += 1;
        let found = disk.iter().any(|(dx, dy)| {
            let (x, y) = (u as i64 + dx, v as i64 + dy);
            x >= 0 && y >= 0 && x < w && y < h && to.get(x as u32, y as u32)
        });
        hit += found as usize;
    }
    hit as f64 / n as f64
}

/// Boundary F-measure between two masks with match tolerance `tol` pixels.
/// Two empty boundaries score 1; exactly one empty boundary scores 0.
pub fn boundary_f(pred: &Mask2D, gt: &Mask2D, tol: u32) -> Result<f64, MetricsError> {
    if pred.shape() != gt.shape() {
        return Err(MaskError::ShapeMismatch { a: pred.shape(), b: gt.shape() }.into());
    }
    let pb = boundary_pixels(pred);
    let gb = boundary_pixels(gt);
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let t = tol as i64;
    let disk: Vec<(i64, i64)> = (-t..=t)
        .flat_map(|dy| (-t..=t).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= t * t)
        .collect();
    let precision = matched_fraction(&pb, &gb, &disk);
    let recall = matched_fraction(&gb, &pb, &disk);
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}


#[cfg(test)]
mod tests {
    use super::oracle::brute_boundary_f;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tolerance_rounds_up() {
        // diagonal of 640x480 is 800 -> 6.4 -> 7
        assert_eq!(boundary_tolerance(640, 480, BOUNDARY_FRACTION), 7);
        assert_eq!(boundary_tolerance(30, 40, BOUNDARY_FRACTION), 1);
    }

    #[test]
    fn square_boundary_is_ring() {
        let m = Mask2D::from_fn(6, 6, |u, v| (1..5).contains(&u) && (1..5).contains(&v));
        assert_eq!(boundary_pixels(&m).count(), 12);
    }

    #[test]
    fn shifted_box_within_tolerance() {
        let g = Mask2D::from_fn(40, 40, |u, v| (10..30).contains(&u) && (10..30).contains(&v));
        let p = Mask2D::from_fn(40, 40, |u, v| (11..31).contains(&u) && (10..30).contains(&v));
        assert_eq!(boundary_f(&p, &g, 1).unwrap(), 1.0);
        assert!(boundary_f(&p, &g, 0).unwrap() < 1.0);
    }

    #[test]
    fn matches_brute_force_on_random_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let (w, h) = (rng.random_range(5..30), rng.random_range(5..30));
            let blob = |rng: &mut ChaCha8Rng| {
                let (cx, cy, r) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), rng.random_range(1.0..8.0));
                let noise: f64 = rng.random_range(0.0..0.3);
                let mut m = Mask2D::from_fn(w, h, |u, v| (u as f64 - cx).hypot(v as f64 - cy) < r);
                for v in 0..h {
                    for u in 0..w {
                        if rng.random_bool(noise / 4.0) {
                            m.set(u, v, !m.get(u, v));
                        }
                    }
                }
                m
            };
            let (p, g) = (blob(&mut rng), blob(&mut rng));
            let tol = rng.random_range(0..4);
            let fast = boundary_f(&p, &g, tol).unwrap();
            let slow = brute_boundary_f(&p, &g, tol);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }
}
