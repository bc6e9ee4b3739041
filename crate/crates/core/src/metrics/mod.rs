//! Segmentation metrics (IoU, J&F, NMP), training-loss formulas, dataset
//! statistics, and report rendering.

mod boundary;
mod loss;
mod report;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{Mask2D, MaskError, PointMask};
use crate::types::{Modality, ObjectId};

pub use boundary::{boundary_f, boundary_pixels, boundary_tolerance, BOUNDARY_FRACTION};
pub use loss::{composite_loss, dice_loss, focal_loss, mask_loss, LossTerms, LossWeights};
pub use report::{MetricsReport, ModalityMetrics};
pub use stats::{dataset_stats, DatasetStats, Histogram, StatsInput};

/// Instances below this IoU count as mismatched predictions.
pub const NMP_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("empty track")]
    EmptyTrack,
    #[error("track lengths differ: {pred} predicted vs {gt} ground-truth frames")]
    TrackLength { pred: usize, gt: usize },
    #[error("probability {value} at element {index} is outside {bound}")]
    Probability { index: usize, value: f64, bound: &'static str },
    #[error("{probs} probabilities for {gt} mask elements")]
    Length { probs: usize, gt: usize },
    #[error("record modalities differ between prediction and ground truth")]
    ModalityMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iou {
    pub value: f64,
    /// Both masks were empty; `value` is 1.0 by convention.
    pub both_empty: bool,
}

fn ratio(inter: usize, union: usize) -> Iou {
    if union == 0 {
        Iou { value: 1.0, both_empty: true }
    } else {
        Iou { value: inter as f64 / union as f64, both_empty: false }
    }
}

pub fn iou(pred: &Mask2D, gt: &Mask2D) -> Result<Iou, MetricsError> {
    if pred.shape() != gt.shape() {
        return Err(MaskError::ShapeMismatch { a: pred.shape(), b: gt.shape() }.into());
    }
    let (mut inter, mut union) = (0, 0);
    for (a, b) in pred.data().iter().zip(gt.data()) {
        inter += (*a && *b) as usize;
        union += (*a || *b) as usize;
    }
    Ok(ratio(inter, union))
}

pub fn point_iou(pred: &PointMask, gt: &PointMask) -> Iou {
    let inter = pred.intersection_len(gt);
    ratio(inter, pred.len() + gt.len() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JfScore {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

/// Region similarity J, boundary accuracy F and their mean over a track.
/// `boundary_fraction` sets the match tolerance relative to the image diagonal.
pub fn jf_score(pred: &[Mask2D], gt: &[Mask2D], boundary_fraction: f64) -> Result<JfScore, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::TrackLength { pred: pred.len(), gt: gt.len() });
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptyTrack);
    }
    let (mut j, mut f) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        j += iou(p, g)?.value;
        f += boundary_f(p, g, boundary_tolerance(p.width(), p.height(), boundary_fraction))?;
    }
    let n = gt.len() as f64;
    let (j, f) = (j / n, f / n);
    Ok(JfScore { j, f, jf: (j + f) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", content = "mask", rename_all = "snake_case")]
pub enum EvalMask {
    Image(Mask2D),
    Lidar(PointMask),
}

impl EvalMask {
    pub fn modality(&self) -> Modality {
        match self {
            EvalMask::Image(_) => Modality::Image,
            EvalMask::Lidar(_) => Modality::Lidar,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            EvalMask::Image(m) => m.is_empty(),
            EvalMask::Lidar(m) => m.is_empty(),
        }
    }
}

/// One (object, frame, modality) evaluation instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub object: ObjectId,
    pub frame: usize,
    pub pred: EvalMask,
    pub gt: EvalMask,
}

impl EvalRecord {
    pub fn modality(&self) -> Modality {
        self.gt.modality()
    }

    pub fn gt_present(&self) -> bool {
        !self.gt.is_empty()
    }

    pub fn pred_present(&self) -> bool {
        !self.pred.is_empty()
    }

    pub fn iou(&self) -> Result<Iou, MetricsError> {
        match (&self.pred, &self.gt) {
            (EvalMask::Image(p), EvalMask::Image(g)) => iou(p, g),
            (EvalMask::Lidar(p), EvalMask::Lidar(g)) => Ok(point_iou(p, g)),
            _ => Err(MetricsError::ModalityMismatch),
        }
    }
}

/// Instances with ground truth present and IoU below [`NMP_THRESHOLD`].
pub fn nmp_count(records: &[EvalRecord]) -> Result<usize, MetricsError> {
    let mut n = 0;
    for r in records {
        if r.gt_present() && r.iou()?.value < NMP_THRESHOLD {
            n += 1;
        }
    }
    Ok(n)
}

/// Mean IoU over records whose ground truth is present.
pub fn mean_iou(records: &[EvalRecord]) -> Result<Option<f64>, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in records.iter().filter(|r| r.gt_present()) {
        sum += r.iou()?.value;
        n += 1;
    }
    Ok((n > 0).then(|| sum / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(bits: &[u8]) -> Mask2D {
        Mask2D::from_fn(bits.len() as u32, 1, |u, _| bits[u as usize] == 1)
    }

    #[test]
    fn iou_examples() {
        let a = row(&[1, 1, 0, 0]);
        assert_eq!(iou(&a, &a).unwrap().value, 1.0);
        assert_eq!(iou(&a, &row(&[0, 0, 1, 1])).unwrap().value, 0.0);
        // 6 shared, union 10
        let p = row(&[1, 1, 1, 1, 1, 1, 1, 1, 0, 0]);
        let g = row(&[0, 0, 1, 1, 1, 1, 1, 1, 1, 1]);
        assert!((iou(&p, &g).unwrap().value - 0.6).abs() < 1e-15);
        let e = row(&[0, 0]);
        assert_eq!(iou(&e, &e).unwrap(), Iou { value: 1.0, both_empty: true });
        assert!(iou(&a, &e).is_err());
    }

    #[test]
    fn jf_identity_and_miss() {
        let g = Mask2D::from_fn(20, 20, |u, v| (5..12).contains(&u) && (3..15).contains(&v));
        let s = jf_score(&[g.clone(), g.clone()], &[g.clone(), g.clone()], BOUNDARY_FRACTION).unwrap();
        assert_eq!((s.j, s.f, s.jf), (1.0, 1.0, 1.0));
        let e = Mask2D::empty(20, 20);
        let s = jf_score(&[e.clone()], &[g.clone()], BOUNDARY_FRACTION).unwrap();
        assert_eq!((s.j, s.f, s.jf), (0.0, 0.0, 0.0));
        assert_eq!(jf_score(&[], &[], BOUNDARY_FRACTION), Err(MetricsError::EmptyTrack));
    }

    fn rec(pred: &[u32], gt: &[u32]) -> EvalRecord {
        EvalRecord {
            object: ObjectId(1),
            frame: 0,
            pred: EvalMask::Lidar(PointMask::new(pred.to_vec())),
            gt: EvalMask::Lidar(PointMask::new(gt.to_vec())),
        }
    }

    #[test]
    fn nmp_examples() {
        let gt: Vec<u32> = (0..10).collect();
        assert_eq!(nmp_count(&[rec(&gt, &gt), rec(&gt, &gt)]).unwrap(), 0);
        assert_eq!(nmp_count(&[rec(&[], &gt), rec(&[], &gt), rec(&[], &gt)]).unwrap(), 3);
        // gt absent: never counted
        assert_eq!(nmp_count(&[rec(&[1], &[])]).unwrap(), 0);
    }

    #[test]
    fn nmp_threshold_boundary() {
        // IoU 1/200 = 0.005, 1/50 = 0.02, 0
        let big: Vec<u32> = (0..200).collect();
        let mid: Vec<u32> = (0..50).collect();
        let records = [rec(&[0], &big), rec(&[0], &mid), rec(&[999], &mid)];
        assert_eq!(nmp_count(&records).unwrap(), 2);
        // 99/10000 and 101/10000
        let gt: Vec<u32> = (0..10_000).collect();
        let below: Vec<u32> = (0..99).collect();
        let above: Vec<u32> = (0..101).collect();
        assert_eq!(nmp_count(&[rec(&below, &gt)]).unwrap(), 1);
        assert_eq!(nmp_count(&[rec(&above, &gt)]).unwrap(), 0);
    }

    fn mask_strategy() -> impl Strategy<Value = (Mask2D, Mask2D)> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
                .prop_map(move |(a, b)| (Mask2D::from_data(w, h, a).unwrap(), Mask2D::from_data(w, h, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded((a, b) in mask_strategy()) {
            let x = iou(&a, &b).unwrap();
            prop_assert_eq!(x, iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&x.value));
        }

        #[test]
        fn iou_monotone_under_shared_growth((a, b) in mask_strategy(), extra in any::<u64>()) {
            // Add one element to both masks: IoU never decreases.
            let i = (extra % a.data().len() as u64) as usize;
            let (w, _) = a.shape();
            let (u, v) = (i as u32 % w, i as u32 / w);
            let mut a2 = a.clone();
            let mut b2 = b.clone();
            a2.set(u, v, true);
            b2.set(u, v, true);
            let before = iou(&a, &b).unwrap();
            let after = iou(&a2, &b2).unwrap();
            if !before.both_empty {
                prop_assert!(after.value >= before.value - 1e-15);
            }
        }

        #[test]
        fn jf_is_mean_of_parts((a, b) in mask_strategy()) {
            let s = jf_score(std::slice::from_ref(&a), std::slice::from_ref(&b), BOUNDARY_FRACTION).unwrap();
            prop_assert_eq!(s.jf, (s.j + s.f) / 2.0);
            for x in [s.j, s.f, s.jf] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn nmp_monotone_under_removal(gt in prop::collection::btree_set(0u32..60, 1..40), pred in prop::collection::btree_set(0u32..60, 0..40), drop in any::<u64>()) {
            let pred: Vec<u32> = pred.into_iter().collect();
            let gt: Vec<u32> = gt.into_iter().collect();
            let before = nmp_count(&[rec(&pred, &gt)]).unwrap();
            let mut fewer = pred.clone();
            if !fewer.is_empty() {
                // Removing a predicted element can only lower a true positive count
                // when it is shared; drop a shared one if any.
                let shared: Vec<u32> = fewer.iter().copied().filter(|x| gt.contains(x)).collect();
                if !shared.is_empty() {
                    let x = shared[(drop % shared.len() as u64) as usize];
                    fewer.retain(|y| *y != x);
                }
            }
            let after = nmp_count(&[rec(&fewer, &gt)]).unwrap();
            prop_assert!(after >= before);
        }
    }
}
