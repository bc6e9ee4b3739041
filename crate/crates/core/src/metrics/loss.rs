use serde::{Deserialize, Serialize};

use super::MetricsError;

fn check_len(probs: &[f64], gt: &[bool]) -> Result<(), MetricsError> {
    if probs.len() != gt.len() {
        return Err(MetricsError::Length { probs: probs.len(), gt: gt.len() });
    }
    Ok(())
}

/// Mean focal loss `-α_t (1 - p_t)^γ ln p_t`, where `α_t = α` on positives
/// and `1 - α` on negatives.
pub fn focal_loss(probs: &[f64], gt: &[bool], gamma: f64, alpha: f64) -> Result<f64, MetricsError> {
    check_len(probs, gt)?;
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (i, (&p, &g)) in probs.iter().zip(gt).enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(MetricsError::Probability { index: i, value: p, bound: "(0, 1)" });
        }
        let (pt, at) = if g { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
        sum += -at * (1.0 - pt).powf(gamma) * pt.ln();
    }
    Ok(sum / probs.len() as f64)
}

/// `1 - (2 Σ p·g + 1) / (Σ p + Σ g + 1)`.
pub fn dice_loss(probs: &[f64], gt: &[bool]) -> Result<f64, MetricsError> {
    check_len(probs, gt)?;
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (i, (&p, &g)) in probs.iter().zip(gt).enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(MetricsError::Probability { index: i, value: p, bound: "[0, 1]" });
        }
        let g = g as u8 as f64;
        inter += p * g;
        sp += p;
        sg += g;
    }
    Ok(1.0 - (2.0 * inter + 1.0) / (sp + sg + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub focal: f64,
    pub dice: f64,
    pub iou: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { focal: 20.0, dice: 1.0, iou: 1.0, gamma: 2.0, alpha: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub focal: f64,
    pub dice: f64,
    /// |predicted IoU − IoU of the thresholded prediction|.
    pub iou_mae: f64,
}

pub fn composite_loss(terms: &LossTerms, w: &LossWeights) -> f64 {
    w.focal * terms.focal + w.dice * terms.dice + w.iou * terms.iou_mae
}

/// All three loss terms for one mask; the prediction is thresholded at 0.5
/// for the IoU target.
pub fn mask_loss(probs: &[f64], gt: &[bool], predicted_iou: f64, w: &LossWeights) -> Result<LossTerms, MetricsError> {
    let focal = focal_loss(probs, gt, w.gamma, w.alpha)?;
    let dice = dice_loss(probs, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in probs.iter().zip(gt) {
        let b = p > 0.5;
        inter += (b && g) as usize;
        union += (b || g) as usize;
    }
    let actual = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok(LossTerms { focal, dice, iou_mae: (predicted_iou - actual).abs() })
}
