use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{jf_score, mean_iou, nmp_count, EvalMask, EvalRecord, MetricsError};
use crate::mask::Mask2D;
use crate::types::{Modality, ObjectId};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModalityMetrics {
    /// Instances with ground truth present.
    pub instances: usize,
    pub miou: Option<f64>,
    /// Image only: J&F averaged over object tracks.
    pub jf: Option<f64>,
    pub nmp: usize,
}

/// Per-modality results: one row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub image: ModalityMetrics,
    pub lidar: ModalityMetrics,
}

impl MetricsReport {
    pub fn from_records(name: &str, records: &[EvalRecord], boundary_fraction: f64) -> Result<Self, MetricsError> {
        let mut out = MetricsReport { name: name.to_string(), image: Default::default(), lidar: Default::default() };
        for modality in [Modality::Image, Modality::Lidar] {
            let subset: Vec<EvalRecord> = records.iter().filter(|r| r.modality() == modality).cloned().collect();
            let m = ModalityMetrics {
                instances: subset.iter().filter(|r| r.gt_present()).count(),
                miou: mean_iou(&subset)?,
                jf: None,
                nmp: nmp_count(&subset)?,
            };
            match modality {
                Modality::Image => out.image = m,
                Modality::Lidar => out.lidar = m,
            }
        }
        let mut tracks: BTreeMap<ObjectId, Vec<(usize, &Mask2D, &Mask2D)>> = BTreeMap::new();
        for r in records {
            if let (EvalMask::Image(p), EvalMask::Image(g)) = (&r.pred, &r.gt) {
                tracks.entry(r.object).or_default().push((r.frame, p, g));
            }
        }
        let mut jf = Vec::new();
        for (_, mut t) in tracks {
            if t.iter().all(|(_, _, g)| g.is_empty()) {
                continue;
            }
            t.sort_by_key(|(f, _, _)| *f);
            let pred: Vec<Mask2D> = t.iter().map(|(_, p, _)| (*p).clone()).collect();
            let gt: Vec<Mask2D> = t.iter().map(|(_, _, g)| (*g).clone()).collect();
            jf.push(jf_score(&pred, &gt, boundary_fraction)?.jf);
        }
        if !jf.is_empty() {
            out.image.jf = Some(jf.iter().sum::<f64>() / jf.len() as f64);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table, one row per report.
    pub fn table(reports: &[MetricsReport]) -> String {
        let header = ["name", "img mIoU", "img J&F", "img NMP", "lidar mIoU", "lidar NMP"];
        let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let rows: Vec<[String; 6]> = reports
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    pct(r.image.miou),
                    pct(r.image.jf),
                    r.image.nmp.to_string(),
                    pct(r.lidar.miou),
                    r.lidar.nmp.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = String::new();
        let line = |s: &mut String, cells: &[&str]| {
            for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.push('\n');
        };
        line(&mut s, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut s, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for row in &rows {
            line(&mut s, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        s
    }
}
