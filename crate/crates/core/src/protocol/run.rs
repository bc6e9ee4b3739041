use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::click::{sample_click, sample_point_click};
use super::oracle::{Prediction, SegmenterOracle};
use super::{ObjectTruth, Prompt, PromptKind, PromptPayload, ProtocolError, ProtocolParams, ProtocolResult, ProtocolScene};
use crate::metrics::{iou, point_iou, EvalMask, EvalRecord, MetricsReport};
use crate::types::{Modality, ObjectId};

/// Per-object state after one prompting round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub object: ObjectId,
    pub round: usize,
    pub frame: usize,
    pub clicks: usize,
    /// Worse-modality IoU per frame; `None` where the object is absent.
    pub frame_ious: Vec<Option<f64>>,
}

impl RoundLog {
    pub fn mean_iou_over(&self, frames: &BTreeSet<usize>) -> Option<f64> {
        let vals: Vec<f64> = frames.iter().filter_map(|f| self.frame_ious[*f]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SemiPrompt {
    Click { n: usize },
    Box,
    Mask,
}

fn modality_iou(pred: &Prediction, truth: &ObjectTruth, f: usize, m: Modality) -> Result<Option<f64>, ProtocolError> {
    if !truth.present(f, m) {
        return Ok(None);
    }
    Ok(Some(match m {
        Modality::Image => iou(&pred.image[f], &truth.image[f])?.value,
        Modality::Lidar => point_iou(&pred.lidar[f], &truth.lidar[f]).value,
    }))
}

fn frame_ious(pred: &Prediction, truth: &ObjectTruth) -> Result<Vec<Option<f64>>, ProtocolError> {
    (0..truth.image.len())
        .map(|f| {
            let a = modality_iou(pred, truth, f, Modality::Image)?;
            let b = modality_iou(pred, truth, f, Modality::Lidar)?;
            Ok(match (a, b) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (x, None) | (None, x) => x,
            })
        })
        .collect()
}

struct Session<'a, O: SegmenterOracle> {
    oracle: &'a O,
    scene: &'a ProtocolScene,
    params: &'a ProtocolParams,
    object: ObjectId,
    truth: &'a ObjectTruth,
    prompts: Vec<Prompt>,
    pred: Prediction,
    round: usize,
}

impl<O: SegmenterOracle> Session<'_, O> {
    /// Re-segments and adopts the new masks for frames `>= from`.
    fn resegment(&mut self, from: usize) -> Result<(), ProtocolError> {
        let next = self
            .oracle
            .segment(self.scene, self.object, &self.prompts)
            .map_err(|source| ProtocolError::Oracle { object: self.object, round: self.round, source })?;
        for f in from..self.scene.frame_count() {
            self.pred.image[f] = next.image[f].clone();
            self.pred.lidar[f] = next.lidar[f].clone();
        }
        Ok(())
    }

    /// One corrective click in `m` at `frame`; false when already exact.
    fn click(&mut self, frame: usize, m: Modality, from: usize) -> Result<bool, ProtocolError> {
        let prompt = match m {
            Modality::Image => sample_click(&self.pred.image[frame], &self.truth.image[frame])?.map(|c| Prompt {
                object: self.object,
                modality: m,
                kind: if c.positive { PromptKind::PositiveClick } else { PromptKind::NegativeClick },
                frame,
                payload: PromptPayload::Pixel { u: c.u, v: c.v },
            }),
            Modality::Lidar => sample_point_click(
                &self.pred.lidar[frame],
                &self.truth.lidar[frame],
                &self.scene.scans[frame],
                self.params.lidar_click_radius,
            )?
            .map(|c| Prompt {
                object: self.object,
                modality: m,
                kind: if c.positive { PromptKind::PositiveClick } else { PromptKind::NegativeClick },
                frame,
                payload: PromptPayload::Point { index: c.index },
            }),
        };
        let Some(p) = prompt else { return Ok(false) };
        self.prompts.push(p);
        self.resegment(from)?;
        Ok(true)
    }

    fn present_modalities(&self, frame: usize) -> Vec<Modality> {
        [Modality::Image, Modality::Lidar].into_iter().filter(|m| self.truth.present(frame, *m)).collect()
    }

    /// `n` clicks in every modality where the object is present.
    fn initial_clicks(&mut self, frame: usize, n: usize, from: usize) -> Result<usize, ProtocolError> {
        let mut placed = 0;
        for m in self.present_modalities(frame) {
            for _ in 0..n {
                if !self.click(frame, m, from)? {
                    break;
                }
                placed += 1;
            }
        }
        Ok(placed)
    }

    /// `n` clicks, each on the modality with the lower current IoU (ties: image).
    fn corrective_clicks(&mut self, frame: usize, n: usize, from: usize) -> Result<usize, ProtocolError> {
        let mut placed = 0;
        for _ in 0..n {
            let img = modality_iou(&self.pred, self.truth, frame, Modality::Image)?;
            let lid = modality_iou(&self.pred, self.truth, frame, Modality::Lidar)?;
            let m = match (img, lid) {
                (Some(a), Some(b)) if b < a => Modality::Lidar,
                (None, Some(_)) => Modality::Lidar,
                (None, None) => break,
                _ => Modality::Image,
            };
            if !self.click(frame, m, from)? {
                break;
            }
            placed += 1;
        }
        Ok(placed)
    }

    fn log(&self, frame: usize, clicks: usize) -> Result<RoundLog, ProtocolError> {
        Ok(RoundLog { object: self.object, round: self.round, frame, clicks, frame_ious: frame_ious(&self.pred, self.truth)? })
    }
}

struct Outcome {
    prompts: Vec<Prompt>,
    rounds: Vec<RoundLog>,
    prompted: BTreeSet<usize>,
    pred: Prediction,
}

fn run_objects<O: SegmenterOracle>(
    name: &str,
    oracle: &O,
    scene: &ProtocolScene,
    objects: &[ObjectId],
    params: &ProtocolParams,
    mut per_object: impl FnMut(&mut Session<'_, O>, usize) -> Result<(Vec<RoundLog>, BTreeSet<usize>), ProtocolError>,
) -> Result<ProtocolResult, ProtocolError> {
    scene.validate()?;
    if params.frame_budget == 0 {
        return Err(ProtocolError::InvalidBudget);
    }
    let mut outcomes: BTreeMap<ObjectId, Outcome> = BTreeMap::new();
    for &object in objects {
        let truth = scene
            .objects
            .get(&object)
            .ok_or_else(|| ProtocolError::InvalidScene(format!("unknown object {object}")))?;
        let mut s = Session { oracle, scene, params, object, truth, prompts: vec![], pred: Prediction::empty(scene), round: 1 };
        let (rounds, prompted) = match truth.first_frame() {
            Some(first) => per_object(&mut s, first)?,
            None => (vec![], BTreeSet::new()),
        };
        outcomes.insert(object, Outcome { prompts: s.prompts, rounds, prompted, pred: s.pred });
    }
    let mut records = Vec::new();
    for (object, o) in &outcomes {
        let truth = &scene.objects[object];
        for f in 0..scene.frame_count() {
            if truth.present(f, Modality::Image) {
                records.push(EvalRecord {
                    object: *object,
                    frame: f,
                    pred: EvalMask::Image(o.pred.image[f].clone()),
                    gt: EvalMask::Image(truth.image[f].clone()),
                });
            }
            if truth.present(f, Modality::Lidar) {
                records.push(EvalRecord {
                    object: *object,
                    frame: f,
                    pred: EvalMask::Lidar(o.pred.lidar[f].clone()),
                    gt: EvalMask::Lidar(truth.lidar[f].clone()),
                });
            }
        }
    }
    let report = MetricsReport::from_records(name, &records, params.boundary_fraction)?;
    Ok(ProtocolResult {
        protocol: name.to_string(),
        params: *params,
        prompts: outcomes.values().flat_map(|o| o.prompts.clone()).collect(),
        rounds: outcomes.values().flat_map(|o| o.rounds.clone()).collect(),
        prompted_frames: outcomes.iter().map(|(id, o)| (*id, o.prompted.iter().copied().collect())).collect(),
        report,
        records,
    })
}

/// Round 1 prompts each object's first frame; every later round prompts the
/// frame with the lowest IoU (ties: earliest) until the frame budget is used
/// or every frame is exact.
pub fn run_offline<O: SegmenterOracle>(
    oracle: &O,
    scene: &ProtocolScene,
    objects: &[ObjectId],
    params: &ProtocolParams,
) -> Result<ProtocolResult, ProtocolError> {
    let n = params.clicks_per_prompt;
    run_objects("offline", oracle, scene, objects, params, |s, first| {
        let clicks = s.initial_clicks(first, n, 0)?;
        let mut rounds = vec![s.log(first, clicks)?];
        let mut prompted = BTreeSet::from([first]);
        for round in 2..=params.frame_budget {
            s.round = round;
            let ious = frame_ious(&s.pred, s.truth)?;
            let worst = ious
                .iter()
                .enumerate()
                .filter_map(|(f, x)| x.map(|x| (f, x)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let Some((frame, value)) = worst else { break };
            if value >= 1.0 {
                break;
            }
            let clicks = s.corrective_clicks(frame, n, 0)?;
            prompted.insert(frame);
            rounds.push(s.log(frame, clicks)?);
        }
        Ok((rounds, prompted))
    })
}

/// Single streaming pass: a frame whose IoU is below the threshold gets
/// corrective clicks while budget remains; re-segmentation only revises
/// the current and later frames.
pub fn run_online<O: SegmenterOracle>(
    oracle: &O,
    scene: &ProtocolScene,
    objects: &[ObjectId],
    params: &ProtocolParams,
) -> Result<ProtocolResult, ProtocolError> {
    let n = params.clicks_per_prompt;
    run_objects("online", oracle, scene, objects, params, |s, first| {
        let clicks = s.initial_clicks(first, n, 0)?;
        let mut rounds = vec![s.log(first, clicks)?];
        let mut prompted = BTreeSet::from([first]);
        for f in first + 1..s.scene.frame_count() {
            if prompted.len() >= params.frame_budget {
                break;
            }
            let img = modality_iou(&s.pred, s.truth, f, Modality::Image)?;
            let lid = modality_iou(&s.pred, s.truth, f, Modality::Lidar)?;
            let Some(worst) = [img, lid].into_iter().flatten().reduce(f64::min) else { continue };
            if worst < params.iou_threshold {
                s.round += 1;
                let clicks = s.corrective_clicks(f, n, f)?;
                prompted.insert(f);
                rounds.push(s.log(f, clicks)?);
            }
        }
        Ok((rounds, prompted))
    })
}

/// Prompts only each object's first frame, in every modality where it is
/// present, then propagates once.
pub fn run_semisupervised<O: SegmenterOracle>(
    oracle: &O,
    scene: &ProtocolScene,
    objects: &[ObjectId],
    prompt: SemiPrompt,
    params: &ProtocolParams,
) -> Result<ProtocolResult, ProtocolError> {
    let name = match prompt {
        SemiPrompt::Click { n } => format!("semi-supervised {n}-click"),
        SemiPrompt::Box => "semi-supervised box".to_string(),
        SemiPrompt::Mask => "semi-supervised mask".to_string(),
    };
    run_objects(&name, oracle, scene, objects, params, |s, first| {
        let clicks = match prompt {
            SemiPrompt::Click { n } => s.initial_clicks(first, n, 0)?,
            SemiPrompt::Box | SemiPrompt::Mask => {
                let mut placed = 0;
                for m in s.present_modalities(first) {
                    s.prompts.push(region_prompt(s.scene, s.truth, s.object, first, m, prompt));
                    placed += 1;
                }
                s.resegment(0)?;
                placed
            }
        };
        Ok((vec![s.log(first, clicks)?], BTreeSet::from([first])))
    })
}

fn region_prompt(scene: &ProtocolScene, truth: &ObjectTruth, object: ObjectId, frame: usize, m: Modality, kind: SemiPrompt) -> Prompt {
    let payload = match (kind, m) {
        (SemiPrompt::Mask, Modality::Image) => PromptPayload::Mask { mask: EvalMask::Image(truth.image[frame].clone()) },
        (SemiPrompt::Mask, Modality::Lidar) => PromptPayload::Mask { mask: EvalMask::Lidar(truth.lidar[frame].clone()) },
        (_, Modality::Image) => {
            let (u0, v0, u1, v1) = truth.image[frame].bounding_box().expect("present");
            PromptPayload::PixelBox { min: [u0, v0], max: [u1, v1] }
        }
        (_, Modality::Lidar) => {
            let pts = &scene.scans[frame];
            let mut min = [f64::INFINITY; 3];
            let mut max = [f64::NEG_INFINITY; 3];
            for &i in truth.lidar[frame].indices() {
                for a in 0..3 {
                    min[a] = min[a].min(pts[i as usize][a]);
                    max[a] = max[a].max(pts[i as usize][a]);
                }
            }
            PromptPayload::PointBox { min, max }
        }
    };
    Prompt {
        object,
        modality: m,
        kind: if kind == SemiPrompt::Mask { PromptKind::Mask } else { PromptKind::Box },
        frame,
        payload,
    }
}

/// Re-runs the oracle on a recorded prompt log.
pub fn replay<O: SegmenterOracle>(
    oracle: &O,
    scene: &ProtocolScene,
    prompts: &[Prompt],
) -> Result<BTreeMap<ObjectId, Prediction>, ProtocolError> {
    let mut by_object: BTreeMap<ObjectId, Vec<Prompt>> = BTreeMap::new();
    for p in prompts {
        p.validate(scene)?;
        by_object.entry(p.object).or_default().push(p.clone());
    }
    by_object
        .into_iter()
        .map(|(object, ps)| {
            let pred = oracle.segment(scene, object, &ps).map_err(|source| ProtocolError::Oracle { object, round: 0, source })?;
            Ok((object, pred))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::tests::toy_scene;
    use crate::protocol::{Corruption, EmptyOracle, NoisyGtOracle, PerfectOracle};

    fn ids(scene: &ProtocolScene) -> Vec<ObjectId> {
        scene.objects.keys().copied().collect()
    }

    fn params(budget: usize) -> ProtocolParams {
        ProtocolParams { frame_budget: budget, lidar_click_radius: 0.15, ..Default::default() }
    }

    #[test]
    fn perfect_oracle_everywhere() {
        let scene = toy_scene(8);
        let objs = ids(&scene);
        let results = [
            run_offline(&PerfectOracle, &scene, &objs, &params(4)).unwrap(),
            run_online(&PerfectOracle, &scene, &objs, &params(4)).unwrap(),
            run_semisupervised(&PerfectOracle, &scene, &objs, SemiPrompt::Mask, &params(4)).unwrap(),
        ];
        for r in &results {
            assert_eq!(r.report.image.miou, Some(1.0));
            assert_eq!(r.report.lidar.miou, Some(1.0));
            assert_eq!(r.report.image.jf, Some(1.0));
            assert_eq!(r.report.image.nmp + r.report.lidar.nmp, 0);
            assert_eq!(r.prompted_frames[&ObjectId(1)], vec![0]);
            assert_eq!(r.prompted_frames[&ObjectId(2)], vec![1]);
        }
    }

    #[test]
    fn budget_one_prompts_once() {
        let scene = toy_scene(8);
        let r = run_offline(&EmptyOracle, &scene, &ids(&scene), &params(1)).unwrap();
        assert!(r.prompted_frames.values().all(|v| v.len() == 1));
        assert!(matches!(run_offline(&EmptyOracle, &scene, &ids(&scene), &params(0)), Err(ProtocolError::InvalidBudget)));
    }

    #[test]
    fn empty_oracle_online_exhausts_budget() {
        let scene = toy_scene(8);
        let r = run_online(&EmptyOracle, &scene, &ids(&scene), &params(5)).unwrap();
        assert_eq!(r.prompted_frames[&ObjectId(1)], vec![0, 1, 2, 3, 4]);
        assert_eq!(r.prompted_frames[&ObjectId(2)], vec![1, 2, 3, 4, 5]);
        // first frame: 3 clicks per present modality; later: 3 corrective clicks
        let obj1 = r.prompts.iter().filter(|p| p.object == ObjectId(1)).count();
        assert_eq!(obj1, 6 + 4 * 3);
        for p in &r.prompts {
            p.validate(&scene).unwrap();
        }
    }

    #[test]
    fn online_hand_trace_with_drop_oracle() {
        let scene = toy_scene(10);
        let oracle = NoisyGtOracle::new(11, 0.4, 1).with_corruptions(&[Corruption::Drop]);
        let dropped: Vec<usize> = (0..10).filter(|f| oracle.corruption_at(ObjectId(1), *f).is_some()).collect();
        let r = run_online(&oracle, &scene, &[ObjectId(1)], &params(10)).unwrap();
        // Dropped frames have IoU 0 and get prompted; the first frame always is.
        let mut expect: BTreeSet<usize> = dropped.into_iter().collect();
        expect.insert(0);
        assert_eq!(r.prompted_frames[&ObjectId(1)], expect.into_iter().collect::<Vec<_>>());
        assert_eq!(r.report.image.miou, Some(1.0));
    }

    #[test]
    fn offline_monotone_under_noisy_oracle() {
        let scene = toy_scene(12);
        let oracle = NoisyGtOracle::new(5, 0.6, 1);
        let r = run_offline(&oracle, &scene, &ids(&scene), &params(6)).unwrap();
        for object in ids(&scene) {
            let rounds: Vec<&RoundLog> = r.rounds.iter().filter(|l| l.object == object).collect();
            let mut prompted = BTreeSet::new();
            for w in rounds.windows(2) {
                prompted.insert(w[0].frame);
                let before = w[0].mean_iou_over(&prompted).unwrap();
                let after = w[1].mean_iou_over(&prompted).unwrap();
                assert!(after >= before);
            }
            // Selection picks a minimal-IoU frame.
            for w in rounds.windows(2) {
                let min = w[0].frame_ious.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
                assert_eq!(w[0].frame_ious[w[1].frame], Some(min));
            }
        }
    }

    #[test]
    fn semisupervised_matches_drop_expectation() {
        let frames = 3000;
        let scene = toy_scene(frames);
        let p = 0.1;
        let oracle = NoisyGtOracle::new(9, p, 1).with_corruptions(&[Corruption::Drop]);
        let r = run_semisupervised(&oracle, &scene, &[ObjectId(1)], SemiPrompt::Click { n: 1 }, &params(1)).unwrap();
        // Prompted frame is exact; every other frame is dropped with prob p.
        let expect = (1.0 + (frames as f64 - 1.0) * (1.0 - p)) / frames as f64;
        let got = r.report.image.miou.unwrap();
        assert!((got - expect).abs() < 0.02, "{got} vs {expect}");
    }

    #[test]
    fn absent_modality_contributes_no_records() {
        let scene = toy_scene(4);
        let r = run_semisupervised(&PerfectOracle, &scene, &[ObjectId(2)], SemiPrompt::Box, &params(1)).unwrap();
        assert_eq!(r.report.lidar.instances, 0);
        assert_eq!(r.report.lidar.miou, None);
        assert!(r.prompts.iter().all(|p| p.modality == Modality::Image && p.kind == PromptKind::Box));
    }

    #[test]
    fn replay_reproduces_prediction() {
        let scene = toy_scene(6);
        let oracle = NoisyGtOracle::new(3, 0.5, 1);
        let r = run_offline(&oracle, &scene, &ids(&scene), &params(3)).unwrap();
        let json = serde_json::to_string(&r.prompts).unwrap();
        let prompts: Vec<Prompt> = serde_json::from_str(&json).unwrap();
        let preds = replay(&oracle, &scene, &prompts).unwrap();
        for rec in &r.records {
            let pred = &preds[&rec.object];
            match &rec.pred {
                EvalMask::Image(m) => assert_eq!(m, &pred.image[rec.frame]),
                EvalMask::Lidar(m) => assert_eq!(m, &pred.lidar[rec.frame]),
            }
        }
    }
}
