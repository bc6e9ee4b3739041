//! Motion-aware cross-modal memory attention: intra-modal self-attention,
//! cross-modal attention, and temporal attention over an ego-motion
//! compensated memory bank.

use nalgebra::{DMatrix, DVector};

use super::attention::attend_multihead;
use super::bank::{MemoryBank, MemoryEntry, ModalMemory};
use super::MemoryError;
use crate::geometry::{Pose, TokenPosition, Umpe};
use crate::types::Modality;

/// Tokens of one modality with their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub modality: Modality,
    /// `N_tok × d`
    pub tokens: DMatrix<f64>,
    pub positions: Vec<TokenPosition>,
}

impl FeatureMap {
    pub fn new(modality: Modality, tokens: DMatrix<f64>, positions: Vec<TokenPosition>) -> Result<Self, MemoryError> {
        if tokens.nrows() != positions.len() {
            return Err(MemoryError::PositionCount {
                tokens: tokens.nrows(),
                positions: positions.len(),
            });
        }
        if !tokens.iter().all(|v| v.is_finite()) {
            return Err(MemoryError::NonFinite);
        }
        for p in &positions {
            let ok = matches!(
                (modality, p),
                (Modality::Image, TokenPosition::Image { .. }) | (Modality::Lidar, TokenPosition::Lidar(_))
            );
            if !ok {
                return Err(MemoryError::PositionModality(modality));
            }
        }
        Ok(Self { modality, tokens, positions })
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

fn transform_position(p: &TokenPosition, motion: &Pose) -> TokenPosition {
    match p {
        TokenPosition::Image { u, v, lifted } => TokenPosition::Image {
            u: *u,
            v: *v,
            lifted: lifted.map(|x| motion.apply(&x)),
        },
        TokenPosition::Lidar(x) => TokenPosition::Lidar(motion.apply(x)),
    }
}

/// Positional encodings (`N × d`) for `positions`, after applying `motion`.
pub fn encode_positions(positions: &[TokenPosition], encoder: &Umpe, motion: Option<&Pose>) -> Result<DMatrix<f64>, MemoryError> {
    let mut out = DMatrix::zeros(positions.len(), encoder.dim());
    for (i, p) in positions.iter().enumerate() {
        let p = motion.map_or(*p, |m| transform_position(p, m));
        out.row_mut(i).copy_from(&encoder.encode(&p)?.values.transpose());
    }
    Ok(out)
}

fn check_pe(fm: &FeatureMap, pe: &DMatrix<f64>) -> Result<(), MemoryError> {
    if pe.shape() != fm.tokens.shape() {
        return Err(MemoryError::EncodingShape {
            tokens: fm.tokens.shape(),
            encodings: pe.shape(),
        });
    }
    Ok(())
}

/// `attend(F+P, F+P, F+P)`; positions are carried through.
pub fn self_attend(fm: &FeatureMap, pe: &DMatrix<f64>, heads: usize) -> Result<FeatureMap, MemoryError> {
    check_pe(fm, pe)?;
    let x = &fm.tokens + pe;
    Ok(FeatureMap {
        modality: fm.modality,
        tokens: attend_multihead(&x, &x, &x, heads)?,
        positions: fm.positions.clone(),
    })
}

/// `attend(target, source+P, source+P)`.
pub fn cross_attend_modal(
    target: &FeatureMap,
    source: &FeatureMap,
    source_pe: &DMatrix<f64>,
    heads: usize,
) -> Result<FeatureMap, MemoryError> {
    check_pe(source, source_pe)?;
    if target.dim() != source.dim() {
        return Err(MemoryError::DimMismatch {
            expected: target.dim(),
            actual: source.dim(),
        });
    }
    let kv = &source.tokens + source_pe;
    Ok(FeatureMap {
        modality: target.modality,
        tokens: attend_multihead(&target.tokens, &kv, &kv, heads)?,
        positions: target.positions.clone(),
    })
}

/// Memory features re-expressed in the current frame:
/// `M + Φ(T_{t←t'} · x)`, per modality. The entry is not modified.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatedMemory {
    pub image: DMatrix<f64>,
    pub lidar: DMatrix<f64>,
}

impl CompensatedMemory {
    pub fn get(&self, modality: Modality) -> &DMatrix<f64> {
        match modality {
            Modality::Image => &self.image,
            Modality::Lidar => &self.lidar,
        }
    }
}

fn compensate_modal(m: &ModalMemory, motion: &Pose, encoder: &Umpe) -> Result<DMatrix<f64>, MemoryError> {
    if m.features.nrows() != m.positions.len() {
        return Err(MemoryError::PositionCount {
            tokens: m.features.nrows(),
            positions: m.positions.len(),
        });
    }
    Ok(&m.features + encode_positions(&m.positions, encoder, Some(motion))?)
}

pub fn compensate_memory(entry: &MemoryEntry, ego_motion: &Pose, encoder: &Umpe) -> Result<CompensatedMemory, MemoryError> {
    Ok(CompensatedMemory {
        image: compensate_modal(&entry.image, ego_motion, encoder)?,
        lidar: compensate_modal(&entry.lidar, ego_motion, encoder)?,
    })
}

/// Keys/values for temporal attention: every entry's compensated tokens of
/// `modality` followed by its summary token, in `bank.entries()` order.
pub fn memory_keys(
    modality: Modality,
    bank: &MemoryBank,
    ego_motions: &[Pose],
    encoder: &Umpe,
) -> Result<DMatrix<f64>, MemoryError> {
    if ego_motions.len() != bank.len() {
        return Err(MemoryError::MotionCount {
            entries: bank.len(),
            motions: ego_motions.len(),
        });
    }
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for (entry, motion) in bank.entries().zip(ego_motions) {
        let modal = match modality {
            Modality::Image => &entry.image,
            Modality::Lidar => &entry.lidar,
        };
        let comp = compensate_modal(modal, motion, encoder)?;
        rows.extend(comp.row_iter().map(|r| r.transpose()));
        rows.push(modal.summary.clone());
    }
    let d = encoder.dim();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(MemoryError::DimMismatch { expected: d, actual: bad.len() });
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// Cross-attends current tokens to the compensated memory. An empty bank
/// returns the input unchanged.
pub fn temporal_attend(
    current: &FeatureMap,
    bank: &MemoryBank,
    ego_motions: &[Pose],
    encoder: &Umpe,
    heads: usize,
) -> Result<FeatureMap, MemoryError> {
    if bank.is_empty() {
        if !ego_motions.is_empty() {
            return Err(MemoryError::MotionCount { entries: 0, motions: ego_motions.len() });
        }
        return Ok(current.clone());
    }
    let kv = memory_keys(current.modality, bank, ego_motions, encoder)?;
    Ok(FeatureMap {
        modality: current.modality,
        tokens: attend_multihead(&current.tokens, &kv, &kv, heads)?,
        positions: current.positions.clone(),
    })
}

/// Mean of the token rows selected by `mask`; zeros when nothing is selected.
pub fn summarize(features: &DMatrix<f64>, mask: &[bool]) -> DVector<f64> {
    let mut sum = DVector::zeros(features.ncols());
    let mut n = 0usize;
    for (row, &m) in features.row_iter().zip(mask) {
        if m {
            sum += row.transpose();
            n += 1;
        }
    }
    if n > 0 {
        sum / n as f64
    } else {
        sum
    }
}

/// One full attention pass over a frame's image and LiDAR tokens.
#[derive(Debug, Clone)]
pub struct Mcma {
    pub encoder: Umpe,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmaOutput {
    pub image: FeatureMap,
    pub lidar: FeatureMap,
}

impl Mcma {
    pub fn new(encoder: Umpe) -> Self {
        Self { encoder, heads: 1 }
    }

    /// Self-attention, then symmetric cross-modal attention, then temporal
    /// attention over `bank` (one ego motion per entry).
    pub fn forward(
        &self,
        image: &FeatureMap,
        lidar: &FeatureMap,
        bank: &MemoryBank,
        ego_motions: &[Pose],
    ) -> Result<McmaOutput, MemoryError> {
        let pe_img = encode_positions(&image.positions, &self.encoder, None)?;
        let pe_lidar = encode_positions(&lidar.positions, &self.encoder, None)?;
        let img1 = self_attend(image, &pe_img, self.heads)?;
        let lidar1 = self_attend(lidar, &pe_lidar, self.heads)?;
        let img2 = cross_attend_modal(&img1, &lidar1, &pe_lidar, self.heads)?;
        let lidar2 = cross_attend_modal(&lidar1, &img1, &pe_img, self.heads)?;
        Ok(McmaOutput {
            image: temporal_attend(&img2, bank, ego_motions, &self.encoder, self.heads)?,
            lidar: temporal_attend(&lidar2, bank, ego_motions, &self.encoder, self.heads)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MlpParams, SinusoidLadder};
    use crate::memory::attention::attend;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: usize = 12;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn lidar_positions(rng: &mut ChaCha8Rng, n: usize) -> Vec<TokenPosition> {
        (0..n)
            .map(|_| TokenPosition::Lidar(Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..2.0))))
            .collect()
    }

    fn image_positions(rng: &mut ChaCha8Rng, n: usize) -> Vec<TokenPosition> {
        (0..n)
            .map(|_| TokenPosition::Image {
                u: rng.random_range(0.0..64.0),
                v: rng.random_range(0.0..48.0),
                lifted: Some(Vector3::new(rng.random_range(1.0..30.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..2.0))),
            })
            .collect()
    }

    fn entry(rng: &mut ChaCha8Rng, frame: usize, prompted: bool) -> MemoryEntry {
        let img_feats = rand_matrix(rng, 3, D);
        let lidar_feats = rand_matrix(rng, 4, D);
        MemoryEntry {
            frame,
            prompted,
            image: ModalMemory {
                summary: summarize(&img_feats, &[true, true, false]),
                features: img_feats,
                positions: image_positions(rng, 3),
            },
            lidar: ModalMemory {
                summary: summarize(&lidar_feats, &[true; 4]),
                features: lidar_feats,
                positions: lidar_positions(rng, 4),
            },
        }
    }

    #[test]
    fn self_attend_single_token_passthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fm = FeatureMap::new(Modality::Lidar, rand_matrix(&mut rng, 1, D), lidar_positions(&mut rng, 1)).unwrap();
        let pe = rand_matrix(&mut rng, 1, D);
        let out = self_attend(&fm, &pe, 1).unwrap();
        assert!((out.tokens - (&fm.tokens + &pe)).amax() < 1e-15);
        assert_eq!(out.positions, fm.positions);
    }

    #[test]
    fn self_attend_identical_tokens_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row = rand_matrix(&mut rng, 1, D);
        let tokens = DMatrix::from_fn(2, D, |_, j| row[(0, j)]);
        let pe = DMatrix::from_fn(2, D, |_, j| (j as f64).sin());
        let fm = FeatureMap::new(Modality::Lidar, tokens, lidar_positions(&mut rng, 2)).unwrap();
        let out = self_attend(&fm, &pe, 1).unwrap();
        assert_eq!(out.tokens.row(0), out.tokens.row(1));
    }

    #[test]
    fn self_attend_matches_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fm = FeatureMap::new(Modality::Lidar, rand_matrix(&mut rng, 4, D), lidar_positions(&mut rng, 4)).unwrap();
        let pe = rand_matrix(&mut rng, 4, D);
        let x = &fm.tokens + &pe;
        assert_eq!(self_attend(&fm, &pe, 1).unwrap().tokens, attend(&x, &x, &x).unwrap());
        assert!(matches!(self_attend(&fm, &rand_matrix(&mut rng, 3, D), 1), Err(MemoryError::EncodingShape { .. })));
    }

    #[test]
    fn cross_attend_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = FeatureMap::new(Modality::Image, rand_matrix(&mut rng, 3, D), image_positions(&mut rng, 3)).unwrap();
        let lidar = FeatureMap::new(Modality::Lidar, rand_matrix(&mut rng, 5, D), lidar_positions(&mut rng, 5)).unwrap();
        let pe = rand_matrix(&mut rng, 5, D);
        let out = cross_attend_modal(&img, &lidar, &pe, 1).unwrap();
        let kv = &lidar.tokens + &pe;
        assert_eq!(out.tokens, attend(&img.tokens, &kv, &kv).unwrap());
        assert_eq!(out.modality, Modality::Image);

        let one = FeatureMap::new(Modality::Lidar, rand_matrix(&mut rng, 1, D), lidar_positions(&mut rng, 1)).unwrap();
        let pe1 = rand_matrix(&mut rng, 1, D);
        let out = cross_attend_modal(&img, &one, &pe1, 1).unwrap();
        let v = &one.tokens + &pe1;
        for r in 0..3 {
            assert!((out.tokens.row(r) - v.row(0)).amax() < 1e-15);
        }

        let wide = FeatureMap::new(Modality::Lidar, rand_matrix(&mut rng, 2, D + 1), lidar_positions(&mut rng, 2)).unwrap();
        assert!(cross_attend_modal(&img, &wide, &DMatrix::zeros(2, D + 1), 1).is_err());
        let empty = FeatureMap::new(Modality::Lidar, DMatrix::zeros(0, D), vec![]).unwrap();
        assert!(matches!(cross_attend_modal(&img, &empty, &DMatrix::zeros(0, D), 1), Err(MemoryError::EmptyKeys)));
    }

    #[test]
    fn compensation_identity_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Umpe::seeded(D, 9).unwrap();
        let e = entry(&mut rng, 0, false);
        let comp = compensate_memory(&e, &Pose::identity(), &enc).unwrap();
        let pe = encode_positions(&e.lidar.positions, &enc, None).unwrap();
        assert_eq!(comp.lidar, &e.lidar.features + pe);
    }

    #[test]
    fn compensation_translation_shifts_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let enc = Umpe::seeded(D, 9).unwrap();
        let e = entry(&mut rng, 0, false);
        let shift = Vector3::new(10.0, 0.0, 0.0);
        let comp = compensate_memory(&e, &Pose::from_translation(shift), &enc).unwrap();
        let moved: Vec<_> = e
            .lidar
            .positions
            .iter()
            .map(|p| match p {
                TokenPosition::Lidar(x) => TokenPosition::Lidar(x + shift),
                _ => unreachable!(),
            })
            .collect();
        let expect = &e.lidar.features + encode_positions(&moved, &enc, None).unwrap();
        assert!((&comp.lidar - expect).amax() < 1e-12);
        let still = compensate_memory(&e, &Pose::identity(), &enc).unwrap();
        assert!((comp.lidar - still.lidar).amax() > 1e-3);
    }

    #[test]
    fn degenerate_encoding_compensation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut enc = Umpe::new(MlpParams::zeros(D)).unwrap();
        enc.sin_amplitude = 0.0;
        let e = entry(&mut rng, 0, false);
        let motion = Pose::from_yaw(0.4, Vector3::new(3.0, -1.0, 0.2));
        let comp = compensate_memory(&e, &motion, &enc).unwrap();
        assert_eq!(comp.image, e.image.features);
        assert_eq!(comp.lidar, e.lidar.features);
    }

    #[test]
    fn landmark_lands_in_one_frame() {
        // A static landmark observed from two past ego poses maps to the same
        // current-frame point once each entry's motion is applied.
        let world_from = |p: Pose| p;
        let ego = [Pose::from_yaw(0.1, Vector3::new(0.0, 0.0, 0.0)), Pose::from_yaw(-0.2, Vector3::new(4.0, 1.0, 0.0))];
        let current = Pose::from_yaw(0.3, Vector3::new(9.0, 2.0, 0.0));
        let landmark = Vector3::new(20.0, 5.0, 1.0);
        let mut seen = Vec::new();
        for e in ego {
            let local = world_from(e).inverse().apply(&landmark);
            let motion = current.inverse().compose(&e);
            seen.push(motion.apply(&local));
        }
        assert!((seen[0] - seen[1]).norm() < 1e-9);
        let mlp_enc = Umpe::seeded(D, 2).unwrap();
        let a = mlp_enc.mlp_part(&TokenPosition::Lidar(seen[0])).unwrap();
        let b = mlp_enc.mlp_part(&TokenPosition::Lidar(seen[1])).unwrap();
        assert!((a - b).amax() < 1e-9);
    }

    #[test]
    fn temporal_empty_bank_passthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let enc = Umpe::seeded(D, 9).unwrap();
        let fm = FeatureMap::new(Modality::Lidar, rand_matrix(&mut rng, 4, D), lidar_positions(&mut rng, 4)).unwrap();
        let out = temporal_attend(&fm, &MemoryBank::new(3, 2), &[], &enc, 1).unwrap();
        assert_eq!(out, fm);
    }

    #[test]
    fn temporal_single_entry_matches_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = Umpe::seeded(D, 9).unwrap();
        let e = entry(&mut rng, 0, true);
        let mut bank = MemoryBank::new(3, 2);
        bank.push(e.clone());
        let fm = FeatureMap::new(Modality::Image, rand_matrix(&mut rng, 2, D), image_positions(&mut rng, 2)).unwrap();
        let out = temporal_attend(&fm, &bank, &[Pose::identity()], &enc, 1).unwrap();
        let comp = compensate_memory(&e, &Pose::identity(), &enc).unwrap().image;
        let kv = DMatrix::from_fn(comp.nrows() + 1, D, |i, j| if i < comp.nrows() { comp[(i, j)] } else { e.image.summary[j] });
        assert_eq!(out.tokens, attend(&fm.tokens, &kv, &kv).unwrap());
        assert!(matches!(temporal_attend(&fm, &bank, &[], &enc, 1), Err(MemoryError::MotionCount { .. })));
    }

    #[test]
    fn temporal_entry_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let enc = Umpe::seeded(D, 3).unwrap();
        let entries: Vec<_> = (0..4).map(|f| entry(&mut rng, f, false)).collect();
        let motions: Vec<_> = (0..4).map(|f| Pose::from_yaw(0.05 * f as f64, Vector3::new(f as f64, 0.0, 0.0))).collect();
        let fm = FeatureMap::new(Modality::Lidar, rand_matrix(&mut rng, 5, D), lidar_positions(&mut rng, 5)).unwrap();
        let mut a = MemoryBank::new(6, 2);
        let mut b = MemoryBank::new(6, 2);
        let order = [2, 0, 3, 1];
        for e in &entries {
            a.push(e.clone());
        }
        for &i in &order {
            b.push(entries[i].clone());
        }
        let mb: Vec<_> = order.iter().map(|&i| motions[i]).collect();
        let oa = temporal_attend(&fm, &a, &motions, &enc, 1).unwrap();
        let ob = temporal_attend(&fm, &b, &mb, &enc, 1).unwrap();
        assert!((oa.tokens - ob.tokens).amax() < 1e-9);
    }

    #[test]
    fn full_pass_empty_bank_is_self_then_cross() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut enc = Umpe::seeded(D, 4).unwrap();
        enc.image_ladder = SinusoidLadder { base_wavelength: 16.0 };
        let mcma = Mcma::new(enc.clone());
        let img = FeatureMap::new(Modality::Image, rand_matrix(&mut rng, 3, D), image_positions(&mut rng, 3)).unwrap();
        let lidar = FeatureMap::new(Modality::Lidar, rand_matrix(&mut rng, 6, D), lidar_positions(&mut rng, 6)).unwrap();
        let out = mcma.forward(&img, &lidar, &MemoryBank::new(2, 1), &[]).unwrap();
        let pi = encode_positions(&img.positions, &enc, None).unwrap();
        let pl = encode_positions(&lidar.positions, &enc, None).unwrap();
        let i1 = self_attend(&img, &pi, 1).unwrap();
        let l1 = self_attend(&lidar, &pl, 1).unwrap();
        assert_eq!(out.image, cross_attend_modal(&i1, &l1, &pl, 1).unwrap());
        assert_eq!(out.lidar, cross_attend_modal(&l1, &i1, &pi, 1).unwrap());
    }

    #[test]
    fn feature_map_validation() {
        assert!(FeatureMap::new(Modality::Lidar, DMatrix::zeros(2, D), vec![TokenPosition::Lidar(Vector3::zeros())]).is_err());
        assert!(matches!(
            FeatureMap::new(Modality::Image, DMatrix::zeros(1, D), vec![TokenPosition::Lidar(Vector3::zeros())]),
            Err(MemoryError::PositionModality(Modality::Image))
        ));
    }
}
