//! Binary image masks, LiDAR point-index masks, and the run-length codec
//! used to store 2D masklets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("run lengths sum to {actual}, expected {expected} ({width}x{height})")]
    RunSum { expected: u64, actual: u64, width: u32, height: u32 },
    #[error("mask data has {actual} pixels, expected {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("mask shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: (u32, u32), b: (u32, u32) },
}

/// Row-major binary image mask. Serializes as its run-length encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "RleMask", try_from = "RleMask")]
pub struct Mask2D {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask2D {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<bool>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(MaskError::DataLength { expected, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn shape(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height && self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, value: bool) {
        let i = v as usize * self.width as usize + u as usize;
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }

    /// Set pixels as `(u, v)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn and(&self, other: &Mask2D) -> Result<Mask2D, MaskError> {
        self.zip(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &Mask2D) -> Result<Mask2D, MaskError> {
        self.zip(other, |a, b| a && !b)
    }

    pub fn or(&self, other: &Mask2D) -> Result<Mask2D, MaskError> {
        self.zip(other, |a, b| a || b)
    }

    fn zip(&self, other: &Mask2D, f: impl Fn(bool, bool) -> bool) -> Result<Mask2D, MaskError> {
        if self.shape() != other.shape() {
            return Err(MaskError::ShapeMismatch { a: self.shape(), b: other.shape() });
        }
        Ok(Mask2D {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// Bounding box `(u_min, v_min, u_max, v_max)`, inclusive.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        self.pixels().fold(None, |acc, (u, v)| {
            Some(match acc {
                None => (u, v, u, v),
                Some((a, b, c, d)) => (a.min(u), b.min(v), c.max(u), d.max(v)),
            })
        })
    }
}

/// LiDAR mask as a sorted, duplicate-free list of point indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointMask(Vec<u32>);

impl PointMask {
    pub fn new(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: u32) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn intersection_len(&self, other: &PointMask) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Row-major run lengths, alternating off/on and starting with an off-run
/// (which may be zero).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl From<Mask2D> for RleMask {
    fn from(m: Mask2D) -> Self {
        rle_encode(&m)
    }
}

impl TryFrom<RleMask> for Mask2D {
    type Error = MaskError;

    fn try_from(r: RleMask) -> Result<Self, MaskError> {
        rle_decode(&r)
    }
}

pub fn rle_encode(mask: &Mask2D) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in mask.data() {
        if b == current {
            run += 1;
        } else {
            counts.push(run);
            current = b;
            run = 1;
        }
    }
    if run > 0 || counts.is_empty() {
        counts.push(run);
    }
    RleMask {
        width: mask.width(),
        height: mask.height(),
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<Mask2D, MaskError> {
    let expected = rle.width as u64 * rle.height as u64;
    let actual: u64 = rle.counts.iter().map(|c| *c as u64).sum();
    if actual != expected {
        return Err(MaskError::RunSum {
            expected,
            actual,
            width: rle.width,
            height: rle.height,
        });
    }
    let mut data = Vec::with_capacity(expected as usize);
    for (i, &c) in rle.counts.iter().enumerate() {
        data.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
    }
    Mask2D::from_data(rle.width, rle.height, data)
}

impl RleMask {
    pub fn decode(&self) -> Result<Mask2D, MaskError> {
        rle_decode(self)
    }

    /// Number of set pixels without decoding.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|c| *c as u64).sum()
    }
}
