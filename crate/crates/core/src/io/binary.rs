//! Little-endian binary formats: LiDAR scans, voxel grids, pixel-voxel
//! tables and voxel masklets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::IoError;
use crate::fusion::{MaskletSource, VoteRecord, VoxelMasklet, VoxelRef};
use crate::recon::{GridFrame, PixelHit, PixelVoxelTable, SparseVoxelGrid, TableSlice, VoxelKey};
use crate::types::{CameraId, MaskletId, ObjectId};

pub const GRID_MAGIC: &[u8; 4] = b"M4DG";
pub const TABLE_MAGIC: &[u8; 4] = b"M4DT";
pub const MASKLET_MAGIC: &[u8; 4] = b"M4DV";
const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], IoError> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(IoError::Format { what: self.what, message: format!("truncated at byte {}", self.pos) });
        }
        let out = self.buf[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn i32(&mut self) -> Result<i32, IoError> {
        Ok(i32::from_le_bytes(self.take()?))
    }
    fn i64(&mut self) -> Result<i64, IoError> {
        Ok(i64::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f32(&mut self) -> Result<f32, IoError> {
        Ok(f32::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(), IoError> {
        if &self.take::<4>()? != magic {
            return Err(IoError::Format { what: self.what, message: "bad magic".into() });
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(IoError::Format { what: self.what, message: format!("unsupported version {v}") });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), IoError> {
        if self.pos != self.buf.len() {
            return Err(IoError::Format { what: self.what, message: format!("{} trailing bytes", self.buf.len() - self.pos) });
        }
        Ok(())
    }

    /// Guards length prefixes against absurd allocations.
    fn count(&mut self, min_item_bytes: usize) -> Result<usize, IoError> {
        let n = self.u64()? as usize;
        if n.saturating_mul(min_item_bytes) > self.buf.len() - self.pos {
            return Err(IoError::Format { what: self.what, message: format!("count {n} exceeds remaining data") });
        }
        Ok(n)
    }
}

fn put_frame(out: &mut Vec<u8>, g: GridFrame) {
    match g {
        GridFrame::World => {
            out.push(0);
            out.extend_from_slice(&0u32.to_le_bytes());
        }
        GridFrame::Body(id) => {
            out.push(1);
            out.extend_from_slice(&id.0.to_le_bytes());
        }
    }
}

fn get_frame(r: &mut Reader<'_>) -> Result<GridFrame, IoError> {
    let tag = r.u8()?;
    let id = r.u32()?;
    match tag {
        0 => Ok(GridFrame::World),
        1 => Ok(GridFrame::Body(ObjectId(id))),
        t => Err(IoError::Format { what: r.what, message: format!("bad grid tag {t}") }),
    }
}

fn put_key(out: &mut Vec<u8>, k: VoxelKey) {
    for a in [k.0, k.1, k.2] {
        out.extend_from_slice(&a.to_le_bytes());
    }
}

fn get_key(r: &mut Reader<'_>) -> Result<VoxelKey, IoError> {
    Ok(VoxelKey(r.i32()?, r.i32()?, r.i32()?))
}

/// `u32` point count, then `count` little-endian `f32` xyz triples.
pub fn encode_scan(points: &[Vector3<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 12 * points.len());
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for c in p.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_scan(buf: &[u8]) -> Result<Vec<Vector3<f64>>, IoError> {
    let mut r = Reader::new(buf, "lidar scan");
    let n = r.u32()? as usize;
    if buf.len() != 4 + 12 * n {
        return Err(IoError::Format { what: "lidar scan", message: format!("header says {n} points but file has {} bytes", buf.len()) });
    }
    (0..n).map(|_| Ok(Vector3::new(r.f32()? as f64, r.f32()? as f64, r.f32()? as f64))).collect()
}

pub fn write_scan(path: &Path, points: &[Vector3<f64>]) -> Result<(), IoError> {
    super::write_file(path, &encode_scan(points))
}

pub fn read_scan(path: &Path) -> Result<Vec<Vector3<f64>>, IoError> {
    decode_scan(&super::read_file(path)?)
}

/// Magic, version, frame tag, voxel size, then voxels sorted by key.
pub fn encode_grid(g: &SparseVoxelGrid) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_frame(&mut out, g.frame());
    out.extend_from_slice(&g.voxel_size().to_le_bytes());
    let voxels = g.sorted();
    out.extend_from_slice(&(voxels.len() as u64).to_le_bytes());
    for (k, w) in voxels {
        put_key(&mut out, k);
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_grid(buf: &[u8]) -> Result<SparseVoxelGrid, IoError> {
    let mut r = Reader::new(buf, "voxel grid");
    r.header(GRID_MAGIC)?;
    let frame = get_frame(&mut r)?;
    let size = r.f64()?;
    let mut g = SparseVoxelGrid::new(size, frame).map_err(|e| IoError::Format { what: "voxel grid", message: e.to_string() })?;
    let n = r.count(16)?;
    for _ in 0..n {
        let k = get_key(&mut r)?;
        let w = r.u32()?;
        if w == 0 {
            return Err(IoError::Format { what: "voxel grid", message: format!("zero weight at {k}") });
        }
        g.add_weight(k, w);
    }
    r.finish()?;
    Ok(g)
}

/// Human-readable dump: a header line, then `x y z weight` per voxel.
pub fn grid_text_dump(g: &SparseVoxelGrid) -> String {
    let frame = match g.frame() {
        GridFrame::World => "world".to_string(),
        GridFrame::Body(id) => format!("body {id}"),
    };
    let mut s = format!("# frame {frame} voxel_size {} voxels {}\n", g.voxel_size(), g.len());
    for (k, w) in g.sorted() {
        let _ = writeln!(s, "{} {} {} {w}", k.0, k.1, k.2);
    }
    s
}

pub fn encode_table(t: &PixelVoxelTable) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TABLE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.slices.len() as u64).to_le_bytes());
    for ((cam, frame), s) in &t.slices {
        out.extend_from_slice(&cam.0.to_le_bytes());
        out.extend_from_slice(&(*frame as u64).to_le_bytes());
        out.extend_from_slice(&s.width.to_le_bytes());
        out.extend_from_slice(&s.height.to_le_bytes());
        for h in &s.hits {
            match h {
                None => out.push(0),
                Some(h) => {
                    out.push(1);
                    put_frame(&mut out, h.grid);
                    put_key(&mut out, h.key);
                    out.extend_from_slice(&h.distance.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn decode_table(buf: &[u8]) -> Result<PixelVoxelTable, IoError> {
    let mut r = Reader::new(buf, "pixel-voxel table");
    r.header(TABLE_MAGIC)?;
    let n = r.count(20)?;
    let mut t = PixelVoxelTable::default();
    for _ in 0..n {
        let cam = CameraId(r.u32()?);
        let frame = r.u64()? as usize;
        let (w, h) = (r.u32()?, r.u32()?);
        let pixels = w as usize * h as usize;
        if pixels > buf.len() - r.pos {
            return Err(IoError::Format { what: r.what, message: format!("{w}x{h} slice exceeds remaining data") });
        }
        let mut hits = Vec::with_capacity(pixels);
        for _ in 0..pixels {
            hits.push(match r.u8()? {
                0 => None,
                1 => Some(PixelHit { grid: get_frame(&mut r)?, key: get_key(&mut r)?, distance: r.f64()? }),
                x => return Err(IoError::Format { what: r.what, message: format!("bad hit tag {x}") }),
            });
        }
        t.insert(cam, frame, TableSlice { width: w, height: h, hits });
    }
    r.finish()?;
    Ok(t)
}

pub fn encode_voxel_masklets(ms: &[VoxelMasklet]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MASKLET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ms.len() as u64).to_le_bytes());
    for m in ms {
        out.extend_from_slice(&m.id.0.to_le_bytes());
        out.extend_from_slice(&m.anchor_frame.map_or(-1i64, |f| f as i64).to_le_bytes());
        out.extend_from_slice(&(m.sources.len() as u64).to_le_bytes());
        for s in &m.sources {
            out.extend_from_slice(&s.camera.0.to_le_bytes());
            out.extend_from_slice(&s.track.0.to_le_bytes());
        }
        out.extend_from_slice(&(m.voxels.len() as u64).to_le_bytes());
        for (v, rec) in &m.voxels {
            put_frame(&mut out, v.grid);
            put_key(&mut out, v.key);
            out.extend_from_slice(&rec.votes.to_le_bytes());
            out.extend_from_slice(&rec.observations.to_le_bytes());
        }
    }
    out
}

pub fn decode_voxel_masklets(buf: &[u8]) -> Result<Vec<VoxelMasklet>, IoError> {
    let mut r = Reader::new(buf, "voxel masklets");
    r.header(MASKLET_MAGIC)?;
    let n = r.count(28)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = MaskletId(r.u32()?);
        let anchor = r.i64()?;
        let ns = r.count(8)?;
        let sources = (0..ns)
            .map(|_| Ok(MaskletSource { camera: CameraId(r.u32()?), track: MaskletId(r.u32()?) }))
            .collect::<Result<Vec<_>, IoError>>()?;
        let nv = r.count(25)?;
        let mut voxels = BTreeMap::new();
        for _ in 0..nv {
            let v = VoxelRef { grid: get_frame(&mut r)?, key: get_key(&mut r)? };
            voxels.insert(v, VoteRecord { votes: r.u32()?, observations: r.u32()? });
        }
        out.push(VoxelMasklet { id, sources, anchor_frame: (anchor >= 0).then_some(anchor as usize), voxels });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scan_layout_is_bit_exact() {
        let b = encode_scan(&[Vector3::new(1.0, -2.0, 0.5)]);
        let mut want = 1u32.to_le_bytes().to_vec();
        for c in [1.0f32, -2.0, 0.5] {
            want.extend_from_slice(&c.to_le_bytes());
        }
        assert_eq!(b, want);
        assert!(decode_scan(&b[..b.len() - 1]).is_err());
        assert_eq!(decode_scan(&b).unwrap(), vec![Vector3::new(1.0, -2.0, 0.5)]);
    }

    #[test]
    fn grid_round_trip_and_dump() {
        let mut g = SparseVoxelGrid::new(0.1, GridFrame::Body(ObjectId(3))).unwrap();
        g.add_weight(VoxelKey(1, -2, 3), 4);
        g.add_weight(VoxelKey(0, 0, 0), 1);
        let b = encode_grid(&g);
        assert_eq!(&b[..4], GRID_MAGIC);
        assert_eq!(decode_grid(&b).unwrap(), g);
        assert_eq!(grid_text_dump(&g), "# frame body 3 voxel_size 0.1 voxels 2\n0 0 0 1\n1 -2 3 4\n");
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_grid(&bad).is_err());
        bad = b.clone();
        bad.push(0);
        assert!(decode_grid(&bad).is_err());
    }

    #[test]
    fn table_round_trip() {
        let mut s = TableSlice::empty(3, 2);
        s.hits[4] = Some(PixelHit { grid: GridFrame::World, key: VoxelKey(5, 6, 7), distance: 12.25 });
        let mut t = PixelVoxelTable::default();
        t.insert(CameraId(2), 9, s);
        assert_eq!(decode_table(&encode_table(&t)).unwrap(), t);
    }

    proptest! {
        #[test]
        fn voxel_masklets_round_trip(
            ms in prop::collection::vec(
                (any::<u32>(), prop::option::of(0usize..1000), prop::collection::vec((any::<u32>(), any::<u32>()), 0..3),
                 prop::collection::btree_map((prop::option::of(any::<u32>()), any::<(i32, i32, i32)>()), (any::<u32>(), any::<u32>()), 0..20)),
                0..4)
        ) {
            let ms: Vec<VoxelMasklet> = ms.into_iter().map(|(id, anchor, src, vox)| VoxelMasklet {
                id: MaskletId(id),
                anchor_frame: anchor,
                sources: src.into_iter().map(|(c, t)| MaskletSource { camera: CameraId(c), track: MaskletId(t) }).collect(),
                voxels: vox.into_iter().map(|((g, k), (v, o))| (
                    VoxelRef { grid: g.map_or(GridFrame::World, |i| GridFrame::Body(ObjectId(i))), key: VoxelKey(k.0, k.1, k.2) },
                    VoteRecord { votes: v, observations: o },
                )).collect(),
            }).collect();
            prop_assert_eq!(decode_voxel_masklets(&encode_voxel_masklets(&ms)).unwrap(), ms);
        }
    }
}
