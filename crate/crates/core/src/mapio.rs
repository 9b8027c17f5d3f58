//! MRC2014 / CCP4 map reading and writing.
//!
//! Reading accepts modes 0 (int8), 1 (int16) and 2 (float32) in either byte
//! order and any column/row/section axis permutation. Writing always produces
//! little-endian mode 2 with canonical axis order and no extended header.

use std::path::Path;

use thiserror::Error;

use crate::grid::{DensityMap, GridError, GridSpec, Vec3};

pub const HEADER_LEN: usize = 1024;

#[derive(Debug, Error)]
pub enum MrcError {
    #[error("missing 'MAP ' identifier at byte 208")]
    BadMagic,
    #[error("unsupported data mode {0}")]
    UnsupportedMode(i32),
    #[error("payload truncated: need {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("non-orthogonal cell angles {0:?}")]
    NonOrthogonalCell([f32; 3]),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrcHeader {
    pub nx: i32,
    pub ny: i32,
    pub nz: i32,
    pub mode: i32,
    pub nxstart: i32,
    pub nystart: i32,
    pub nzstart: i32,
    pub mx: i32,
    pub my: i32,
    pub mz: i32,
    pub cell_lengths: [f32; 3],
    pub cell_angles: [f32; 3],
    pub mapc: i32,
    pub mapr: i32,
    pub maps: i32,
    pub dmin: f32,
    pub dmax: f32,
    pub dmean: f32,
    pub ispg: i32,
    pub nsymbt: i32,
    pub origin: [f32; 3],
    pub rms: f32,
    pub big_endian: bool,
}

struct Words<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Words<'_> {
    fn raw(&self, word: usize) -> [u8; 4] {
        let mut b = [0u8; 4];
        b.copy_from_slice(&self.bytes[word * 4..word * 4 + 4]);
        b
    }

    fn i32(&self, word: usize) -> i32 {
        let b = self.raw(word);
        if self.big_endian {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, word: usize) -> f32 {
        let b = self.raw(word);
        if self.big_endian {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }
}

impl MrcHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, MrcError> {
        if bytes.len() < HEADER_LEN {
            return Err(MrcError::TruncatedPayload {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        if &bytes[208..212] != b"MAP " {
            return Err(MrcError::BadMagic);
        }
        // Machine stamp: 0x44 0x44 / 0x44 0x41 little-endian, 0x11 0x11 big-endian.
        let big_endian = bytes[212] == 0x11;
        let w = Words { bytes, big_endian };
        Ok(Self {
            nx: w.i32(0),
            ny: w.i32(1),
            nz: w.i32(2),
            mode: w.i32(3),
            nxstart: w.i32(4),
            nystart: w.i32(5),
            nzstart: w.i32(6),
            mx: w.i32(7),
            my: w.i32(8),
            mz: w.i32(9),
            cell_lengths: [w.f32(10), w.f32(11), w.f32(12)],
            cell_angles: [w.f32(13), w.f32(14), w.f32(15)],
            mapc: w.i32(16),
            mapr: w.i32(17),
            maps: w.i32(18),
            dmin: w.f32(19),
            dmax: w.f32(20),
            dmean: w.f32(21),
            ispg: w.i32(22),
            nsymbt: w.i32(23),
            origin: [w.f32(49), w.f32(50), w.f32(51)],
            rms: w.f32(54),
            big_endian,
        })
    }

    /// Little-endian 1024-byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; HEADER_LEN];
        let mut put = |word: usize, b: [u8; 4]| out[word * 4..word * 4 + 4].copy_from_slice(&b);
        let ints = [
            (0, self.nx),
            (1, self.ny),
            (2, self.nz),
            (3, self.mode),
            (4, self.nxstart),
            (5, self.nystart),
            (6, self.nzstart),
            (7, self.mx),
            (8, self.my),
            (9, self.mz),
            (16, self.mapc),
            (17, self.mapr),
            (18, self.maps),
            (22, self.ispg),
            (23, self.nsymbt),
            (27, 20140),
            (55, 1),
        ];
        for (word, v) in ints {
            put(word, v.to_le_bytes());
        }
        let floats = [
            (10, self.cell_lengths[0]),
            (11, self.cell_lengths[1]),
            (12, self.cell_lengths[2]),
            (13, self.cell_angles[0]),
            (14, self.cell_angles[1]),
            (15, self.cell_angles[2]),
            (19, self.dmin),
            (20, self.dmax),
            (21, self.dmean),
            (49, self.origin[0]),
            (50, self.origin[1]),
            (51, self.origin[2]),
            (54, self.rms),
        ];
        for (word, v) in floats {
            put(word, v.to_le_bytes());
        }
        put(52, *b"MAP ");
        put(53, [0x44, 0x44, 0, 0]);
        let label = b"mapgen";
        out[224..224 + label.len()].copy_from_slice(label);
        out
    }

    fn bytes_per_voxel(&self) -> Result<usize, MrcError> {
        match self.mode {
            0 => Ok(1),
            1 => Ok(2),
            2 => Ok(4),
            m => Err(MrcError::UnsupportedMode(m)),
        }
    }

    /// Spatial axis (0 = X) stored along columns, rows and sections.
    fn axis_order(&self) -> Result<[usize; 3], MrcError> {
        let order = [self.mapc, self.mapr, self.maps];
        let mut seen = [false; 3];
        for &a in &order {
            if !(1..=3).contains(&a) || seen[(a - 1) as usize] {
                return Err(MrcError::InvalidHeader(format!(
                    "axis codes {order:?} are not a permutation of 1,2,3"
                )));
            }
            seen[(a - 1) as usize] = true;
        }
        Ok([(order[0] - 1) as usize, (order[1] - 1) as usize, (order[2] - 1) as usize])
    }
}

fn is_right_angle(a: f32) -> bool {
    a == 0.0 || (a - 90.0).abs() < 1e-3
}

/// Decodes an MRC file into a map in canonical (x-fastest) order.
pub fn read_mrc(bytes: &[u8]) -> Result<DensityMap, MrcError> {
    read_mrc_with_header(bytes).map(|(m, _)| m)
}

pub fn read_mrc_with_header(bytes: &[u8]) -> Result<(DensityMap, MrcHeader), MrcError> {
    let h = MrcHeader::parse(bytes)?;
    let bpv = h.bytes_per_voxel()?;
    if h.nx <= 0 || h.ny <= 0 || h.nz <= 0 {
        return Err(MrcError::InvalidHeader(format!(
            "non-positive extents {}x{}x{}",
            h.nx, h.ny, h.nz
        )));
    }
    if h.nsymbt < 0 {
        return Err(MrcError::InvalidHeader(format!("negative NSYMBT {}", h.nsymbt)));
    }
    if !h.cell_angles.iter().all(|&a| is_right_angle(a)) {
        return Err(MrcError::NonOrthogonalCell(h.cell_angles));
    }
    let axes = h.axis_order()?;
    let file_dims = [h.nx as usize, h.ny as usize, h.nz as usize];
    let count = file_dims.iter().product::<usize>();
    let start = HEADER_LEN + h.nsymbt as usize;
    let expected = start + count * bpv;
    if bytes.len() < expected {
        return Err(MrcError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    let payload = &bytes[start..expected];

    // Spatial dims: spatial axis axes[f] has file_dims[f] samples.
    let mut dims = [0usize; 3];
    for f in 0..3 {
        dims[axes[f]] = file_dims[f];
    }
    let sampling = [h.mx, h.my, h.mz];
    let mut voxel_size = [1.0f64; 3];
    for a in 0..3 {
        let n = if sampling[a] > 0 { sampling[a] as f64 } else { dims[a] as f64 };
        let cell = h.cell_lengths[a] as f64;
        if cell > 0.0 {
            voxel_size[a] = cell / n;
        }
    }
    let origin: Vec3 = if h.origin.iter().any(|&o| o != 0.0) {
        [h.origin[0] as f64, h.origin[1] as f64, h.origin[2] as f64]
    } else {
        let starts = [h.nxstart, h.nystart, h.nzstart];
        let mut o = [0.0; 3];
        for f in 0..3 {
            o[axes[f]] = starts[f] as f64 * voxel_size[axes[f]];
        }
        o
    };

    let decode = |i: usize| -> f32 {
        let b = &payload[i * bpv..(i + 1) * bpv];
        match (h.mode, h.big_endian) {
            (0, _) => b[0] as i8 as f32,
            (1, false) => i16::from_le_bytes([b[0], b[1]]) as f32,
            (1, true) => i16::from_be_bytes([b[0], b[1]]) as f32,
            (_, false) => f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
            (_, true) => f32::from_be_bytes([b[0], b[1], b[2], b[3]]),
        }
    };

    let mut values = vec![0f32; count];
    let mut pos = [0usize; 3];
    let mut file_index = 0usize;
    for s in 0..file_dims[2] {
        pos[axes[2]] = s;
        for r in 0..file_dims[1] {
            pos[axes[1]] = r;
            for c in 0..file_dims[0] {
                pos[axes[0]] = c;
                let dst = (pos[2] * dims[1] + pos[1]) * dims[0] + pos[0];
                values[dst] = decode(file_index);
                file_index += 1;
            }
        }
    }
    let spec = GridSpec::new(origin, voxel_size, dims)?;
    Ok((DensityMap::new(spec, values)?, h))
}

/// Header describing `m` as a canonical mode-2 map.
pub fn header_for(m: &DensityMap) -> MrcHeader {
    let [nx, ny, nz] = m.dims();
    let vs = m.voxel_size();
    let n = m.len() as f64;
    let (lo, hi) = m.min_max();
    let mean = m.sum() / n;
    let rms = (m
        .values()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    MrcHeader {
        nx: nx as i32,
        ny: ny as i32,
        nz: nz as i32,
        mode: 2,
        nxstart: 0,
        nystart: 0,
        nzstart: 0,
        mx: nx as i32,
        my: ny as i32,
        mz: nz as i32,
        cell_lengths: [
            (nx as f64 * vs[0]) as f32,
            (ny as f64 * vs[1]) as f32,
            (nz as f64 * vs[2]) as f32,
        ],
        cell_angles: [90.0; 3],
        mapc: 1,
        mapr: 2,
        maps: 3,
        dmin: lo,
        dmax: hi,
        dmean: mean as f32,
        ispg: 1,
        nsymbt: 0,
        origin: [m.origin()[0] as f32, m.origin()[1] as f32, m.origin()[2] as f32],
        rms: rms as f32,
        big_endian: false,
    }
}

pub fn write_mrc(m: &DensityMap) -> Vec<u8> {
    let mut out = header_for(m).to_bytes();
    out.reserve(m.len() * 4);
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_mrc_file(path: impl AsRef<Path>) -> Result<DensityMap, MrcError> {
    read_mrc(&std::fs::read(path)?)
}

pub fn write_mrc_file(m: &DensityMap, path: impl AsRef<Path>) -> Result<(), MrcError> {
    std::fs::write(path, write_mrc(m))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> DensityMap {
        let spec = GridSpec::new([0.0; 3], [1.0; 3], [2, 2, 2]).unwrap();
        DensityMap::new(spec, (0..8).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn reads_canonical_fixture() {
        let m = read_mrc(&write_mrc(&fixture())).unwrap();
        assert_eq!(m.values(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(m.voxel_size(), [1.0; 3]);
    }

    #[test]
    fn permuted_axes_match_canonical_twin() {
        // Canonical 3x2x2 map, value = 100 z + 10 y + x.
        let spec = GridSpec::new([0.0; 3], [1.0, 2.0, 3.0], [3, 2, 2]).unwrap();
        let canon = DensityMap::from_fn(spec, |i, j, k| (100 * k + 10 * j + i) as f32).unwrap();
        // Columns run along Y, rows along X, sections along Z.
        let mut h = header_for(&canon);
        h.mapc = 2;
        h.mapr = 1;
        h.maps = 3;
        h.nx = 2;
        h.ny = 3;
        h.nz = 2;
        let mut bytes = h.to_bytes();
        for k in 0..2 {
            for i in 0..3 {
                for j in 0..2 {
                    bytes.extend_from_slice(&canon.get(i, j, k).to_le_bytes());
                }
            }
        }
        let m = read_mrc(&bytes).unwrap();
        assert_eq!(m.dims(), [3, 2, 2]);
        assert_eq!(m.values(), canon.values());
        assert_eq!(m.voxel_size(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = write_mrc(&fixture());
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(read_mrc(&bytes), Err(MrcError::TruncatedPayload { .. })));
        assert!(matches!(read_mrc(&bytes[..100]), Err(MrcError::TruncatedPayload { .. })));
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = write_mrc(&fixture());
        bytes[208] = b'X';
        assert!(matches!(read_mrc(&bytes), Err(MrcError::BadMagic)));

        let mut h = header_for(&fixture());
        h.mode = 6;
        assert!(matches!(read_mrc(&h.to_bytes()), Err(MrcError::UnsupportedMode(6))));

        let mut h = header_for(&fixture());
        h.cell_angles = [90.0, 90.0, 120.0];
        let mut bytes = h.to_bytes();
        bytes.extend(std::iter::repeat_n(0u8, 32));
        assert!(matches!(read_mrc(&bytes), Err(MrcError::NonOrthogonalCell(_))));
    }

    #[test]
    fn header_fields() {
        let spec = GridSpec::new([-16.0; 3], [1.0; 3], [4, 4, 4]).unwrap();
        let m = DensityMap::zeros(spec).unwrap();
        let (back, h) = read_mrc_with_header(&write_mrc(&m)).unwrap();
        assert_eq!(h.origin, [-16.0; 3]);
        assert_eq!((h.dmin, h.dmax, h.dmean), (0.0, 0.0, 0.0));
        assert_eq!(back.origin(), [-16.0; 3]);
    }

    #[test]
    fn nstart_fallback_and_origin_priority() {
        let spec = GridSpec::new([0.0; 3], [2.0; 3], [2, 2, 2]).unwrap();
        let m = DensityMap::zeros(spec).unwrap();
        let mut h = header_for(&m);
        h.nxstart = -3;
        h.nystart = 1;
        h.nzstart = 5;
        let mut bytes = h.to_bytes();
        bytes.extend(std::iter::repeat_n(0u8, 32));
        assert_eq!(read_mrc(&bytes).unwrap().origin(), [-6.0, 2.0, 10.0]);

        h.origin = [1.5, 0.0, 0.0];
        let mut bytes = h.to_bytes();
        bytes.extend(std::iter::repeat_n(0u8, 32));
        assert_eq!(read_mrc(&bytes).unwrap().origin(), [1.5, 0.0, 0.0]);
    }

    #[test]
    fn big_endian_int_modes_and_extended_header() {
        let mut h = header_for(&fixture());
        h.mode = 1;
        h.nsymbt = 8;
        let le = h.to_bytes();
        // Re-encode every header word big-endian.
        let mut bytes = vec![0u8; HEADER_LEN];
        for w in 0..256 {
            let mut word = [le[4 * w], le[4 * w + 1], le[4 * w + 2], le[4 * w + 3]];
            if w != 52 && w != 53 && w < 56 {
                word.reverse();
            }
            bytes[4 * w..4 * w + 4].copy_from_slice(&word);
        }
        bytes[212] = 0x11;
        bytes[213] = 0x11;
        bytes.extend([0xAB; 8]);
        for v in [0i16, -1, 2, -3, 4, -5, 6, -7] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let m = read_mrc(&bytes).unwrap();
        assert_eq!(m.values(), &[0.0, -1.0, 2.0, -3.0, 4.0, -5.0, 6.0, -7.0]);

        let mut h = header_for(&fixture());
        h.mode = 0;
        let mut bytes = h.to_bytes();
        bytes.extend([0u8, 255, 1, 254, 2, 253, 3, 252]);
        assert_eq!(read_mrc(&bytes).unwrap().values(), &[0.0, -1.0, 1.0, -2.0, 2.0, -3.0, 3.0, -4.0]);
    }
}
