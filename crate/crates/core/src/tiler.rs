//! 32³ tiling of zero-padded maps and centre-crop reassembly.
//!
//! A map is padded by [`PAD`] voxels per side, then cut into [`TILE`]³ windows
//! whose corners sit on a stride lattice. Reassembly writes back only the
//! central [`CORE`]³ block of each processed window, so with stride 20 the
//! central blocks tile the original extent seamlessly.
//!
//! # On-disk layout
//!
//! A tile set directory holds `index.tsv` and one `tile_NNNNNN.f32` file per
//! tile (32768 little-endian `f32`, x fastest). The index starts with `#`
//! header lines (`original_dims`, `padded_dims`, `pad`, `voxel_size`,
//! `origin`), followed by one tab-separated line per tile:
//! `map_id  tile_index  ci,cj,ck  32,32,32`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{pad_center, DensityMap, GridError, GridSpec};

pub const TILE: usize = 32;
pub const CORE: usize = 20;
/// Offset of the central block inside a window.
pub const CORE_OFFSET: usize = (TILE - CORE) / 2;
pub const PAD: usize = 32;
pub const TILE_VOXELS: usize = TILE * TILE * TILE;
pub const INFERENCE_STRIDE: usize = CORE;
pub const TRAINING_STRIDE: usize = TILE;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("stride {0} outside 1..=32")]
    InvalidStride(usize),
    #[error("expected {expected} processed tiles, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("tile {index} has {actual} values, expected {TILE_VOXELS}")]
    BadTileSize { index: usize, actual: usize },
    #[error("tile index file: {0}")]
    BadIndex(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlacement {
    pub tile_index: usize,
    /// Window corner in padded-map voxel coordinates.
    pub corner: [usize; 3],
    pub map_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSet {
    pub tiles: Vec<Vec<f32>>,
    pub placements: Vec<TilePlacement>,
    pub padded_dims: [usize; 3],
    pub original_dims: [usize; 3],
    pub pad: usize,
    /// Grid of the unpadded map, used to place the reassembled result.
    pub original_grid: GridSpec,
}

impl TileSet {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Keeps the tiles at `indices` (in the given order).
    pub fn select(&self, indices: &[usize]) -> TileSet {
        TileSet {
            tiles: indices.iter().map(|&i| self.tiles[i].clone()).collect(),
            placements: indices.iter().map(|&i| self.placements[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> TileSet {
        TileSet {
            tiles: Vec::new(),
            placements: Vec::new(),
            padded_dims: self.padded_dims,
            original_dims: self.original_dims,
            pad: self.pad,
            original_grid: self.original_grid,
        }
    }
}

/// Window corners along one axis of original length `n`.
pub fn axis_corners(n: usize, stride: usize) -> Vec<usize> {
    let first = PAD - CORE_OFFSET;
    let last_allowed = n + 2 * PAD - TILE;
    let count = 1 + n.saturating_sub(CORE).div_ceil(stride);
    (0..count)
        .map(|j| (first + j * stride).min(last_allowed))
        .collect()
}

pub fn tile_map(m: &DensityMap, stride: usize, map_id: &str) -> Result<TileSet, TileError> {
    if !(1..=TILE).contains(&stride) {
        return Err(TileError::InvalidStride(stride));
    }
    let padded = pad_center(m, PAD);
    let pd = padded.dims();
    let od = m.dims();
    let cx = axis_corners(od[0], stride);
    let cy = axis_corners(od[1], stride);
    let cz = axis_corners(od[2], stride);
    let mut placements = Vec::with_capacity(cx.len() * cy.len() * cz.len());
    for &k in &cz {
        for &j in &cy {
            for &i in &cx {
                placements.push(TilePlacement {
                    tile_index: placements.len(),
                    corner: [i, j, k],
                    map_id: map_id.to_string(),
                });
            }
        }
    }
    let tiles = placements
        .par_iter()
        .map(|p| extract_window(padded.values(), pd, p.corner))
        .collect();
    Ok(TileSet {
        tiles,
        placements,
        padded_dims: pd,
        original_dims: od,
        pad: PAD,
        original_grid: *m.spec(),
    })
}

fn extract_window(values: &[f32], dims: [usize; 3], corner: [usize; 3]) -> Vec<f32> {
    let mut out = Vec::with_capacity(TILE_VOXELS);
    for k in 0..TILE {
        for j in 0..TILE {
            let start = ((corner[2] + k) * dims[1] + corner[1] + j) * dims[0] + corner[0];
            out.extend_from_slice(&values[start..start + TILE]);
        }
    }
    out
}

/// Writes each processed tile's central block at its placement, in placement
/// order (later tiles overwrite earlier ones), then strips the padding.
pub fn assemble_tiles(t: &TileSet, processed: &[Vec<f32>]) -> Result<DensityMap, TileError> {
    if processed.len() != t.placements.len() {
        return Err(TileError::LengthMismatch {
            expected: t.placements.len(),
            actual: processed.len(),
        });
    }
    if let Some((index, tile)) = processed.iter().enumerate().find(|(_, p)| p.len() != TILE_VOXELS) {
        return Err(TileError::BadTileSize {
            index,
            actual: tile.len(),
        });
    }
    let pd = t.padded_dims;
    let mut padded = vec![0f32; pd[0] * pd[1] * pd[2]];
    for (p, tile) in t.placements.iter().zip(processed) {
        for k in CORE_OFFSET..CORE_OFFSET + CORE {
            for j in CORE_OFFSET..CORE_OFFSET + CORE {
                let src = (k * TILE + j) * TILE + CORE_OFFSET;
                let dst = ((p.corner[2] + k) * pd[1] + p.corner[1] + j) * pd[0] + p.corner[0] + CORE_OFFSET;
                padded[dst..dst + CORE].copy_from_slice(&tile[src..src + CORE]);
            }
        }
    }
    let od = t.original_dims;
    let mut values = Vec::with_capacity(od.iter().product());
    for k in 0..od[2] {
        for j in 0..od[1] {
            let start = ((k + t.pad) * pd[1] + j + t.pad) * pd[0] + t.pad;
            values.extend_from_slice(&padded[start..start + od[0]]);
        }
    }
    Ok(DensityMap::new(t.original_grid, values)?)
}

fn triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], TileError> {
    let parts: Vec<T> = s
        .split([',', ' '])
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|_| TileError::BadIndex(format!("bad number {p:?}"))))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| TileError::BadIndex(format!("expected three numbers in {s:?}")))
}

pub fn write_tileset_dir(t: &TileSet, dir: &Path) -> Result<(), TileError> {
    std::fs::create_dir_all(dir)?;
    let g = &t.original_grid;
    let mut index = String::from("# tileset v1\n");
    let _ = writeln!(index, "# original_dims {} {} {}", t.original_dims[0], t.original_dims[1], t.original_dims[2]);
    let _ = writeln!(index, "# padded_dims {} {} {}", t.padded_dims[0], t.padded_dims[1], t.padded_dims[2]);
    let _ = writeln!(index, "# pad {}", t.pad);
    let _ = writeln!(index, "# voxel_size {:?} {:?} {:?}", g.voxel_size[0], g.voxel_size[1], g.voxel_size[2]);
    let _ = writeln!(index, "# origin {:?} {:?} {:?}", g.origin[0], g.origin[1], g.origin[2]);
    for (p, tile) in t.placements.iter().zip(&t.tiles) {
        let _ = writeln!(
            index,
            "{}\t{}\t{},{},{}\t{TILE},{TILE},{TILE}",
            p.map_id, p.tile_index, p.corner[0], p.corner[1], p.corner[2]
        );
        let bytes: Vec<u8> = tile.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.join(format!("tile_{:06}.f32", p.tile_index)), bytes)?;
    }
    std::fs::write(dir.join("index.tsv"), index)?;
    Ok(())
}

pub fn read_tileset_dir(dir: &Path) -> Result<TileSet, TileError> {
    let text = std::fs::read_to_string(dir.join("index.tsv"))?;
    let mut original_dims = None;
    let mut padded_dims = None;
    let mut pad = None;
    let mut voxel_size = None;
    let mut origin = None;
    let mut placements = Vec::new();
    let mut tiles = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
            match key {
                "original_dims" => original_dims = Some(triple::<usize>(value)?),
                "padded_dims" => padded_dims = Some(triple::<usize>(value)?),
                "pad" => pad = Some(value.trim().parse::<usize>().map_err(|_| TileError::BadIndex("bad pad".into()))?),
                "voxel_size" => voxel_size = Some(triple::<f64>(value)?),
                "origin" => origin = Some(triple::<f64>(value)?),
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(TileError::BadIndex(format!("expected 4 fields in {line:?}")));
        }
        let tile_index = fields[1]
            .parse::<usize>()
            .map_err(|_| TileError::BadIndex(format!("bad tile index in {line:?}")))?;
        if triple::<usize>(fields[3])? != [TILE; 3] {
            return Err(TileError::BadIndex(format!("unsupported tile dims in {line:?}")));
        }
        let bytes = std::fs::read(dir.join(format!("tile_{tile_index:06}.f32")))?;
        if bytes.len() != TILE_VOXELS * 4 {
            return Err(TileError::BadTileSize {
                index: tile_index,
                actual: bytes.len() / 4,
            });
        }
        tiles.push(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
        placements.push(TilePlacement {
            tile_index,
            corner: triple::<usize>(fields[2])?,
            map_id: fields[0].to_string(),
        });
    }
    let missing = |what: &str| TileError::BadIndex(format!("missing {what} header"));
    let original_dims = original_dims.ok_or_else(|| missing("original_dims"))?;
    Ok(TileSet {
        tiles,
        placements,
        padded_dims: padded_dims.ok_or_else(|| missing("padded_dims"))?,
        original_dims,
        pad: pad.ok_or_else(|| missing("pad"))?,
        original_grid: GridSpec::new(
            origin.ok_or_else(|| missing("origin"))?,
            voxel_size.ok_or_else(|| missing("voxel_size"))?,
            original_dims,
        )?,
    })
}
