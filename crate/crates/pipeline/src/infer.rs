//! Structure → map inference through overlapping 32³ tiles.

use mapgen_core::simulate::default_grid_for;
use mapgen_core::tiler::{assemble_tiles, tile_map, TILE_VOXELS};
use mapgen_core::{AtomicStructure, DensityMap, GridSpec};
use mapgen_nn::Generator;
use rayon::prelude::*;

use crate::curate::{make_simmap, normalize_or_zero, SimmapOptions};
use crate::error::{PipelineError, Result};
use crate::train::stack_tiles;

/// Anything that maps 32³ tiles to 32³ tiles.
pub trait TileModel: Sync {
    fn predict(&self, tiles: &[Vec<f32>]) -> Result<Vec<Vec<f32>>>;
}

/// Returns its input; stands in for a perfect identity generator.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl TileModel for PassThrough {
    fn predict(&self, tiles: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        Ok(tiles.to_vec())
    }
}

/// Tiles per generator call.
pub const INFER_BATCH: usize = 8;

impl TileModel for Generator<f32> {
    fn predict(&self, tiles: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let batches: Vec<Result<Vec<Vec<f32>>>> = tiles
            .par_chunks(INFER_BATCH)
            .map(|chunk| {
                let x = stack_tiles(&chunk.iter().collect::<Vec<_>>())?;
                let y = self.infer(&x)?;
                Ok(y.data().chunks(TILE_VOXELS).map(|c| c.to_vec()).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(tiles.len());
        for b in batches {
            out.extend(b?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOptions {
    pub simmap: SimmapOptions,
    pub stride: usize,
    /// Used when no grid is given.
    pub margin: f64,
    pub voxel: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            simmap: SimmapOptions::default(),
            stride: mapgen_core::tiler::INFERENCE_STRIDE,
            margin: 5.0,
            voxel: 1.0,
        }
    }
}

/// Runs `model` over an already simulated map and rescales the result to [0, 1].
pub fn infer_map(sim: &DensityMap, model: &dyn TileModel, stride: usize) -> Result<DensityMap> {
    let tiles = tile_map(sim, stride, "infer")?;
    let processed = model.predict(&tiles.tiles)?;
    if processed.len() != tiles.len() {
        return Err(PipelineError::Config(format!(
            "model returned {} tiles for {}",
            processed.len(),
            tiles.len()
        )));
    }
    let assembled = assemble_tiles(&tiles, &processed)?;
    normalize_or_zero(&assembled, "generated map")
}

/// Simulates `s` on `grid` (or a box around it), then runs the model.
pub fn infer(s: &AtomicStructure, model: &dyn TileModel, grid: Option<&GridSpec>, opts: &InferOptions) -> Result<DensityMap> {
    let grid = match grid {
        Some(g) => *g,
        None => default_grid_for(s, opts.margin, opts.voxel)?,
    };
    let plain = SimmapOptions {
        augment: None,
        ..opts.simmap.clone()
    };
    let sim = make_simmap(s, &grid, &plain, 0)?;
    infer_map(&sim, model, opts.stride)
}
