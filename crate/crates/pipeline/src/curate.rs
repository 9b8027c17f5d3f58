//! Turning raw maps and structures into normalized training pairs.

use mapgen_core::grid::{crop_to_box, minmax_normalize, random_augment, resample_trilinear, AugmentConfig};
use mapgen_core::metrics::correlation;
use mapgen_core::simulate::{kernel_from_convention, simulate_map};
use mapgen_core::structio::bounding_box;
use mapgen_core::{AtomicStructure, Convention, DensityMap, GridError, GridSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PipelineError, Result};

/// Correlation below which a simulated/experimental pair is discarded.
pub const FILTER_THRESHOLD: f64 = 0.65;

/// Min-max normalization; a constant map becomes all zeros with a warning.
pub fn normalize_or_zero(m: &DensityMap, what: &str) -> Result<DensityMap> {
    match minmax_normalize(m) {
        Ok(n) => Ok(n),
        Err(GridError::DegenerateRange(v)) => {
            log::warn!("{what}: constant map (value {v}); using all zeros");
            Ok(m.with_values(vec![0.0; m.len()])?)
        }
        Err(e) => Err(e.into()),
    }
}

/// Isotropic grid with spacing `voxel` starting at `m`'s origin and staying
/// inside its extent.
pub fn isotropic_grid(m: &DensityMap, voxel: f64) -> Result<GridSpec> {
    let size = m.extent().size();
    let dims = size.map(|s| ((s / voxel) + 1e-6).floor() as usize + 1);
    Ok(GridSpec::new(m.origin(), [voxel; 3], dims)?)
}

/// Crops `raw` to the structure's padded bounding box, resamples to
/// `voxel` Å and rescales to [0, 1].
pub fn curate_pair(raw: &DensityMap, s: &AtomicStructure, margin: f64, voxel: f64) -> Result<DensityMap> {
    let boxed = crop_to_box(raw, &bounding_box(s, margin)?)?;
    let grid = isotropic_grid(&boxed, voxel)?;
    let resampled = resample_trilinear(&boxed, &grid)?;
    normalize_or_zero(&resampled, &s.id)
}

/// The uncropped alternative: resample the whole map and rescale.
pub fn raw_target(raw: &DensityMap, voxel: f64) -> Result<DensityMap> {
    let grid = isotropic_grid(raw, voxel)?;
    normalize_or_zero(&resample_trilinear(raw, &grid)?, "raw target")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimmapOptions {
    pub resolution: f64,
    pub convention: Convention,
    pub augment: Option<AugmentConfig>,
}

impl Default for SimmapOptions {
    fn default() -> Self {
        SimmapOptions {
            resolution: 2.0,
            convention: Convention::ChimeraxMolmap,
            augment: None,
        }
    }
}

/// Simulated input map on `grid`, rescaled to [0, 1]. Augmentation draws
/// its parameters from a generator seeded with `seed` and is followed by a
/// second rescale.
pub fn make_simmap(s: &AtomicStructure, grid: &GridSpec, opts: &SimmapOptions, seed: u64) -> Result<DensityMap> {
    let kernel = kernel_from_convention(opts.convention, opts.resolution)?;
    let sim = normalize_or_zero(&simulate_map(s, grid, &kernel)?, &s.id)?;
    match &opts.augment {
        None => Ok(sim),
        Some(cfg) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            normalize_or_zero(&random_augment(&sim, cfg, &mut rng)?, &s.id)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterDecision {
    pub correlation: f64,
    pub accepted: bool,
}

pub fn filter_pair(sim: &DensityMap, exp: &DensityMap) -> Result<FilterDecision> {
    filter_pair_at(sim, exp, FILTER_THRESHOLD)
}

pub fn filter_pair_at(sim: &DensityMap, exp: &DensityMap, threshold: f64) -> Result<FilterDecision> {
    ensure_same_grid(sim, exp)?;
    let c = correlation(sim, exp, None)?;
    Ok(FilterDecision {
        correlation: c,
        accepted: c >= threshold,
    })
}

pub fn ensure_same_grid(a: &DensityMap, b: &DensityMap) -> Result<()> {
    if !a.same_grid(b) {
        return Err(PipelineError::GridMismatch(format!("{:?} vs {:?}", a.spec(), b.spec())));
    }
    Ok(())
}
