//! Paired maps, the dataset manifest and tile datasets.
//!
//! A manifest is CSV with header `structure,map,split`; `split` is `train` or
//! `validation`, and relative paths resolve against the manifest's folder.

use std::path::{Path, PathBuf};

use mapgen_core::mapio::read_mrc_file;
use mapgen_core::structio::parse_structure;
use mapgen_core::tiler::tile_map;
use mapgen_core::{DensityMap, TileSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, RunConfig};
use crate::curate::{curate_pair, ensure_same_grid, filter_pair_at, make_simmap, raw_target, SimmapOptions};
use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub structure: PathBuf,
    pub map: PathBuf,
    pub split: Split,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, rec) in reader.deserialize::<ManifestEntry>().enumerate() {
        let mut e = rec.map_err(|e| PipelineError::Manifest(format!("row {}: {e}", line + 1)))?;
        for p in [&mut e.structure, &mut e.map] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        out.push(e);
    }
    if out.is_empty() {
        return Err(PipelineError::Manifest(format!("{} lists no pairs", path.display())));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    for e in entries {
        w.serialize(e).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    /// Simulated input.
    pub sim_map: DensityMap,
    /// Curated experimental target.
    pub exp_map: DensityMap,
    pub structure_id: String,
    pub map_id: String,
    pub split: Split,
    pub correlation: f64,
}

/// Why a pair did not make it into the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub map_id: String,
    pub correlation: f64,
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Seed for the augmentation of the `index`-th pair.
fn pair_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Curates, simulates and filters one pair. `Ok(Err(_))` is a filtered pair.
pub fn prepare_pair(
    entry: &ManifestEntry,
    index: usize,
    cfg: &RunConfig,
) -> Result<std::result::Result<PairedSample, Rejection>> {
    let text = std::fs::read_to_string(&entry.structure).map_err(|e| PipelineError::io(&entry.structure, e))?;
    let mut s = parse_structure(&text)?;
    if s.id.is_empty() {
        s.id = stem(&entry.structure);
    }
    let raw = read_mrc_file(&entry.map)?;
    let d: &DataConfig = &cfg.data;
    let exp = if d.use_curated_targets {
        curate_pair(&raw, &s, d.margin, d.voxel)?
    } else {
        raw_target(&raw, d.voxel)?
    };
    let plain = SimmapOptions {
        resolution: d.resolution,
        convention: d.convention,
        augment: None,
    };
    // The filter compares against the unaugmented simulation.
    let sim = make_simmap(&s, exp.spec(), &plain, 0)?;
    let decision = filter_pair_at(&sim, &exp, d.filter_threshold)?;
    let map_id = stem(&entry.map);
    if !decision.accepted {
        return Ok(Err(Rejection {
            map_id,
            correlation: decision.correlation,
        }));
    }
    let sim = if d.augment && entry.split == Split::Train {
        let aug = SimmapOptions {
            augment: Some(cfg.augment.clone()),
            ..plain
        };
        make_simmap(&s, exp.spec(), &aug, pair_seed(cfg.train.seed, index))?
    } else {
        sim
    };
    Ok(Ok(PairedSample {
        sim_map: sim,
        exp_map: exp,
        structure_id: s.id,
        map_id,
        split: entry.split,
        correlation: decision.correlation,
    }))
}

/// Prepares every manifest entry (in parallel, results in manifest order).
pub fn prepare_pairs(entries: &[ManifestEntry], cfg: &RunConfig) -> Result<(Vec<PairedSample>, Vec<Rejection>)> {
    let results: Vec<_> = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| prepare_pair(e, i, cfg))
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        match r? {
            Ok(p) => kept.push(p),
            Err(rej) => {
                log::info!("dropping {} (correlation {:.3})", rej.map_id, rej.correlation);
                dropped.push(rej)
            }
        }
    }
    Ok((kept, dropped))
}

/// Tiles one pair and keeps each window where either member is nonzero.
pub fn tile_pair(p: &PairedSample, stride: usize) -> Result<(TileSet, TileSet)> {
    ensure_same_grid(&p.sim_map, &p.exp_map)?;
    let input = tile_map(&p.sim_map, stride, &p.map_id)?;
    let target = tile_map(&p.exp_map, stride, &p.map_id)?;
    let keep: Vec<usize> = (0..input.len())
        .filter(|&i| {
            input.tiles[i].iter().any(|&v| v != 0.0) || target.tiles[i].iter().any(|&v| v != 0.0)
        })
        .collect();
    Ok((input.select(&keep), target.select(&keep)))
}

/// Paired tile sets over all `pairs`, concatenated in order. The geometry
/// fields of the returned sets describe the first pair.
pub fn build_tile_dataset(pairs: &[PairedSample], stride: usize) -> Result<(TileSet, TileSet)> {
    let mut parts = pairs.iter().map(|p| tile_pair(p, stride));
    let (mut input, mut target) = match parts.next() {
        Some(first) => first?,
        None => return Err(PipelineError::EmptyDataset),
    };
    for part in parts {
        let (i, t) = part?;
        input.tiles.extend(i.tiles);
        input.placements.extend(i.placements);
        target.tiles.extend(t.tiles);
        target.placements.extend(t.placements);
    }
    Ok((input, target))
}

/// Flat tile lists ready for training.
#[derive(Debug, Clone, Default)]
pub struct TileData {
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<Vec<f32>>,
    /// Source map of each tile.
    pub map_ids: Vec<String>,
}

impl TileData {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push_sets(&mut self, input: TileSet, target: TileSet) {
        self.map_ids.extend(input.placements.iter().map(|p| p.map_id.clone()));
        self.inputs.extend(input.tiles);
        self.targets.extend(target.tiles);
    }
}

/// Training and validation tiles, split by whole maps.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: TileData,
    pub validation: TileData,
}

impl Dataset {
    pub fn from_pairs(pairs: &[PairedSample], stride: usize) -> Result<Self> {
        let mut ds = Dataset::default();
        for p in pairs {
            let (i, t) = tile_pair(p, stride)?;
            match p.split {
                Split::Train => ds.train.push_sets(i, t),
                Split::Validation => ds.validation.push_sets(i, t),
            }
        }
        Ok(ds)
    }
}
