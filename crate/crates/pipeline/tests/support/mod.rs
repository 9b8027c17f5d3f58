#![allow(dead_code)]

use std::path::Path;

use mapgen::bench::helix_bundle;
use mapgen::config::{RunConfig, TrainingRunConfig};
use mapgen::curate::{make_simmap, SimmapOptions};
use mapgen::dataset::{PairedSample, Split};
use mapgen_core::{AtomicStructure, Convention, DensityMap, GridSpec};
use mapgen_nn::{DiscriminatorConfig, GeneratorConfig};

/// Smallest networks the architecture allows; fast enough for unit-scale runs.
pub fn micro_generator() -> GeneratorConfig {
    GeneratorConfig {
        depth: 2,
        base_channels: 2,
        ..GeneratorConfig::default()
    }
}

pub fn micro_discriminator() -> DiscriminatorConfig {
    DiscriminatorConfig {
        conv_channels: vec![2, 4],
        fc_widths: vec![4, 1],
        ..DiscriminatorConfig::default()
    }
}

pub fn micro_run_config() -> RunConfig {
    RunConfig {
        generator: micro_generator(),
        discriminator: micro_discriminator(),
        train: TrainingRunConfig {
            epochs: 2,
            batch_size: 2,
            lr: 1e-3,
            seed: 11,
            ..TrainingRunConfig::default()
        },
        ..RunConfig::default()
    }
}

pub fn centroid(s: &AtomicStructure) -> [f64; 3] {
    let n = s.atoms.len() as f64;
    let mut c = [0.0; 3];
    for a in &s.atoms {
        for ax in 0..3 {
            c[ax] += a.position[ax] / n;
        }
    }
    c
}

/// A cube of `n` 1 Å voxels centred on the structure, with whole-Å origin.
pub fn centred_grid(s: &AtomicStructure, n: usize) -> GridSpec {
    let c = centroid(s);
    let h = n as f64 / 2.0;
    GridSpec::new([(c[0] - h).round(), (c[1] - h).round(), (c[2] - h).round()], [1.0; 3], [n; 3]).unwrap()
}

/// Input at 2 Å and a blurrier 4 Å target on the same grid.
pub fn synthetic_pair(residues: usize, n: usize, split: Split) -> PairedSample {
    let s = helix_bundle(residues).unwrap();
    let grid = centred_grid(&s, n);
    let sim = make_simmap(&s, &grid, &SimmapOptions::default(), 0).unwrap();
    let target = SimmapOptions {
        resolution: 4.0,
        convention: Convention::Eman2Pdb2mrc,
        augment: None,
    };
    let exp = make_simmap(&s, &grid, &target, 0).unwrap();
    PairedSample {
        sim_map: sim,
        exp_map: exp,
        structure_id: s.id.clone(),
        map_id: format!("{}-{n}", s.id),
        split,
        correlation: 1.0,
    }
}

pub fn max_abs_diff(a: &DensityMap, b: &DensityMap) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max)
}

pub fn write_text(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}
