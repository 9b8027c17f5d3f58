//! Gaussian point-spread simulation of density maps from atomic structures.
//!
//! Each heavy atom contributes `θ Z exp(-k |x - r|²)` with `k = 1/(2σ²)`.
//! The width σ scales linearly with resolution; the scale factor and the
//! amplitude θ depend on the package convention being mimicked.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{DensityMap, GridError, GridSpec};
use crate::structio::{bounding_box, AtomicStructure, StructError};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("structure has no atoms")]
    EmptyStructure,
    #[error("unknown simulation convention {0:?}")]
    UnknownConvention(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Structure(#[from] StructError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    ChimeraxMolmap,
    Eman2Pdb2mrc,
    SitusPdb2vol,
}

impl Convention {
    pub const ALL: [Convention; 3] = [
        Convention::ChimeraxMolmap,
        Convention::Eman2Pdb2mrc,
        Convention::SitusPdb2vol,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Convention::ChimeraxMolmap => "chimerax-molmap",
            Convention::Eman2Pdb2mrc => "eman2-pdb2mrc",
            Convention::SitusPdb2vol => "situs-pdb2vol",
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Convention {
    type Err = SimulateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Convention::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| SimulateError::UnknownConvention(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeMode {
    /// θ = 1/((2π)^{3/2} σ³): each atom integrates to Z.
    ZNormalizedIntegral,
    /// θ = 1: each atom peaks at Z.
    ZPeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub resolution: f64,
    pub sigma_factor: f64,
    pub amplitude_mode: AmplitudeMode,
    pub cutoff_sigmas: f64,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), SimulateError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(SimulateError::InvalidKernel(format!("resolution {}", self.resolution)));
        }
        if !(self.sigma_factor > 0.0 && self.sigma_factor.is_finite()) {
            return Err(SimulateError::InvalidKernel(format!("sigma factor {}", self.sigma_factor)));
        }
        if !(self.cutoff_sigmas >= 3.0 && self.cutoff_sigmas.is_finite()) {
            return Err(SimulateError::InvalidKernel(format!("cutoff {} sigmas", self.cutoff_sigmas)));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_factor * self.resolution
    }

    /// Exponent coefficient `k = 1/(2σ²)`.
    pub fn k(&self) -> f64 {
        let s = self.sigma();
        1.0 / (2.0 * s * s)
    }

    pub fn theta(&self) -> f64 {
        match self.amplitude_mode {
            AmplitudeMode::ZNormalizedIntegral => 1.0 / ((2.0 * PI).powf(1.5) * self.sigma().powi(3)),
            AmplitudeMode::ZPeak => 1.0,
        }
    }

    pub fn cutoff_radius(&self) -> f64 {
        self.cutoff_sigmas * self.sigma()
    }

    pub fn with_cutoff(mut self, cutoff_sigmas: f64) -> Self {
        self.cutoff_sigmas = cutoff_sigmas;
        self
    }
}

pub const DEFAULT_CUTOFF_SIGMAS: f64 = 5.0;

pub fn kernel_from_convention(convention: Convention, resolution: f64) -> Result<KernelSpec, SimulateError> {
    let (sigma_factor, amplitude_mode) = match convention {
        Convention::ChimeraxMolmap => (1.0 / (PI * 2f64.sqrt()), AmplitudeMode::ZNormalizedIntegral),
        // Resolution read as the 1/e² half-width; approximate.
        Convention::Eman2Pdb2mrc => (1.0 / (PI * (8.0f64 / 3.0).sqrt()), AmplitudeMode::ZNormalizedIntegral),
        // Approximate.
        Convention::SitusPdb2vol => (0.425 * 0.5, AmplitudeMode::ZPeak),
    };
    let spec = KernelSpec {
        resolution,
        sigma_factor,
        amplitude_mode,
        cutoff_sigmas: DEFAULT_CUTOFF_SIGMAS,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn kernel_from_name(convention: &str, resolution: f64) -> Result<KernelSpec, SimulateError> {
    kernel_from_convention(convention.parse()?, resolution)
}

/// Uniform grid covering the structure's bounding box grown by `margin`.
pub fn default_grid_for(s: &AtomicStructure, margin: f64, voxel: f64) -> Result<GridSpec, SimulateError> {
    if s.atoms.is_empty() {
        return Err(SimulateError::EmptyStructure);
    }
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(GridError::InvalidVoxelSize([voxel; 3]).into());
    }
    let b = bounding_box(s, margin)?;
    let size = b.size();
    let dims = [0, 1, 2].map(|a| (size[a] / voxel - 1e-9).ceil().max(0.0) as usize + 1);
    Ok(GridSpec::new(b.min, [voxel; 3], dims)?)
}

/// Planes per parallel work unit. Every voxel accumulates its atoms in file
/// order no matter how planes are grouped, so the split never changes bits.
const SLAB_PLANES: usize = 4;

struct AtomSplat {
    amplitude: f64,
    lo: [usize; 3],
    hi: [usize; 3],
    /// Per-axis squared distances from the atom to the grid lines in [lo, hi].
    d2: [Vec<f64>; 3],
}

/// Splats every atom of `s` onto `grid` with `kernel`.
pub fn simulate_map(s: &AtomicStructure, grid: &GridSpec, kernel: &KernelSpec) -> Result<DensityMap, SimulateError> {
    if s.atoms.is_empty() {
        return Err(SimulateError::EmptyStructure);
    }
    grid.validate()?;
    kernel.validate()?;
    let theta = kernel.theta();
    let k = kernel.k();
    let radius = kernel.cutoff_radius();
    let r2 = radius * radius;

    let splats: Vec<AtomSplat> = s
        .atoms
        .iter()
        .filter_map(|atom| {
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            let mut d2: [Vec<f64>; 3] = Default::default();
            for a in 0..3 {
                let h = grid.voxel_size[a];
                let u = (atom.position[a] - grid.origin[a]) / h;
                let first = ((u - radius / h).ceil()).max(0.0);
                let last = ((u + radius / h).floor()).min(grid.dims[a] as f64 - 1.0);
                if last < first {
                    return None;
                }
                lo[a] = first as usize;
                hi[a] = last as usize;
                d2[a] = (lo[a]..=hi[a])
                    .map(|i| {
                        let d = grid.origin[a] + i as f64 * h - atom.position[a];
                        d * d
                    })
                    .collect();
            }
            Some(AtomSplat {
                amplitude: theta * atom.atomic_number as f64,
                lo,
                hi,
                d2,
            })
        })
        .collect();

    let [nx, ny, nz] = grid.dims;
    let plane = nx * ny;
    let mut acc = vec![0f64; grid.len()];
    acc.par_chunks_mut(plane * SLAB_PLANES)
        .enumerate()
        .for_each(|(slab, block)| {
            let z0 = slab * SLAB_PLANES;
            let z1 = (z0 + SLAB_PLANES).min(nz);
            for sp in &splats {
                let zs = sp.lo[2].max(z0);
                let ze = (sp.hi[2] + 1).min(z1);
                for z in zs..ze {
                    let dz2 = sp.d2[2][z - sp.lo[2]];
                    for y in sp.lo[1]..=sp.hi[1] {
                        let dyz2 = dz2 + sp.d2[1][y - sp.lo[1]];
                        if dyz2 > r2 {
                            continue;
                        }
                        let row = (z - z0) * plane + y * nx;
                        for x in sp.lo[0]..=sp.hi[0] {
                            let d2 = dyz2 + sp.d2[0][x - sp.lo[0]];
                            if d2 <= r2 {
                                block[row + x] += sp.amplitude * (-k * d2).exp();
                            }
                        }
                    }
                }
            }
        });
    let values = acc.into_iter().map(|v| v as f32).collect();
    Ok(DensityMap::new(*grid, values)?)
}
