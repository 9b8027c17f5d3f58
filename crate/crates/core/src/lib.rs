//! Density-map primitives for structure-conditioned map generation.
//!
//! - [`structio`]: PDB ATOM/HETATM parsing
//! - [`mapio`]: MRC2014 reading and writing
//! - [`grid`]: voxel grids, resampling, normalization, padding and augmentation
//! - [`simulate`]: Gaussian point-spread simulation from atoms
//! - [`tiler`]: 32³ tiling and centre-crop reassembly
//! - [`metrics`]: SSIM and correlation scores

pub mod grid;
pub mod mapio;
pub mod metrics;
pub mod simulate;
pub mod structio;
pub mod tiler;

pub use grid::{Axis, Box3, DensityMap, GridError, GridSpec, Vec3};
pub use mapio::{read_mrc, write_mrc, MrcError, MrcHeader};
pub use metrics::{MetricError, MetricReport, SsimParams};
pub use simulate::{Convention, KernelSpec, SimulateError};
pub use structio::{Atom, AtomicStructure, StructError};
pub use tiler::{TileError, TilePlacement, TileSet};
