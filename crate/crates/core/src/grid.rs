//! Voxel grids and the map algebra used by curation and augmentation.
//!
//! A [`DensityMap`] stores `nx * ny * nz` values with x varying fastest. The
//! world position of voxel `(i, j, k)` is `origin + (i, j, k) * voxel_size`,
//! i.e. `origin` is the centre of the first voxel.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = [f64; 3];

/// Fractional-index distance under which a sample is snapped onto a grid node.
const SNAP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid dims {0:?}: every axis needs at least one voxel")]
    InvalidDims([usize; 3]),
    #[error("invalid voxel size {0:?}: components must be finite and positive")]
    InvalidVoxelSize(Vec3),
    #[error("expected {expected} values for the grid, got {actual}")]
    ValueCountMismatch { expected: usize, actual: usize },
    #[error("map contains a non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("degenerate value range: all voxels equal {0}")]
    DegenerateRange(f32),
    #[error("box does not intersect the map extent")]
    EmptyIntersection,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < SNAP {
        r
    } else {
        u
    }
}

/// Axis-aligned box in world coordinates (Å).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: Vec3,
    pub max: Vec3,
}

impl Box3 {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, GridError> {
        if (0..3).any(|a| !(max[a] >= min[a])) {
            return Err(GridError::InvalidParameter(format!(
                "box max {max:?} below min {min:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn size(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }
}

/// Geometry of a voxel grid without its values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub voxel_size: Vec3,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, voxel_size: Vec3, dims: [usize; 3]) -> Result<Self, GridError> {
        let spec = Self {
            origin,
            voxel_size,
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(GridError::InvalidDims(self.dims));
        }
        if self.voxel_size.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(GridError::InvalidVoxelSize(self.voxel_size));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(GridError::InvalidParameter(format!(
                "non-finite origin {:?}",
                self.origin
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn world_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + i as f64 * self.voxel_size[0],
            self.origin[1] + j as f64 * self.voxel_size[1],
            self.origin[2] + k as f64 * self.voxel_size[2],
        ]
    }

    /// Box spanned by the first and last voxel centres.
    pub fn extent(&self) -> Box3 {
        let last = self.world_position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        Box3 {
            min: self.origin,
            max: last,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    spec: GridSpec,
    values: Vec<f32>,
}

impl DensityMap {
    pub fn new(spec: GridSpec, values: Vec<f32>) -> Result<Self, GridError> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(GridError::ValueCountMismatch {
                expected: spec.len(),
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Result<Self, GridError> {
        spec.validate()?;
        Ok(Self {
            values: vec![0.0; spec.len()],
            spec,
        })
    }

    /// Builds a map by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn(
        spec: GridSpec,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, GridError> {
        spec.validate()?;
        let [nx, ny, nz] = spec.dims;
        let mut values = Vec::with_capacity(spec.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn voxel_size(&self) -> Vec3 {
        self.spec.voxel_size
    }

    pub fn origin(&self) -> Vec3 {
        self.spec.origin
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Mutable access to the payload. Callers must keep values finite.
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.spec.dims[1] + j) * self.spec.dims[0] + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.index(i, j, k);
        self.values[idx] = v;
    }

    pub fn world_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.spec.world_position(i, j, k)
    }

    pub fn extent(&self) -> Box3 {
        self.spec.extent()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    pub fn with_values(&self, values: Vec<f32>) -> Result<Self, GridError> {
        Self::new(self.spec, values)
    }

    /// Same dims, voxel size and origin.
    pub fn same_grid(&self, other: &DensityMap) -> bool {
        let close = |a: Vec3, b: Vec3| (0..3).all(|i| (a[i] - b[i]).abs() <= 1e-6 * (1.0 + a[i].abs()));
        self.spec.dims == other.spec.dims
            && close(self.spec.voxel_size, other.spec.voxel_size)
            && close(self.spec.origin, other.spec.origin)
    }

    /// Trilinear interpolation at a world position; zero outside the support.
    pub fn sample_trilinear(&self, p: Vec3) -> f64 {
        let mut lo = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = self.spec.dims[a];
            let u = snap((p[a] - self.spec.origin[a]) / self.spec.voxel_size[a]);
            if u < 0.0 || u > (n - 1) as f64 {
                return 0.0;
            }
            let i0 = (u.floor() as usize).min(n.saturating_sub(2));
            lo[a] = i0;
            frac[a] = u - i0 as f64;
        }
        let mut acc = 0.0;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
            if wz == 0.0 {
                continue;
            }
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                if wy == 0.0 {
                    continue;
                }
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                    if wx == 0.0 {
                        continue;
                    }
                    let v = self.get(lo[0] + dx, lo[1] + dy, lo[2] + dz) as f64;
                    acc += wx * wy * wz * v;
                }
            }
        }
        acc
    }

    /// Copies the block `[lo, lo + dims)` into a new map.
    pub fn subvolume(&self, lo: [usize; 3], dims: [usize; 3]) -> Result<DensityMap, GridError> {
        if (0..3).any(|a| dims[a] == 0 || lo[a] + dims[a] > self.spec.dims[a]) {
            return Err(GridError::InvalidParameter(format!(
                "block {lo:?}+{dims:?} outside map dims {:?}",
                self.spec.dims
            )));
        }
        let spec = GridSpec {
            origin: self.world_position(lo[0], lo[1], lo[2]),
            voxel_size: self.spec.voxel_size,
            dims,
        };
        let mut values = Vec::with_capacity(spec.len());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                let start = self.index(lo[0], lo[1] + j, lo[2] + k);
                values.extend_from_slice(&self.values[start..start + dims[0]]);
            }
        }
        Ok(DensityMap { spec, values })
    }
}

/// Resamples `m` onto `target` by trilinear interpolation.
pub fn resample_trilinear(m: &DensityMap, target: &GridSpec) -> Result<DensityMap, GridError> {
    target.validate()?;
    let [nx, ny, _] = target.dims;
    let mut values = vec![0f32; target.len()];
    values
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, plane)| {
            for j in 0..ny {
                for i in 0..nx {
                    let p = target.world_position(i, j, k);
                    plane[j * nx + i] = m.sample_trilinear(p) as f32;
                }
            }
        });
    DensityMap::new(*target, values)
}

/// Scales values affinely onto [0, 1].
pub fn minmax_normalize(m: &DensityMap) -> Result<DensityMap, GridError> {
    let (lo, hi) = m.min_max();
    if hi <= lo {
        return Err(GridError::DegenerateRange(lo));
    }
    let range = hi as f64 - lo as f64;
    let values = m
        .values
        .iter()
        .map(|&v| ((v as f64 - lo as f64) / range) as f32)
        .collect();
    Ok(DensityMap {
        spec: m.spec,
        values,
    })
}

/// Embeds `m` in a zero volume larger by `pad` voxels on every side.
pub fn pad_center(m: &DensityMap, pad: usize) -> DensityMap {
    if pad == 0 {
        return m.clone();
    }
    let [nx, ny, nz] = m.dims();
    let dims = [nx + 2 * pad, ny + 2 * pad, nz + 2 * pad];
    let vs = m.voxel_size();
    let origin = [
        m.origin()[0] - pad as f64 * vs[0],
        m.origin()[1] - pad as f64 * vs[1],
        m.origin()[2] - pad as f64 * vs[2],
    ];
    let spec = GridSpec {
        origin,
        voxel_size: vs,
        dims,
    };
    let mut values = vec![0f32; spec.len()];
    for k in 0..nz {
        for j in 0..ny {
            let src = m.index(0, j, k);
            let dst = ((k + pad) * dims[1] + j + pad) * dims[0] + pad;
            values[dst..dst + nx].copy_from_slice(&m.values[src..src + nx]);
        }
    }
    DensityMap { spec, values }
}

/// Crops to the smallest voxel-aligned block covering `b ∩ extent(m)`.
pub fn crop_to_box(m: &DensityMap, b: &Box3) -> Result<DensityMap, GridError> {
    let ext = m.extent();
    let mut lo = [0usize; 3];
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let start = b.min[a].max(ext.min[a]);
        let end = b.max[a].min(ext.max[a]);
        if start > end {
            return Err(GridError::EmptyIntersection);
        }
        let vs = m.voxel_size()[a];
        let o = m.origin()[a];
        let i0 = snap((start - o) / vs).floor().max(0.0) as usize;
        let i1 = (snap((end - o) / vs).ceil().max(0.0) as usize).min(m.dims()[a] - 1);
        if i1 < i0 {
            return Err(GridError::EmptyIntersection);
        }
        lo[a] = i0;
        dims[a] = i1 - i0 + 1;
    }
    m.subvolume(lo, dims)
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma`.
pub fn add_gaussian_noise(m: &DensityMap, sigma: f64, seed: u64) -> Result<DensityMap, GridError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(GridError::InvalidParameter(format!("noise sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(m.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| GridError::InvalidParameter(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = m
        .values
        .iter()
        .map(|&v| (v as f64 + normal.sample(&mut rng)) as f32)
        .collect();
    Ok(DensityMap {
        spec: m.spec,
        values,
    })
}

/// Normalized 1-D Gaussian weights for offsets `-r..=r`, `r = ceil(3σ/h)`.
pub fn gaussian_kernel_1d(sigma: f64, spacing: f64) -> Vec<f64> {
    let radius = (3.0 * sigma / spacing).ceil() as i64;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|t| {
            let x = t as f64 * spacing;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Convolves `values` along one axis with `kernel`, zero boundary.
fn convolve_axis(values: &[f32], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f32> {
    let radius = (kernel.len() / 2) as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n = dims[axis] as i64;
    let mut out = vec![0f32; values.len()];
    let plane = dims[0] * dims[1];
    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(k, out_plane)| {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = (k * dims[1] + j) * dims[0] + i;
                    let pos = [i, j, k][axis] as i64;
                    let mut acc = 0.0f64;
                    for (t, w) in kernel.iter().enumerate() {
                        let q = pos + t as i64 - radius;
                        if q < 0 || q >= n {
                            continue;
                        }
                        let src = (idx as i64 + (q - pos) * stride as i64) as usize;
                        acc += w * values[src] as f64;
                    }
                    out_plane[j * dims[0] + i] = acc as f32;
                }
            }
        });
    out
}

/// Separable Gaussian blur with standard deviation `sigma` in Å.
pub fn gaussian_blur(m: &DensityMap, sigma: f64) -> Result<DensityMap, GridError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(GridError::InvalidParameter(format!("blur sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(m.clone());
    }
    let mut values = m.values.clone();
    for axis in 0..3 {
        let kernel = gaussian_kernel_1d(sigma, m.voxel_size()[axis]);
        if kernel.len() > 1 {
            values = convolve_axis(&values, m.dims(), axis, &kernel);
        }
    }
    Ok(DensityMap {
        spec: m.spec,
        values,
    })
}

/// Block-averages along `axis` by `factor`, then linearly interpolates back
/// to the original sampling. A trailing partial block averages what remains.
pub fn anisotropic_degrade(m: &DensityMap, axis: Axis, factor: usize) -> Result<DensityMap, GridError> {
    if factor == 0 {
        return Err(GridError::InvalidParameter("anisotropy factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(m.clone());
    }
    let a = axis.index();
    let dims = m.dims();
    let n = dims[a];
    let groups: Vec<(usize, usize)> = (0..n)
        .step_by(factor)
        .map(|s| (s, (s + factor).min(n)))
        .collect();
    let centres: Vec<f64> = groups
        .iter()
        .map(|&(s, e)| (s + e - 1) as f64 / 2.0)
        .collect();
    // For each original index: (group index, weight of that group, weight of the next).
    let interp: Vec<(usize, f64, f64)> = (0..n)
        .map(|i| {
            let x = i as f64;
            if x <= centres[0] {
                return (0, 1.0, 0.0);
            }
            let last = centres.len() - 1;
            if x >= centres[last] {
                return (last, 1.0, 0.0);
            }
            let g = centres.iter().rposition(|&c| c <= x).unwrap_or(0);
            let t = (x - centres[g]) / (centres[g + 1] - centres[g]);
            (g, 1.0 - t, t)
        })
        .collect();
    let stride = [1, dims[0], dims[0] * dims[1]][a];
    let mut out = vec![0f32; m.len()];
    let mut line = vec![0f64; groups.len()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let pos = [i, j, k];
                if pos[a] != 0 {
                    continue;
                }
                let base = m.index(i, j, k);
                for (g, &(s, e)) in groups.iter().enumerate() {
                    let sum: f64 = (s..e).map(|q| m.values[base + q * stride] as f64).sum();
                    line[g] = sum / (e - s) as f64;
                }
                for (q, &(g, w0, w1)) in interp.iter().enumerate() {
                    let mut v = w0 * line[g];
                    if w1 != 0.0 {
                        v += w1 * line[g + 1];
                    }
                    out[base + q * stride] = v as f32;
                }
            }
        }
    }
    Ok(DensityMap {
        spec: m.spec,
        values: out,
    })
}

/// Ranges for the random input augmentations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Upper bound of the noise standard deviation, in normalized value units.
    pub noise_sigma_max: f64,
    /// Upper bound of the blur standard deviation, Å.
    pub blur_sigma_max: f64,
    pub anisotropy_factors: Vec<usize>,
    /// Probability that each augmentation is applied.
    pub probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma_max: 0.05,
            blur_sigma_max: 1.5,
            anisotropy_factors: vec![1, 2],
            probability: 0.5,
        }
    }
}

/// Applies anisotropy, blur and noise (in that order), each with the
/// configured probability and parameters drawn from `rng`.
pub fn random_augment(
    m: &DensityMap,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<DensityMap, GridError> {
    let mut out = m.clone();
    if rng.random::<f64>() < cfg.probability && !cfg.anisotropy_factors.is_empty() {
        let factor = cfg.anisotropy_factors[rng.random_range(0..cfg.anisotropy_factors.len())];
        let axis = [Axis::X, Axis::Y, Axis::Z][rng.random_range(0..3)];
        out = anisotropic_degrade(&out, axis, factor)?;
    }
    if rng.random::<f64>() < cfg.probability {
        let sigma = rng.random::<f64>() * cfg.blur_sigma_max;
        out = gaussian_blur(&out, sigma)?;
    }
    if rng.random::<f64>() < cfg.probability {
        let sigma = rng.random::<f64>() * cfg.noise_sigma_max;
        let seed = rng.random::<u64>();
        out = add_gaussian_noise(&out, sigma, seed)?;
    }
    Ok(out)
}
