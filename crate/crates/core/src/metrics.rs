//! Map similarity scores: windowed 3-D SSIM, plain correlation, correlation
//! about the mean and the Pearson correlation coefficient.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::DensityMap;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("map dims differ: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("map dims {dims:?} smaller than the {window}-voxel SSIM window")]
    MapTooSmall { dims: [usize; 3], window: usize },
    #[error("zero norm over the selected voxels")]
    ZeroNorm,
    #[error("zero variance over the selected voxels")]
    ZeroVariance,
    #[error("envelope selects no voxels")]
    EmptyMask,
    #[error("invalid SSIM parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// `None` uses max − min of the reference (first) map.
    pub data_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: None,
        }
    }
}

fn check_dims(x: &DensityMap, y: &DensityMap) -> Result<(), MetricError> {
    if x.dims() != y.dims() {
        return Err(MetricError::DimsMismatch(x.dims(), y.dims()));
    }
    Ok(())
}

/// Summed-volume table with a zero border: `t[(k+1, j+1, i+1)] = Σ v[..=k, ..=j, ..=i]`.
struct Integral {
    table: Vec<f64>,
    sx: usize,
    sy: usize,
}

impl Integral {
    fn new(dims: [usize; 3], f: impl Fn(usize) -> f64) -> Self {
        let (sx, sy, sz) = (dims[0] + 1, dims[1] + 1, dims[2] + 1);
        let mut table = vec![0f64; sx * sy * sz];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                let mut row = 0.0;
                for i in 0..dims[0] {
                    row += f((k * dims[1] + j) * dims[0] + i);
                    let at = ((k + 1) * sy + j + 1) * sx + i + 1;
                    table[at] = row + table[at - sx] + table[at - sx * sy] - table[at - sx * sy - sx];
                }
            }
        }
        Self { table, sx, sy }
    }

    /// Sum over the cube `[lo, lo + w)` on each axis.
    fn cube(&self, lo: [usize; 3], w: usize) -> f64 {
        let at = |i: usize, j: usize, k: usize| self.table[(k * self.sy + j) * self.sx + i];
        let [i0, j0, k0] = lo;
        let (i1, j1, k1) = (i0 + w, j0 + w, k0 + w);
        at(i1, j1, k1) - at(i0, j1, k1) - at(i1, j0, k1) - at(i1, j1, k0) + at(i0, j0, k1) + at(i0, j1, k0)
            + at(i1, j0, k0)
            - at(i0, j0, k0)
    }
}

/// Mean local SSIM over all windows that lie fully inside the volume.
///
/// Window statistics use uniform weights and sample (N − 1) covariance
/// normalization.
pub fn ssim3d(x: &DensityMap, y: &DensityMap, p: &SsimParams) -> Result<f64, MetricError> {
    check_dims(x, y)?;
    if p.window < 3 || p.window % 2 == 0 {
        return Err(MetricError::InvalidParams(format!("window {} must be odd and >= 3", p.window)));
    }
    if !(p.k1 > 0.0 && p.k2 > 0.0) {
        return Err(MetricError::InvalidParams("k1 and k2 must be positive".into()));
    }
    let dims = x.dims();
    if dims.iter().any(|&d| d < p.window) {
        return Err(MetricError::MapTooSmall { dims, window: p.window });
    }
    let range = match p.data_range {
        Some(r) => r,
        None => {
            let (lo, hi) = x.min_max();
            hi as f64 - lo as f64
        }
    };
    if !(range > 0.0 && range.is_finite()) {
        return Err(MetricError::InvalidParams(format!("data range {range} must be positive")));
    }
    let c1 = (p.k1 * range).powi(2);
    let c2 = (p.k2 * range).powi(2);
    let xv = x.values();
    let yv = y.values();
    let sx = Integral::new(dims, |i| xv[i] as f64);
    let sy = Integral::new(dims, |i| yv[i] as f64);
    let sxx = Integral::new(dims, |i| (xv[i] as f64).powi(2));
    let syy = Integral::new(dims, |i| (yv[i] as f64).powi(2));
    let sxy = Integral::new(dims, |i| xv[i] as f64 * yv[i] as f64);
    let w = p.window;
    let n = (w * w * w) as f64;
    let cov_norm = n / (n - 1.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..=dims[2] - w {
        for j in 0..=dims[1] - w {
            for i in 0..=dims[0] - w {
                let lo = [i, j, k];
                let ux = sx.cube(lo, w) / n;
                let uy = sy.cube(lo, w) / n;
                let vx = cov_norm * (sxx.cube(lo, w) / n - ux * ux);
                let vy = cov_norm * (syy.cube(lo, w) / n - uy * uy);
                let vxy = cov_norm * (sxy.cube(lo, w) / n - ux * uy);
                total += ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn masked_pairs(x: &DensityMap, y: &DensityMap, envelope: Option<f64>) -> Result<Vec<(f64, f64)>, MetricError> {
    check_dims(x, y)?;
    let pairs: Vec<(f64, f64)> = x
        .values()
        .iter()
        .zip(y.values())
        .filter(|(&a, _)| envelope.is_none_or(|t| a as f64 > t))
        .map(|(&a, &b)| (a as f64, b as f64))
        .collect();
    if pairs.is_empty() {
        return Err(MetricError::EmptyMask);
    }
    Ok(pairs)
}

/// ⟨X, Y⟩ / (‖X‖ ‖Y‖) over voxels where `x > envelope` (all voxels if `None`).
pub fn correlation(x: &DensityMap, y: &DensityMap, envelope: Option<f64>) -> Result<f64, MetricError> {
    let pairs = masked_pairs(x, y, envelope)?;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return Err(MetricError::ZeroNorm);
    }
    Ok(xy / (xx.sqrt() * yy.sqrt()))
}

/// Correlation of the deviations of each map from its own mean over the mask.
pub fn correlation_about_mean(x: &DensityMap, y: &DensityMap, envelope: Option<f64>) -> Result<f64, MetricError> {
    let pairs = masked_pairs(x, y, envelope)?;
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        let (da, db) = (a - mx, b - my);
        xy += da * db;
        xx += da * da;
        yy += db * db;
    }
    if xx == 0.0 || yy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok(xy / (xx.sqrt() * yy.sqrt()))
}

/// Pearson correlation coefficient over every voxel.
pub fn pcc(x: &DensityMap, y: &DensityMap) -> Result<f64, MetricError> {
    check_dims(x, y)?;
    let xv = x.values();
    let yv = y.values();
    let n = xv.len() as f64;
    let x_bar = xv.iter().map(|&v| v as f64).sum::<f64>() / n;
    let y_bar = yv.iter().map(|&v| v as f64).sum::<f64>() / n;
    let cov: f64 = xv
        .iter()
        .zip(yv)
        .map(|(&a, &b)| (a as f64 - x_bar) * (b as f64 - y_bar))
        .sum();
    let var_x: f64 = xv.iter().map(|&a| (a as f64 - x_bar).powi(2)).sum();
    let var_y: f64 = yv.iter().map(|&b| (b as f64 - y_bar).powi(2)).sum();
    if var_x == 0.0 || var_y == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok(cov / (var_x * var_y).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub ssim: f64,
    pub correlation: f64,
    pub correlation_about_mean: f64,
    pub pcc: f64,
    pub voxel_count: usize,
    /// Voxels inside the correlation envelope (equals `voxel_count` without one).
    pub masked_voxel_count: usize,
    pub mask_spec: String,
    pub ssim_params: SsimParams,
}

impl MetricReport {
    /// Scores `candidate` against `reference`. The reference supplies the SSIM
    /// data range and the envelope mask.
    pub fn compute(
        reference: &DensityMap,
        candidate: &DensityMap,
        ssim_params: &SsimParams,
        envelope: Option<f64>,
    ) -> Result<Self, MetricError> {
        check_dims(reference, candidate)?;
        let masked = match envelope {
            Some(t) => reference.values().iter().filter(|&&v| v as f64 > t).count(),
            None => reference.len(),
        };
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            ssim: ssim3d(reference, candidate, ssim_params)?,
            correlation: correlation(reference, candidate, envelope)?,
            correlation_about_mean: correlation_about_mean(reference, candidate, envelope)?,
            pcc: pcc(reference, candidate)?,
            voxel_count: reference.len(),
            masked_voxel_count: masked,
            mask_spec: match envelope {
                Some(t) => format!("reference > {t}"),
                None => "none (whole volume)".to_string(),
            },
            ssim_params: *ssim_params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn line(values: &[f32]) -> DensityMap {
        let spec = GridSpec::new([0.0; 3], [1.0; 3], [values.len(), 1, 1]).unwrap();
        DensityMap::new(spec, values.to_vec()).unwrap()
    }

    fn cube(n: usize, f: impl Fn(usize, usize, usize) -> f32) -> DensityMap {
        let spec = GridSpec::new([0.0; 3], [1.0; 3], [n, n, n]).unwrap();
        DensityMap::from_fn(spec, f).unwrap()
    }

    #[test]
    fn correlation_cases() {
        assert!((correlation(&line(&[1.0, 1.0]), &line(&[1.0, 0.0]), None).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(correlation(&line(&[1.0, 0.0]), &line(&[0.0, 3.0]), None).unwrap(), 0.0);
        let x = line(&[0.2, 0.4, 1.0]);
        assert!((correlation(&x, &x, None).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(correlation(&line(&[0.0, 0.0]), &line(&[1.0, 0.0]), None), Err(MetricError::ZeroNorm));
    }

    #[test]
    fn correlation_about_mean_cases() {
        let x = line(&[1.0, 2.0, 3.0]);
        assert!((correlation_about_mean(&x, &line(&[3.0, 2.0, 1.0]), None).unwrap() + 1.0).abs() < 1e-12);
        assert!((correlation_about_mean(&x, &line(&[2.5, 4.5, 6.5]), None).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(correlation_about_mean(&x, &line(&[2.0; 3]), None), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn envelope_restricts_voxels() {
        let x = line(&[0.0, 0.1, 0.9, 1.0]);
        let y = line(&[5.0, -3.0, 0.9, 1.0]);
        assert!((correlation(&x, &y, Some(0.5)).unwrap() - 1.0).abs() < 1e-12);
        assert!(correlation(&x, &y, None).unwrap() < 0.5);
        assert_eq!(correlation(&x, &y, Some(2.0)), Err(MetricError::EmptyMask));
    }

    #[test]
    fn pcc_cases() {
        let x = line(&[1.0, 2.0, 3.0, 4.0]);
        assert!((pcc(&x, &line(&[2.0, 4.0, 6.0, 8.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(pcc(&x, &line(&[1.0, 2.0])), Err(MetricError::DimsMismatch(..))));
    }

    #[test]
    fn ssim_identity_and_constants() {
        let x = cube(9, |i, j, k| ((i * 3 + j * 5 + k * 7) % 11) as f32);
        assert_eq!(ssim3d(&x, &x, &SsimParams::default()).unwrap(), 1.0);

        let (a, b) = (0.3f64, 0.7f64);
        let p = SsimParams {
            data_range: Some(1.0),
            ..SsimParams::default()
        };
        let s = ssim3d(&cube(8, |_, _, _| a as f32), &cube(8, |_, _, _| b as f32), &p).unwrap();
        let c1 = (0.01f64).powi(2);
        let (af, bf) = (a as f32 as f64, b as f32 as f64);
        let expected = (2.0 * af * bf + c1) / (af * af + bf * bf + c1);
        assert!((s - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_errors() {
        let x = cube(6, |i, _, _| i as f32);
        assert!(matches!(ssim3d(&x, &x, &SsimParams::default()), Err(MetricError::MapTooSmall { .. })));
        let p = SsimParams { window: 4, ..SsimParams::default() };
        assert!(matches!(ssim3d(&x, &x, &p), Err(MetricError::InvalidParams(_))));
        let c = cube(8, |_, _, _| 1.0);
        assert!(matches!(ssim3d(&c, &c, &SsimParams::default()), Err(MetricError::InvalidParams(_))));
    }

    #[test]
    fn report_for_identical_maps() {
        let x = cube(10, |i, j, k| ((i * j + k) % 7) as f32 / 7.0);
        let r = MetricReport::compute(&x, &x, &SsimParams::default(), None).unwrap();
        for v in [r.ssim, r.correlation, r.correlation_about_mean, r.pcc] {
            assert!((v - 1.0).abs() < 1e-9);
        }
        assert_eq!(r.voxel_count, 1000);
        assert_eq!(r.schema_version, REPORT_SCHEMA_VERSION);
    }
}
