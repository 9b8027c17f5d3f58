use std::path::Path;

use mapgen_core::grid::resample_trilinear;
use mapgen_core::{DensityMap, MetricError, MetricReport, SsimParams};

use crate::error::{PipelineError, Result};

/// Scores `generated` against `reference`. With `resample`, a generated map on
/// a different grid is first interpolated onto the reference grid.
pub fn evaluate(
    generated: &DensityMap,
    reference: &DensityMap,
    resample: bool,
    ssim: &SsimParams,
    envelope: Option<f64>,
) -> Result<MetricReport> {
    let generated = if generated.same_grid(reference) {
        generated.clone()
    } else if resample {
        resample_trilinear(generated, reference.spec())?
    } else if generated.dims() != reference.dims() {
        return Err(MetricError::DimsMismatch(reference.dims(), generated.dims()).into());
    } else {
        return Err(PipelineError::GridMismatch(
            "same dims but different origin or voxel size; pass --resample".into(),
        ));
    };
    Ok(MetricReport::compute(reference, &generated, ssim, envelope)?)
}

pub fn emit_report(report: &MetricReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}
