//! Wall-clock scaling of end-to-end inference with structure size.

use std::path::Path;
use std::time::Instant;

use mapgen_core::{Atom, AtomicStructure};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::infer::{infer, InferOptions, TileModel};

/// Residues per helix in [`helix_bundle`].
pub const HELIX_LENGTH: usize = 40;
/// Axis-to-axis distance between neighbouring helices, Å.
pub const HELIX_SPACING: f64 = 10.0;

/// Backbone + CB atoms of an ideal α-helix residue in helix-local
/// cylindrical coordinates: (name, element, Z, radius Å, phase offset °, z offset Å).
const RESIDUE_ATOMS: [(&str, &str, u32, f64, f64, f64); 5] = [
    ("N", "N", 7, 1.55, -28.0, -0.85),
    ("CA", "C", 6, 2.30, 0.0, 0.0),
    ("C", "C", 6, 1.65, 28.0, 0.70),
    ("O", "O", 8, 2.05, 40.0, 1.90),
    ("CB", "C", 6, 3.30, 5.0, -0.50),
];

/// A bundle of antiparallel ideal helices on a square lattice with
/// `residues` alanine residues in total.
pub fn helix_bundle(residues: usize) -> Result<AtomicStructure> {
    if residues == 0 {
        return Err(PipelineError::Usage("helix bundle needs at least one residue".into()));
    }
    let helices = residues.div_ceil(HELIX_LENGTH);
    let cols = (helices as f64).sqrt().ceil() as usize;
    let mut atoms = Vec::with_capacity(residues * RESIDUE_ATOMS.len());
    for r in 0..residues {
        let h = r / HELIX_LENGTH;
        let k = r % HELIX_LENGTH;
        let (cx, cy) = ((h % cols) as f64 * HELIX_SPACING, (h / cols) as f64 * HELIX_SPACING);
        let up = h % 2 == 0;
        let z0 = if up { k as f64 * 1.5 } else { (HELIX_LENGTH - 1 - k) as f64 * 1.5 };
        let phi = (k as f64 * 100.0).to_radians();
        for (name, element, z, radius, dphi, dz) in RESIDUE_ATOMS {
            let a = phi + dphi.to_radians();
            let dz = if up { dz } else { -dz };
            atoms.push(Atom {
                serial: atoms.len() as i64 + 1,
                name: name.to_string(),
                element: element.to_string(),
                atomic_number: z,
                position: [cx + radius * a.cos(), cy + radius * a.sin(), z0 + dz],
                residue_name: "ALA".into(),
                residue_index: r as i32 + 1,
                chain_id: (b'A' + (h % 26) as u8) as char,
                is_backbone: name != "CB",
                hetero: false,
            });
        }
    }
    Ok(AtomicStructure::new(format!("helix{residues}"), atoms)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub id: String,
    pub residues: usize,
    pub seconds: f64,
}

/// Times `infer` per structure, keeping the fastest of `repeats` runs.
pub fn bench_runtime(
    structures: &[AtomicStructure],
    model: &dyn TileModel,
    opts: &InferOptions,
    repeats: usize,
) -> Result<Vec<BenchRow>> {
    structures
        .iter()
        .map(|s| {
            let mut best = f64::INFINITY;
            for _ in 0..repeats.max(1) {
                let t = Instant::now();
                let m = infer(s, model, None, opts)?;
                let secs = t.elapsed().as_secs_f64();
                std::hint::black_box(m);
                best = best.min(secs);
            }
            log::info!("{}: {} residues, {:.3} s", s.id, s.residue_count, best);
            Ok(BenchRow {
                id: s.id.clone(),
                residues: s.residue_count,
                seconds: best,
            })
        })
        .collect()
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::Config(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

/// Ranks starting at 1; ties share their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of the ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
