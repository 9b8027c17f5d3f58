mod support;

use mapgen::bench::{bench_runtime, helix_bundle, spearman, write_bench_csv, BenchRow};
use mapgen::curate::make_simmap;
use mapgen::evaluate::{emit_report, evaluate, read_report};
use mapgen::infer::{infer, infer_map, InferOptions, PassThrough, TileModel};
use mapgen::PipelineError;
use mapgen_core::{DensityMap, GridSpec, MetricError, SsimParams};
use mapgen_nn::Generator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

fn micro_model(seed: u64) -> Generator<f32> {
    Generator::new(&micro_generator(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn pass_through_inference_reproduces_the_simmap() {
    for residues in [5, 60, 150] {
        let s = helix_bundle(residues).unwrap();
        let opts = InferOptions::default();
        let out = infer(&s, &PassThrough, None, &opts).unwrap();
        let grid = mapgen_core::simulate::default_grid_for(&s, opts.margin, opts.voxel).unwrap();
        let sim = make_simmap(&s, &grid, &opts.simmap, 0).unwrap();
        assert!(out.same_grid(&sim));
        assert!(max_abs_diff(&out, &sim) <= 1e-6);
    }
}

#[test]
fn output_lives_on_the_requested_grid() {
    let s = helix_bundle(40).unwrap();
    let grid = GridSpec::new([-3.0, 1.0, 2.0], [1.0; 3], [37, 29, 45]).unwrap();
    let out = infer(&s, &micro_model(1), Some(&grid), &InferOptions::default()).unwrap();
    assert_eq!(out.spec(), &grid);
    let (lo, hi) = out.min_max();
    assert!(lo >= 0.0 && hi <= 1.0);
}

#[test]
fn inference_is_deterministic() {
    let s = helix_bundle(50).unwrap();
    let model = micro_model(2);
    let a = infer(&s, &model, None, &InferOptions::default()).unwrap();
    let b = infer(&s, &model, None, &InferOptions::default()).unwrap();
    assert_eq!(a, b);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| infer(&s, &model, None, &InferOptions::default()).unwrap());
    assert_eq!(a, single);
}

#[test]
fn inference_is_translation_consistent() {
    let s = helix_bundle(45).unwrap();
    let model = micro_model(3);
    let grid = centred_grid(&s, 40);
    let shift = [7.0, -12.0, 31.0];
    let moved_grid = GridSpec::new(
        [grid.origin[0] + shift[0], grid.origin[1] + shift[1], grid.origin[2] + shift[2]],
        grid.voxel_size,
        grid.dims,
    )
    .unwrap();
    let opts = InferOptions::default();
    let a = infer(&s, &model, Some(&grid), &opts).unwrap();
    let b = infer(&s.translated(shift), &model, Some(&moved_grid), &opts).unwrap();
    assert_eq!(b.spec(), &moved_grid);
    let diff = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(diff < 1e-5, "max diff {diff}");
}

struct Shrink;

impl TileModel for Shrink {
    fn predict(&self, tiles: &[Vec<f32>]) -> mapgen::Result<Vec<Vec<f32>>> {
        Ok(tiles[1..].to_vec())
    }
}

#[test]
fn tile_count_mismatch_is_reported() {
    let sim = DensityMap::zeros(GridSpec::new([0.0; 3], [1.0; 3], [30; 3]).unwrap()).unwrap();
    assert!(infer_map(&sim, &Shrink, 20).is_err());
}

fn random_map(spec: GridSpec, seed: u64) -> DensityMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DensityMap::from_fn(spec, |_, _, _| rng.random_range(0.0..1.0f32)).unwrap()
}

#[test]
fn evaluation_identities() {
    let spec = GridSpec::new([0.0; 3], [1.0; 3], [14, 12, 10]).unwrap();
    let reference = random_map(spec, 1);
    let p = SsimParams::default();
    let same = evaluate(&reference, &reference, false, &p, None).unwrap();
    for v in [same.ssim, same.correlation, same.correlation_about_mean, same.pcc] {
        assert!((v - 1.0).abs() < 1e-6);
    }
    let affine = reference.with_values(reference.values().iter().map(|v| 0.5 * v + 0.1).collect()).unwrap();
    let r = evaluate(&affine, &reference, false, &p, None).unwrap();
    assert!((r.correlation_about_mean - 1.0).abs() < 1e-6);
    assert!((r.pcc - 1.0).abs() < 1e-6);
    assert!(r.correlation < 1.0 - 1e-4);
    for seed in 2..12 {
        let r = evaluate(&random_map(spec, seed), &reference, false, &p, None).unwrap();
        for v in [r.ssim, r.correlation, r.correlation_about_mean, r.pcc] {
            assert!(v.is_finite() && (-1.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn evaluation_grid_handling() {
    let reference = random_map(GridSpec::new([0.0; 3], [1.0; 3], [12; 3]).unwrap(), 4);
    let p = SsimParams::default();
    let other_dims = random_map(GridSpec::new([0.0; 3], [1.0; 3], [12, 12, 13]).unwrap(), 5);
    match evaluate(&other_dims, &reference, false, &p, None) {
        Err(e @ PipelineError::Metric(MetricError::DimsMismatch(..))) => assert_eq!(e.category(), "DimsMismatch"),
        other => panic!("{other:?}"),
    }
    let r = evaluate(&other_dims, &reference, true, &p, None).unwrap();
    assert_eq!(r.voxel_count, reference.len());
    let shifted = DensityMap::new(GridSpec::new([0.5, 0.0, 0.0], [1.0; 3], [12; 3]).unwrap(), reference.values().to_vec()).unwrap();
    assert!(matches!(evaluate(&shifted, &reference, false, &p, None), Err(PipelineError::GridMismatch(_))));
}

#[test]
fn report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GridSpec::new([0.0; 3], [1.0; 3], [10; 3]).unwrap();
    let r = evaluate(&random_map(spec, 8), &random_map(spec, 9), false, &SsimParams::default(), Some(0.3)).unwrap();
    let path = dir.path().join("report.json");
    emit_report(&r, &path).unwrap();
    assert_eq!(read_report(&path).unwrap(), r);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"schema_version\""));
}

#[test]
fn bench_rows_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let structures: Vec<_> = [20, 80, 200].iter().map(|&n| helix_bundle(n).unwrap()).collect();
    let rows = bench_runtime(&structures, &PassThrough, &InferOptions::default(), 1).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.residues).collect::<Vec<_>>(), vec![20, 80, 200]);
    assert!(rows.iter().all(|r| r.seconds > 0.0));
    let path = dir.path().join("bench.csv");
    write_bench_csv(&path, &rows).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["id", "residues", "seconds"]);
    let back: Vec<BenchRow> = reader.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(back, rows);
    assert!(spearman(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.3, 0.2, 0.4]).unwrap() > 0.7);
}

#[test]
fn helix_bundle_is_compact() {
    let s = helix_bundle(400).unwrap();
    // Ten 40-residue helices, about 60 Å long, on a 4 x 3 lattice.
    let b = mapgen_core::structio::bounding_box(&s, 0.0).unwrap();
    let size = b.size();
    assert!(size[2] > 55.0 && size[2] < 70.0, "{size:?}");
    assert!(size[0] < 40.0 && size[1] < 40.0, "{size:?}");
}
