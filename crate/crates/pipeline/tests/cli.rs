mod support;

use std::path::Path;
use std::process::Command;

use mapgen::bench::helix_bundle;
use mapgen::cli::run;
use mapgen::config::RunConfig;
use mapgen_core::mapio::{read_mrc_file, write_mrc_file};
use mapgen_core::structio::write_pdb;
use mapgen_core::{DensityMap, GridSpec};
use support::*;

fn mapgen(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mapgen"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn argv(args: &[&str]) -> Vec<String> {
    std::iter::once("mapgen").chain(args.iter().copied()).map(String::from).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_helix(dir: &Path, residues: usize) -> std::path::PathBuf {
    let path = dir.join(format!("helix{residues}.pdb"));
    write_text(&path, &write_pdb(&helix_bundle(residues).unwrap()));
    path
}

#[test]
fn simulate_writes_a_map() {
    let dir = tempfile::tempdir().unwrap();
    let pdb = write_helix(dir.path(), 30);
    let out = dir.path().join("a.mrc");
    let code = run(argv(&["simulate", "--pdb", s(&pdb), "--resolution", "2", "--voxel", "1", "--out", s(&out)]));
    assert_eq!(code, 0);
    let m = read_mrc_file(&out).unwrap();
    assert_eq!(m.voxel_size(), [1.0; 3]);
    assert_eq!(m.min_max().1, 1.0);
    let again = dir.path().join("b.mrc");
    assert_eq!(run(argv(&["simulate", "--pdb", s(&pdb), "--out", s(&again), "--threads", "1"])), 0);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let (code, _, err) = mapgen(&["simulate", "--pdb", "a.pdb"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(mapgen(&["simulate", "--pdb", "a.pdb", "--out", "x.mrc", "--resolution", "-1"]).0, 2);
    assert_eq!(mapgen(&["simulate", "--pdb", "a.pdb", "--out", "x.mrc", "--convention", "nope"]).0, 2);
    assert_eq!(mapgen(&["tile", "--map", "a.mrc", "--out", "t", "--stride", "33"]).0, 2);
    assert_eq!(mapgen(&["frobnicate"]).0, 2);
    assert_eq!(mapgen(&[]).0, 2);
}

#[test]
fn help_and_version_succeed() {
    for sub in ["simulate", "curate", "tile", "train", "infer", "eval", "bench", "info"] {
        let (code, out, _) = mapgen(&[sub, "--help"]);
        assert_eq!(code, 0, "{sub}");
        assert!(out.contains("Usage"), "{sub}");
    }
    let (code, out, _) = mapgen(&["--version"]);
    assert_eq!(code, 0);
    assert!(out.contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn mismatched_eval_reports_dims_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("x.mrc");
    let b = dir.path().join("y.mrc");
    let spec = |n| GridSpec::new([0.0; 3], [1.0; 3], [10, 10, n]).unwrap();
    write_mrc_file(&DensityMap::from_fn(spec(10), |i, j, k| (i + j * k) as f32).unwrap(), &a).unwrap();
    write_mrc_file(&DensityMap::from_fn(spec(11), |i, j, k| (i * j + k) as f32).unwrap(), &b).unwrap();
    let report = dir.path().join("report.json");
    let (code, _, err) = mapgen(&["eval", "--a", s(&a), "--b", s(&b), "--out", s(&report)]);
    assert_eq!(code, 1);
    let line = err.lines().find(|l| l.starts_with("error: ")).unwrap();
    assert!(line.starts_with("error: DimsMismatch: "), "{line}");
    assert!(!report.exists());

    assert_eq!(mapgen(&["eval", "--a", s(&a), "--b", s(&b), "--out", s(&report), "--resample"]).0, 0);
    let (code, _, _) = mapgen(&["eval", "--a", s(&a), "--b", s(&a), "--out", s(&report)]);
    assert_eq!(code, 0);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["ssim", "correlation", "correlation_about_mean", "pcc"] {
        assert!((r[key].as_f64().unwrap() - 1.0).abs() < 1e-6, "{key}");
    }
    assert_eq!(r["schema_version"], 1);
}

#[test]
fn unwritable_outputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("x.mrc");
    write_mrc_file(&DensityMap::from_fn(GridSpec::new([0.0; 3], [1.0; 3], [8; 3]).unwrap(), |i, j, k| (i + j + k) as f32).unwrap(), &a).unwrap();
    let not_a_dir = dir.path().join("x.mrc/report.json");
    for out in [s(&not_a_dir), "/proc/mapgen-report.json"] {
        let (code, _, err) = mapgen(&["eval", "--a", s(&a), "--b", s(&a), "--out", out]);
        assert_eq!(code, 1, "{out}");
        assert!(err.contains("error: IoError: "), "{err}");
    }
    let (code, _, err) = mapgen(&["simulate", "--pdb", "/nonexistent.pdb", "--out", "x.mrc"]);
    assert_eq!(code, 1);
    assert!(err.contains("error: IoError: "), "{err}");
}

#[test]
fn bad_inputs_report_their_category() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.mrc");
    write_text(&junk, &"x".repeat(2000));
    let (code, _, err) = mapgen(&["eval", "--a", s(&junk), "--b", s(&junk), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(code, 1);
    assert!(err.contains("error: BadMagic: "), "{err}");
    let cfg = dir.path().join("bad.toml");
    write_text(&cfg, "[train]\nepochs = 0\n");
    let pdb = write_helix(dir.path(), 5);
    let (code, _, err) = mapgen(&["simulate", "--pdb", s(&pdb), "--out", s(&dir.path().join("o.mrc")), "--config", s(&cfg)]);
    assert_eq!(code, 1);
    assert!(err.contains("error: ConfigError: "), "{err}");
}

#[test]
fn info_lists_versions_configs_and_sizes() {
    let (code, out, _) = mapgen(&["info"]);
    assert_eq!(code, 0);
    assert!(out.contains(env!("CARGO_PKG_VERSION")));
    assert!(out.contains("generator parameters: 10734081"));
    assert!(out.contains("discriminator parameters: 1262817"));
    let toml_start = out.find("[data]").unwrap();
    assert_eq!(RunConfig::from_toml(&out[toml_start..]).unwrap(), RunConfig::default());
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}

#[test]
fn curate_and_tile_commands() {
    let dir = tempfile::tempdir().unwrap();
    let pdb = write_helix(dir.path(), 40);
    let raw = dir.path().join("raw.mrc");
    assert_eq!(run(argv(&["simulate", "--pdb", s(&pdb), "--out", s(&raw), "--resolution", "4", "--margin", "12"])), 0);
    let exp = dir.path().join("exp.mrc");
    let sim = dir.path().join("sim.mrc");
    let (code, out, _) = mapgen(&["curate", "--pdb", s(&pdb), "--map", s(&raw), "--out", s(&exp), "--sim-out", s(&sim)]);
    assert_eq!(code, 0);
    assert!(out.contains("accepted"), "{out}");
    let (e, m) = (read_mrc_file(&exp).unwrap(), read_mrc_file(&sim).unwrap());
    assert!(e.same_grid(&m));
    assert!(e.dims().iter().zip(read_mrc_file(&raw).unwrap().dims()).all(|(a, b)| *a < b));

    let tiles = dir.path().join("tiles");
    assert_eq!(run(argv(&["tile", "--map", s(&exp), "--out", s(&tiles), "--stride", "20"])), 0);
    let back = mapgen_core::tiler::read_tileset_dir(&tiles).unwrap();
    assert_eq!(mapgen_core::tiler::assemble_tiles(&back, &back.tiles).unwrap().values(), e.values());
}

#[test]
fn train_infer_bench_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pdb = write_helix(d, 40);
    let raw = d.join("raw.mrc");
    assert_eq!(run(argv(&["simulate", "--pdb", s(&pdb), "--out", s(&raw), "--resolution", "4", "--convention", "eman2-pdb2mrc"])), 0);
    write_text(&d.join("pairs.csv"), "structure,map,split\nhelix40.pdb,raw.mrc,train\nhelix40.pdb,raw.mrc,validation\n");
    let cfg = d.join("micro.toml");
    write_text(&cfg, &micro_run_config().to_toml());

    let runs = d.join("run");
    let manifest = d.join("pairs.csv");
    let args = ["train", "--manifest", s(&manifest), "--out", s(&runs), "--config", s(&cfg), "--epochs", "2", "--batch", "2", "--max-steps", "3", "--seed", "5", "--threads", "1"];
    let (code, _, err) = mapgen(&args);
    assert_eq!(code, 0, "{err}");
    for f in ["epoch_0001.ckpt", "epoch_0002.ckpt", "loss_history.csv", "config.toml"] {
        assert!(runs.join(f).is_file(), "{f}");
    }
    let saved = RunConfig::load(&runs.join("config.toml")).unwrap();
    assert_eq!(saved.train.seed, 5);
    assert_eq!(saved.generator, micro_generator());
    let history = std::fs::read_to_string(runs.join("loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    // Same seed, same checkpoint bytes.
    let again = d.join("again");
    let mut args2 = args;
    args2[4] = s(&again);
    assert_eq!(mapgen(&args2).0, 0);
    assert_eq!(
        std::fs::read(runs.join("epoch_0002.ckpt")).unwrap(),
        std::fs::read(again.join("epoch_0002.ckpt")).unwrap()
    );

    let gen = d.join("gen.mrc");
    let ckpt = runs.join("epoch_0002.ckpt");
    let (code, _, err) = mapgen(&["infer", "--pdb", s(&pdb), "--checkpoint", s(&ckpt), "--out", s(&gen), "--map", s(&raw)]);
    assert_eq!(code, 0, "{err}");
    assert!(read_mrc_file(&gen).unwrap().same_grid(&read_mrc_file(&raw).unwrap()));
    let report = d.join("report.json");
    assert_eq!(mapgen(&["eval", "--a", s(&gen), "--b", s(&raw), "--out", s(&report)]).0, 0);

    let bench = d.join("bench.csv");
    let (code, out, err) = mapgen(&["bench", "--checkpoint", s(&ckpt), "--out", s(&bench), "--sizes", "20,60", "--repeats", "1"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("spearman"));
    assert_eq!(std::fs::read_to_string(&bench).unwrap().lines().count(), 3);

    let (code, _, err) = mapgen(&["train", "--manifest", s(&d.join("missing.csv")), "--out", s(&runs)]);
    assert_eq!(code, 1);
    assert!(err.contains("IoError"));
}
