//! The `mapgen` command line.
//!
//! Exit codes: 0 success, 1 workflow error, 2 usage error. Failures print a
//! single `error: <Category>: <message>` line on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mapgen_core::grid::AugmentConfig;
use mapgen_core::mapio::{read_mrc_file, write_mrc_file};
use mapgen_core::simulate::default_grid_for;
use mapgen_core::structio::parse_structure;
use mapgen_core::tiler::{tile_map, write_tileset_dir};
use mapgen_core::{AtomicStructure, Convention, GridSpec};
use mapgen_nn::{DiscriminatorConfig, Generator, GeneratorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{bench_runtime, helix_bundle, spearman, write_bench_csv};
use crate::config::RunConfig;
use crate::curate::{curate_pair, filter_pair_at, make_simmap, raw_target, SimmapOptions};
use crate::dataset::{prepare_pairs, read_manifest, Dataset};
use crate::error::{PipelineError, Result};
use crate::evaluate::{emit_report, evaluate};
use crate::infer::{infer, InferOptions};
use crate::train::{init_state, read_checkpoint, train, write_loss_history};

#[derive(Debug, Parser)]
#[command(name = "mapgen", version, about = "Experimental-like cryo-EM maps from atomic structures")]
pub struct Cli {
    /// Worker threads; 1 gives the fully deterministic mode.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a density map from a structure.
    Simulate(SimulateArgs),
    /// Crop, resample and rescale an experimental map around its structure.
    Curate(CurateArgs),
    /// Cut a map into 32³ tiles.
    Tile(TileArgs),
    /// Train the generator and discriminator on a manifest of pairs.
    Train(TrainArgs),
    /// Generate a map for a structure with a trained generator.
    Infer(InferArgs),
    /// Score a generated map against a reference.
    Eval(EvalArgs),
    /// Time inference against structure size.
    Bench(BenchArgs),
    /// Version, default configuration and model sizes.
    Info,
}

/// Simulation flags shared by several subcommands.
#[derive(Debug, Args)]
pub struct SimFlags {
    /// Simulation resolution, Å.
    #[arg(long, value_parser = positive)]
    pub resolution: Option<f64>,
    /// Voxel size, Å.
    #[arg(long, value_parser = positive)]
    pub voxel: Option<f64>,
    /// Padding around the structure, Å.
    #[arg(long, value_parser = non_negative)]
    pub margin: Option<f64>,
    /// chimerax-molmap, eman2-pdb2mrc or situs-pdb2vol.
    #[arg(long, value_parser = convention)]
    pub convention: Option<Convention>,
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub pdb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Simulate on this map's grid instead of a box around the structure.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Apply random noise, blur and anisotropy.
    #[arg(long)]
    pub augment: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub pdb: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the matching simulated map here.
    #[arg(long)]
    pub sim_out: Option<PathBuf>,
    /// Resample and rescale the whole map without cropping.
    #[arg(long)]
    pub raw_targets: bool,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Output folder.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = mapgen_core::tiler::TRAINING_STRIDE, value_parser = stride)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV with columns structure,map,split.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output folder for checkpoints and the loss history.
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: Option<u64>,
    #[arg(long, value_parser = non_negative)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = stride)]
    pub stride: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_steps: Option<u64>,
    /// Train on the adversarial loss alone.
    #[arg(long)]
    pub no_l1: bool,
    /// Use uncropped targets.
    #[arg(long)]
    pub raw_targets: bool,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub pdb: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Generate on this map's grid.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, value_parser = stride)]
    pub stride: Option<usize>,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Generated map.
    #[arg(long)]
    pub a: PathBuf,
    /// Reference map.
    #[arg(long)]
    pub b: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Interpolate the generated map onto the reference grid when they differ.
    #[arg(long)]
    pub resample: bool,
    /// Restrict correlations to reference voxels above this level.
    #[arg(long)]
    pub envelope: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// CSV output (id,residues,seconds).
    #[arg(long)]
    pub out: PathBuf,
    /// Trained generator; without it a freshly initialized one is timed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Residue counts of the synthetic helix bundles.
    #[arg(long, value_delimiter = ',', default_values_t = default_bench_sizes())]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = stride)]
    pub stride: Option<usize>,
    #[command(flatten)]
    pub sim: SimFlags,
}

/// Eight sizes spaced geometrically from 100 to 10000 residues.
pub fn default_bench_sizes() -> Vec<usize> {
    (0..8)
        .map(|i| (100.0 * 100f64.powf(i as f64 / 7.0)).round() as usize)
        .collect()
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a number >= 0, got {s:?}")),
    }
}

fn stride(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if (1..=mapgen_core::tiler::TILE).contains(&v) => Ok(v),
        _ => Err(format!("stride must be in 1..=32, got {s:?}")),
    }
}

fn convention(s: &str) -> std::result::Result<Convention, String> {
    s.parse::<Convention>().map_err(|e| e.to_string())
}

fn need_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(PipelineError::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

/// The folder an output file will be written into must already exist.
fn need_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(PipelineError::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "parent folder does not exist"),
        )),
        _ => Ok(()),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            need_file(p)?;
            RunConfig::load(p)
        }
        None => Ok(RunConfig::default()),
    }
}

impl SimFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        let d = &mut cfg.data;
        d.resolution = self.resolution.unwrap_or(d.resolution);
        d.voxel = self.voxel.unwrap_or(d.voxel);
        d.margin = self.margin.unwrap_or(d.margin);
        d.convention = self.convention.unwrap_or(d.convention);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_structure(p: &Path) -> Result<AtomicStructure> {
    let text = std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
    let mut s = parse_structure(&text)?;
    if s.id.is_empty() {
        s.id = p.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(s)
}

fn infer_options(cfg: &RunConfig, stride: Option<usize>) -> InferOptions {
    InferOptions {
        simmap: SimmapOptions {
            resolution: cfg.data.resolution,
            convention: cfg.data.convention,
            augment: None,
        },
        stride: stride.unwrap_or(cfg.data.infer_stride),
        margin: cfg.data.margin,
        voxel: cfg.data.voxel,
    }
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    need_file(&a.pdb)?;
    if let Some(m) = &a.map {
        need_file(m)?;
    }
    need_parent(&a.out)?;
    let cfg = a.sim.resolve()?;
    let s = read_structure(&a.pdb)?;
    let grid: GridSpec = match &a.map {
        Some(m) => *read_mrc_file(m)?.spec(),
        None => default_grid_for(&s, cfg.data.margin, cfg.data.voxel)?,
    };
    let opts = SimmapOptions {
        resolution: cfg.data.resolution,
        convention: cfg.data.convention,
        augment: a.augment.then(|| cfg.augment.clone()),
    };
    let map = make_simmap(&s, &grid, &opts, a.seed)?;
    write_mrc_file(&map, &a.out)?;
    println!("{}: {:?} voxels -> {}", s.id, map.dims(), a.out.display());
    Ok(())
}

fn curate_cmd(a: &CurateArgs) -> Result<()> {
    need_file(&a.pdb)?;
    need_file(&a.map)?;
    need_parent(&a.out)?;
    if let Some(p) = &a.sim_out {
        need_parent(p)?;
    }
    let cfg = a.sim.resolve()?;
    let s = read_structure(&a.pdb)?;
    let raw = read_mrc_file(&a.map)?;
    let exp = if a.raw_targets {
        raw_target(&raw, cfg.data.voxel)?
    } else {
        curate_pair(&raw, &s, cfg.data.margin, cfg.data.voxel)?
    };
    let opts = SimmapOptions {
        resolution: cfg.data.resolution,
        convention: cfg.data.convention,
        augment: None,
    };
    let sim = make_simmap(&s, exp.spec(), &opts, 0)?;
    let decision = filter_pair_at(&sim, &exp, cfg.data.filter_threshold)?;
    write_mrc_file(&exp, &a.out)?;
    if let Some(p) = &a.sim_out {
        write_mrc_file(&sim, p)?;
    }
    println!(
        "correlation {:.4} ({})",
        decision.correlation,
        if decision.accepted { "accepted" } else { "rejected" }
    );
    Ok(())
}

fn tile_cmd(a: &TileArgs) -> Result<()> {
    need_file(&a.map)?;
    need_parent(&a.out)?;
    let m = read_mrc_file(&a.map)?;
    let id = a.map.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
    let tiles = tile_map(&m, a.stride, &id)?;
    write_tileset_dir(&tiles, &a.out)?;
    println!("{} tiles -> {}", tiles.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    need_file(&a.manifest)?;
    if let Some(c) = &a.checkpoint {
        need_file(c)?;
    }
    let mut cfg = a.sim.resolve()?;
    let t = &mut cfg.train;
    t.epochs = a.epochs.map_or(t.epochs, |v| v as usize);
    t.batch_size = a.batch.map_or(t.batch_size, |v| v as usize);
    t.alpha = a.alpha.unwrap_or(t.alpha);
    t.lr = a.lr.unwrap_or(t.lr);
    t.seed = a.seed.unwrap_or(t.seed);
    t.max_steps = a.max_steps.or(t.max_steps);
    if a.no_l1 {
        t.use_l1 = false;
    }
    if a.raw_targets {
        cfg.data.use_curated_targets = false;
    }
    cfg.data.train_stride = a.stride.unwrap_or(cfg.data.train_stride);
    cfg.validate()?;
    let entries = read_manifest(&a.manifest)?;
    for e in &entries {
        need_file(&e.structure)?;
        need_file(&e.map)?;
    }
    std::fs::create_dir_all(&a.out).map_err(|e| PipelineError::io(&a.out, e))?;
    let cfg_path = a.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| PipelineError::io(&cfg_path, e))?;

    let (pairs, dropped) = prepare_pairs(&entries, &cfg)?;
    log::info!("{} pairs kept, {} filtered out", pairs.len(), dropped.len());
    let data = Dataset::from_pairs(&pairs, cfg.data.train_stride)?;
    let state = match &a.checkpoint {
        Some(c) => read_checkpoint(c)?,
        None => init_state(&cfg.train, &cfg.generator, &cfg.discriminator, &cfg.optimizer)?,
    };
    let outcome = train(state, &data, &cfg.train, Some(&a.out))?;
    write_loss_history(&a.out.join("loss_history.csv"), &outcome.history)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "{} steps; epoch {} gen {:.5} disc {:.5}",
            outcome.state.step, last.epoch, last.gen_loss, last.disc_loss
        );
    }
    Ok(())
}

fn infer_cmd(a: &InferArgs) -> Result<()> {
    need_file(&a.pdb)?;
    need_file(&a.checkpoint)?;
    if let Some(m) = &a.map {
        need_file(m)?;
    }
    need_parent(&a.out)?;
    let cfg = a.sim.resolve()?;
    let s = read_structure(&a.pdb)?;
    let grid = match &a.map {
        Some(m) => Some(*read_mrc_file(m)?.spec()),
        None => None,
    };
    let state = read_checkpoint(&a.checkpoint)?;
    let map = infer(&s, &state.generator, grid.as_ref(), &infer_options(&cfg, a.stride))?;
    write_mrc_file(&map, &a.out)?;
    println!("{}: {:?} voxels -> {}", s.id, map.dims(), a.out.display());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    need_file(&a.a)?;
    need_file(&a.b)?;
    need_parent(&a.out)?;
    let cfg = load_config(a.config.as_deref())?;
    let generated = read_mrc_file(&a.a)?;
    let reference = read_mrc_file(&a.b)?;
    let report = evaluate(&generated, &reference, a.resample, &cfg.ssim, a.envelope)?;
    emit_report(&report, &a.out)?;
    println!(
        "ssim {:.4} correlation {:.4} cam {:.4} pcc {:.4}",
        report.ssim, report.correlation, report.correlation_about_mean, report.pcc
    );
    Ok(())
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    if let Some(c) = &a.checkpoint {
        need_file(c)?;
    }
    need_parent(&a.out)?;
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(PipelineError::Usage("--sizes needs positive residue counts".into()));
    }
    let cfg = a.sim.resolve()?;
    let model = match &a.checkpoint {
        Some(c) => read_checkpoint(c)?.generator,
        None => Generator::new(&cfg.generator, &mut ChaCha8Rng::seed_from_u64(a.seed))?,
    };
    let structures = a.sizes.iter().map(|&n| helix_bundle(n)).collect::<Result<Vec<_>>>()?;
    let rows = bench_runtime(&structures, &model, &infer_options(&cfg, a.stride), a.repeats as usize)?;
    write_bench_csv(&a.out, &rows)?;
    for r in &rows {
        println!("{}\t{}\t{:.3}", r.id, r.residues, r.seconds);
    }
    let res: Vec<f64> = rows.iter().map(|r| r.residues as f64).collect();
    let secs: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    if let Some(rho) = spearman(&res, &secs) {
        println!("spearman {rho:.3}");
    }
    Ok(())
}

fn info_cmd() -> Result<()> {
    println!("mapgen {}", env!("CARGO_PKG_VERSION"));
    println!(
        "generator parameters: {}",
        GeneratorConfig::default().count_parameters()?
    );
    println!(
        "discriminator parameters: {}",
        DiscriminatorConfig::default().count_parameters()?
    );
    println!("augmentation defaults: {:?}", AugmentConfig::default());
    println!();
    print!("{}", RunConfig::default().to_toml());
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Curate(a) => curate_cmd(a),
        Command::Tile(a) => tile_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Info => info_cmd(),
    }
}

/// Exit code for a finished command.
pub fn exit_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::Usage(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n as usize).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(PipelineError::Config(format!("thread pool: {e}"))),
        },
        None => dispatch(&cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", e.category());
            exit_code(&e)
        }
    }
}
