//! Alternating GAN training on paired tiles.

use std::io::Write as _;
use std::path::Path;

use mapgen_core::tiler::TILE;
use mapgen_nn::{
    adversarial_loss, discriminator_loss, save_checkpoint, smooth_l1_loss, DiscriminatorConfig, GeneratorConfig,
    NadamConfig, Tensor, TrainState,
};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::TrainingRunConfig;
use crate::dataset::{Dataset, TileData};
use crate::error::{PipelineError, Result};

/// Probabilities are kept this far from 0 and 1 before taking logs.
pub const PROB_EPS: f64 = 1e-7;

pub const TILE_SHAPE: [usize; 4] = [1, TILE, TILE, TILE];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub l1_term: f64,
    pub adv_term: f64,
}

/// One row of the loss history CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub l1_term: f64,
    pub adv_term: f64,
}

pub fn stack_tiles(tiles: &[&Vec<f32>]) -> Result<Tensor<f32>> {
    let slices: Vec<&[f32]> = tiles.iter().map(|t| t.as_slice()).collect();
    Ok(Tensor::stack(&slices, &TILE_SHAPE)?)
}

/// Clamps probabilities into `[PROB_EPS, 1 − PROB_EPS]`; the mask marks
/// entries that were left alone (the clamp passes no gradient elsewhere).
fn clamp_probs(p: &Tensor<f32>) -> (Tensor<f32>, Vec<bool>) {
    let lo = PROB_EPS as f32;
    let hi = (1.0 - PROB_EPS) as f32;
    let mask = p.data().iter().map(|&v| v > lo && v < hi).collect();
    (p.map(|v| v.clamp(lo, hi)), mask)
}

fn masked(mut g: Tensor<f32>, mask: &[bool], scale: f32) -> Tensor<f32> {
    for (v, &m) in g.data_mut().iter_mut().zip(mask) {
        *v = if m { *v * scale } else { 0.0 };
    }
    g
}

fn check_finite(step: u64, rec: &StepRecord) -> Result<()> {
    let vals = [rec.gen_loss, rec.disc_loss, rec.l1_term, rec.adv_term];
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PipelineError::NonFiniteLoss {
            step,
            detail: format!(
                "gen {} disc {} l1 {} adv {}",
                rec.gen_loss, rec.disc_loss, rec.l1_term, rec.adv_term
            ),
        })
    }
}

/// Discriminator update(s) on real `y` and the detached `G(x)`, then one
/// generator update through the refreshed discriminator.
pub fn train_step(state: &mut TrainState, x: &Tensor<f32>, y: &Tensor<f32>, cfg: &TrainingRunConfig) -> Result<StepRecord> {
    let (fake, g_tape) = state.generator.forward_train(x)?;

    let mut disc_value = 0.0;
    for _ in 0..cfg.disc_steps {
        let (d_real, real_tape) = state.discriminator.forward_train(y)?;
        let (d_fake, fake_tape) = state.discriminator.forward_train(&fake)?;
        let (real_c, real_mask) = clamp_probs(&d_real);
        let (fake_c, fake_mask) = clamp_probs(&d_fake);
        let dl = discriminator_loss(&real_c, &fake_c)?;
        disc_value = dl.value;
        let (_, mut grads) = state
            .discriminator
            .backward(&real_tape, &masked(dl.grad_real, &real_mask, 1.0))?;
        let (_, fake_grads) = state
            .discriminator
            .backward(&fake_tape, &masked(dl.grad_fake, &fake_mask, 1.0))?;
        for (g, f) in grads.iter_mut().zip(&fake_grads) {
            g.add_assign(f)?;
        }
        state.disc_opt.step(state.discriminator.params_mut(), &grads)?;
    }

    let (d_fake, tape) = state.discriminator.forward_train(&fake)?;
    let (fake_c, mask) = clamp_probs(&d_fake);
    let adv = adversarial_loss(&fake_c)?;
    let l1 = smooth_l1_loss(&fake, y)?;
    let adv_weight = if cfg.use_l1 { cfg.alpha } else { 1.0 };
    let mut grad = if cfg.use_l1 {
        l1.grad
    } else {
        Tensor::zeros(fake.shape())
    };
    if adv_weight != 0.0 {
        let (d_in, _) = state
            .discriminator
            .backward(&tape, &masked(adv.grad, &mask, adv_weight as f32))?;
        grad.add_assign(&d_in)?;
    }
    let (_, g_grads) = state.generator.backward(&g_tape, &grad)?;
    state.gen_opt.step(state.generator.params_mut(), &g_grads)?;
    state.step += 1;

    let (gen_loss, l1_term) = if cfg.use_l1 {
        (l1.value + cfg.alpha * adv.value, l1.value)
    } else {
        (adv.value, 0.0)
    };
    let rec = StepRecord {
        step: state.step,
        gen_loss,
        disc_loss: disc_value,
        l1_term,
        adv_term: adv.value,
    };
    check_finite(state.step, &rec)?;
    Ok(rec)
}

/// Losses of the current models on `data` without updating anything,
/// averaged per map and then over maps.
pub fn evaluate_losses(state: &TrainState, data: &TileData, cfg: &TrainingRunConfig, epoch: u64) -> Result<EpochRecord> {
    let mut per_map: Vec<(String, [f64; 4], usize)> = Vec::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let x = stack_tiles(&chunk.iter().map(|&i| &data.inputs[i]).collect::<Vec<_>>())?;
        let y = stack_tiles(&chunk.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>())?;
        let fake = state.generator.infer(&x)?;
        let d_real = clamp_probs(&state.discriminator.infer(&y)?).0;
        let d_fake = clamp_probs(&state.discriminator.infer(&fake)?).0;
        for (k, &i) in chunk.iter().enumerate() {
            let pick = |t: &Tensor<f32>, per: usize| -> Result<Tensor<f32>> {
                let mut shape = t.shape().to_vec();
                shape[0] = 1;
                Ok(Tensor::from_vec(&shape, t.data()[k * per..(k + 1) * per].to_vec())?)
            };
            let n = TILE * TILE * TILE;
            let l1 = smooth_l1_loss(&pick(&fake, n)?, &pick(&y, n)?)?.value;
            let adv = adversarial_loss(&pick(&d_fake, 1)?)?.value;
            let disc = discriminator_loss(&pick(&d_real, 1)?, &pick(&d_fake, 1)?)?.value;
            let gen = if cfg.use_l1 { l1 + cfg.alpha * adv } else { adv };
            let l1_term = if cfg.use_l1 { l1 } else { 0.0 };
            let id = &data.map_ids[i];
            let slot = match per_map.iter().position(|(m, _, _)| m == id) {
                Some(p) => p,
                None => {
                    per_map.push((id.clone(), [0.0; 4], 0));
                    per_map.len() - 1
                }
            };
            let (_, sums, count) = &mut per_map[slot];
            for (s, v) in sums.iter_mut().zip([gen, disc, l1_term, adv]) {
                *s += v;
            }
            *count += 1;
        }
    }
    let maps = per_map.len().max(1) as f64;
    let mut mean = [0.0; 4];
    for (_, sums, count) in &per_map {
        for (m, s) in mean.iter_mut().zip(sums) {
            *m += s / *count as f64 / maps;
        }
    }
    Ok(EpochRecord {
        epoch,
        gen_loss: mean[0],
        disc_loss: mean[1],
        l1_term: mean[2],
        adv_term: mean[3],
    })
}

pub fn write_loss_history(path: &Path, rows: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::Config(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn write_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = save_checkpoint(state)?;
    let mut f = std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(mapgen_nn::load_checkpoint(&bytes)?)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub steps: Vec<StepRecord>,
    /// Per-epoch losses on the validation maps, or on the training maps when
    /// there are none.
    pub history: Vec<EpochRecord>,
}

/// Fresh training state for a run.
pub fn init_state(
    cfg: &TrainingRunConfig,
    gen: &GeneratorConfig,
    disc: &DiscriminatorConfig,
    optim: &NadamConfig,
) -> Result<TrainState> {
    cfg.validate()?;
    let mut state = TrainState::new(gen, disc, cfg.nadam(optim), cfg.seed, cfg.alpha)?;
    state
        .metadata
        .insert("use_l1".into(), cfg.use_l1.to_string());
    state
        .metadata
        .insert("disc_steps".into(), cfg.disc_steps.to_string());
    Ok(state)
}

/// Runs `cfg.epochs` epochs; `cfg.max_steps` cuts the run short after
/// closing the current epoch. Batches are drawn
/// from a permutation shuffled by the state's generator; a checkpoint
/// `epoch_NNNN.ckpt` is written into `out_dir` after every epoch.
pub fn train(mut state: TrainState, data: &Dataset, cfg: &TrainingRunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let eval_set = if data.validation.is_empty() {
        &data.train
    } else {
        &data.validation
    };
    let mut steps = Vec::new();
    let mut history = Vec::new();
    let reached = |step: u64| cfg.max_steps.is_some_and(|m| step >= m);
    for _ in 0..cfg.epochs {
        if reached(state.step) {
            break;
        }
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut state.rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            if reached(state.step) {
                break;
            }
            let x = stack_tiles(&chunk.iter().map(|&i| &data.train.inputs[i]).collect::<Vec<_>>())?;
            let y = stack_tiles(&chunk.iter().map(|&i| &data.train.targets[i]).collect::<Vec<_>>())?;
            let rec = train_step(&mut state, &x, &y, cfg)?;
            log::debug!("step {} gen {:.5} disc {:.5}", rec.step, rec.gen_loss, rec.disc_loss);
            steps.push(rec);
        }
        state.epoch += 1;
        let rec = evaluate_losses(&state, eval_set, cfg, state.epoch)?;
        log::info!(
            "epoch {} gen {:.5} disc {:.5} l1 {:.5} adv {:.5}",
            rec.epoch,
            rec.gen_loss,
            rec.disc_loss,
            rec.l1_term,
            rec.adv_term
        );
        history.push(rec);
        if let Some(dir) = out_dir {
            write_checkpoint(&state, &dir.join(format!("epoch_{:04}.ckpt", state.epoch)))?;
        }
    }
    Ok(TrainOutcome { state, steps, history })
}
