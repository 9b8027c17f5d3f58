mod support;

use mapgen::config::TrainingRunConfig;
use mapgen::dataset::{Dataset, Split, TileData};
use mapgen::train::{init_state, read_checkpoint, stack_tiles, train, train_step, write_loss_history, TrainOutcome};
use mapgen::PipelineError;
use mapgen_nn::{smooth_l1_loss, NadamConfig, TrainState};
use support::*;

fn single_thread<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn small_dataset() -> Dataset {
    let pairs = [
        synthetic_pair(40, 40, Split::Train),
        synthetic_pair(60, 36, Split::Validation),
    ];
    Dataset::from_pairs(&pairs, 32).unwrap()
}

fn fresh(cfg: &TrainingRunConfig) -> TrainState {
    init_state(cfg, &micro_generator(), &micro_discriminator(), &NadamConfig::default()).unwrap()
}

fn run(cfg: &TrainingRunConfig, data: &Dataset) -> TrainOutcome {
    single_thread(|| train(fresh(cfg), data, cfg, None).unwrap())
}

fn quick() -> TrainingRunConfig {
    TrainingRunConfig {
        epochs: 2,
        batch_size: 2,
        lr: 1e-3,
        seed: 3,
        max_steps: Some(6),
        ..TrainingRunConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_histories() {
    let data = small_dataset();
    let a = run(&quick(), &data);
    let b = run(&quick(), &data);
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.history, b.history);
    assert_eq!(a.state.generator.params(), b.state.generator.params());
    let other = run(&TrainingRunConfig { seed: 4, ..quick() }, &data);
    assert_ne!(other.steps, a.steps);
}

#[test]
fn losses_are_finite_and_recorded_per_epoch() {
    let out = run(&quick(), &small_dataset());
    assert!(!out.history.is_empty() && out.history.len() <= 2);
    for (i, h) in out.history.iter().enumerate() {
        assert_eq!(h.epoch, i as u64 + 1);
        for v in [h.gen_loss, h.disc_loss, h.l1_term, h.adv_term] {
            assert!(v.is_finite());
        }
        assert!((h.gen_loss - (h.l1_term + 0.01 * h.adv_term)).abs() < 1e-9);
    }
    assert!(out.steps.len() as u64 <= 6);
}

#[test]
fn without_l1_only_the_adversarial_term_remains() {
    let cfg = TrainingRunConfig {
        use_l1: false,
        ..quick()
    };
    let out = run(&cfg, &small_dataset());
    for s in &out.steps {
        assert_eq!(s.l1_term, 0.0);
        assert_eq!(s.gen_loss, s.adv_term);
    }
    for h in &out.history {
        assert_eq!(h.l1_term, 0.0);
        assert_eq!(h.gen_loss, h.adv_term);
    }
}

#[test]
fn zero_alpha_matches_pure_l1_generator_updates() {
    let data = small_dataset();
    let cfg = TrainingRunConfig {
        alpha: 0.0,
        ..quick()
    };
    single_thread(|| {
        let mut gan = fresh(&cfg);
        let mut reference = gan.clone();
        for step in 0..3 {
            let idx = [(2 * step) % data.train.len(), (2 * step + 1) % data.train.len()];
            let x = stack_tiles(&idx.iter().map(|&i| &data.train.inputs[i]).collect::<Vec<_>>()).unwrap();
            let y = stack_tiles(&idx.iter().map(|&i| &data.train.targets[i]).collect::<Vec<_>>()).unwrap();
            train_step(&mut gan, &x, &y, &cfg).unwrap();

            let (fake, tape) = reference.generator.forward_train(&x).unwrap();
            let l1 = smooth_l1_loss(&fake, &y).unwrap();
            let (_, grads) = reference.generator.backward(&tape, &l1.grad).unwrap();
            reference.gen_opt.step(reference.generator.params_mut(), &grads).unwrap();
            assert_eq!(gan.generator.params(), reference.generator.params(), "step {step}");
        }
    });
}

#[test]
fn empty_training_set_is_an_error() {
    let data = Dataset {
        train: TileData::default(),
        validation: small_dataset().validation,
    };
    let cfg = quick();
    assert!(matches!(train(fresh(&cfg), &data, &cfg, None), Err(PipelineError::EmptyDataset)));
}

#[test]
fn non_finite_input_aborts() {
    let mut data = small_dataset();
    data.train.inputs[0][100] = f32::NAN;
    let cfg = TrainingRunConfig {
        shuffle: false,
        ..quick()
    };
    let err = single_thread(|| train(fresh(&cfg), &data, &cfg, None).unwrap_err());
    assert!(matches!(err, PipelineError::NonFiniteLoss { step: 1, .. }), "{err}");
}

#[test]
fn checkpoints_and_history_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainingRunConfig {
        max_steps: None,
        ..quick()
    };
    let data = small_dataset();
    let out = single_thread(|| train(fresh(&cfg), &data, &cfg, Some(dir.path())).unwrap());
    assert_eq!(out.history.len(), 2);
    for epoch in 1..=2 {
        let path = dir.path().join(format!("epoch_{epoch:04}.ckpt"));
        let state = read_checkpoint(&path).unwrap();
        assert_eq!(state.epoch, epoch);
    }
    let last = read_checkpoint(&dir.path().join("epoch_0002.ckpt")).unwrap();
    assert_eq!(last.generator.params(), out.state.generator.params());
    assert_eq!(last.step, out.state.step);

    let csv = dir.path().join("loss.csv");
    write_loss_history(&csv, &out.history).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,gen_loss,disc_loss,l1_term,adv_term"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn resuming_from_a_checkpoint_continues_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset();
    let one = TrainingRunConfig {
        epochs: 1,
        max_steps: None,
        ..quick()
    };
    let two = TrainingRunConfig { epochs: 2, ..one.clone() };
    single_thread(|| {
        let straight = train(fresh(&two), &data, &two, None).unwrap();
        train(fresh(&one), &data, &one, Some(dir.path())).unwrap();
        let resumed = read_checkpoint(&dir.path().join("epoch_0001.ckpt")).unwrap();
        let rest = train(resumed, &data, &one, None).unwrap();
        assert_eq!(rest.state.generator.params(), straight.state.generator.params());
        assert_eq!(rest.history[0].gen_loss, straight.history[1].gen_loss);
    });
}

