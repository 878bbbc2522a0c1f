mod common;

use common::synthetic_split;
use loadcast::data::{SynthProfile, HOURS};
use loadcast::model::{stage1_forward, stage1_input, ForwardCtx, LoadModel, ModelConfig, STAGE1};
use loadcast::tensor::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use loadcast::training::{
    batch_loss, epoch_permutation, load_checkpoint, loss_graph, lr_schedule, mse_day_loss, resume, save_checkpoint,
    train_stage1, train_stage2, write_loss_csv, CheckpointError, StageSchedule, TrainError, TrainOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sched(stage: u8, batch_size: usize, lr: f64, milestones: Vec<usize>, total: usize) -> StageSchedule {
    StageSchedule {
        stage,
        batch_size,
        initial_lr: lr,
        milestones,
        total_epochs: total,
    }
}

#[test]
fn day_loss_matches_two_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let p: [f64; HOURS] = std::array::from_fn(|_| rng.random_range(-1.0..2.0));
        let t: [f64; HOURS] = std::array::from_fn(|_| rng.random_range(-1.0..2.0));
        let mut acc = 0.0;
        for i in 0..HOURS {
            acc += (p[i] - t[i]).powi(2);
        }
        assert!((mse_day_loss(&p, &t).unwrap() - acc / 24.0).abs() < 1e-14);
    }
}

#[test]
fn identical_days_batch_loss_equals_day_loss() {
    let p: [f64; HOURS] = std::array::from_fn(|h| h as f64 / 10.0);
    let t = [0.7; HOURS];
    let single = mse_day_loss(&p, &t).unwrap();
    assert_eq!(batch_loss(&[p; 5], &[t; 5]).unwrap(), single);
    let mut g = Graph::new();
    let cols = |r: [f64; HOURS]| Tensor::from_fn([HOURS, 5], move |k| r[k / 5]);
    let pv = g.constant(cols(p));
    let l = loss_graph(&mut g, pv, &cols(t)).unwrap();
    assert!((g.value(l).item().unwrap() - single).abs() < 1e-15);
}

#[test]
fn small_step_reduces_single_day_loss() {
    let split = synthetic_split(2, 60, &SynthProfile::default());
    let mut model = LoadModel::new(ModelConfig::tiny(), 3).unwrap();
    let sample = &split.train[10];
    let loss = |model: &LoadModel, backward: bool| {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, STAGE1, true);
        let x = g.constant(stage1_input(&[&sample.features]).unwrap());
        let y = stage1_forward(&mut g, &model.config, &model.params, &p, x, &mut ForwardCtx::train(0.0, 0)).unwrap();
        let target = Tensor::new([HOURS, 1], sample.target.to_vec()).unwrap();
        let l = loss_graph(&mut g, y, &target).unwrap();
        let v = g.value(l).item().unwrap();
        if backward {
            g.backward(l).unwrap();
        }
        (v, p.gradients(&g))
    };
    let (before, grads) = loss(&model, true);
    let mut adam = AdamState::new(AdamConfig::default(), 1e-5);
    adam_step(&mut model.params, &grads, &mut adam).unwrap();
    let (after, _) = loss(&model, false);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn zero_noise_training_converges_and_is_deterministic() {
    let split = synthetic_split(4, 200, &SynthProfile::zero_noise());
    let s1 = sched(1, 32, 0.001, vec![], 50);
    let (a, _) = train_stage1(&split, &ModelConfig::tiny(), &s1, 5, &TrainOptions::default()).unwrap();
    assert_eq!(a.losses.len(), 50);
    assert!(a.completed);
    assert!(a.losses[49] < 0.1 * a.losses[0], "{} vs {}", a.losses[49], a.losses[0]);
    let (b, _) = train_stage1(&split, &ModelConfig::tiny(), &s1, 5, &TrainOptions::default()).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.lrs, b.lrs);
}

#[test]
fn stage_two_freezes_stage_one_and_learns_nothing_from_zero_targets() {
    let mut split = synthetic_split(6, 90, &SynthProfile::default());
    let s1 = sched(1, 16, 0.002, vec![3], 5);
    let (_, ckpt) = train_stage1(&split, &ModelConfig::tiny(), &s1, 7, &TrainOptions::default()).unwrap();
    let before = ckpt.model.params.subset(STAGE1);

    // make stage 1 a perfect fit by construction: targets equal its own forecasts
    let fit = {
        let feats: Vec<_> = split.train.iter().map(|s| &s.features).collect();
        ckpt.model.predict_init(&feats).unwrap()
    };
    for (s, y) in split.train.iter_mut().zip(fit) {
        s.target = y;
    }
    let feats: Vec<_> = split.train.iter().map(|s| &s.features).collect();
    let s2 = sched(2, 8, 0.01, vec![2], 4);
    let (report, done) = train_stage2(&split, ckpt, &s2, &TrainOptions::default()).unwrap();
    assert!(report.completed);
    assert_eq!(before, done.model.params.subset(STAGE1));
    let init = done.model.predict_init(&feats).unwrap();
    let resid = done.model.predict_residual(&feats, &init).unwrap();
    let norm = resid.iter().flatten().map(|e| e * e).sum::<f64>().sqrt();
    assert!(norm < 1e-12, "{norm}");
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let split = synthetic_split(8, 90, &SynthProfile::default());
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let (r1, c1) = train_stage1(&split, &ModelConfig::tiny(), &sched(1, 16, 0.002, vec![2], 3), 9, &opts).unwrap();
    let (r2, c2) = train_stage2(&split, c1, &sched(2, 16, 0.01, vec![], 2), &opts).unwrap();
    assert!(r1.checkpoints.iter().any(|p| p.ends_with("stage1_epoch0002.ckpt")));
    assert!(r2.checkpoints.iter().any(|p| p.ends_with("stage2.ckpt")));

    let path = dir.path().join("stage2.ckpt");
    let bytes = std::fs::read(&path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, c2);
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);

    let bad = dir.path().join("bad.ckpt");
    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x40;
    std::fs::write(&bad, &corrupt).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(CheckpointError::Checksum)));
    std::fs::write(&bad, &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(CheckpointError::Truncated { .. })));
    let mut versioned = bytes.clone();
    versioned[8] = 9;
    std::fs::write(&bad, &versioned).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(CheckpointError::Version { found: 9, .. })));
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(CheckpointError::BadMagic)));

    let csv = dir.path().join("loss.csv");
    write_loss_csv(&c2.history, &csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("epoch,stage,lr,loss\n1,1,0.002,"));
    assert_eq!(text.lines().count(), 1 + 3 + 2);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let split = synthetic_split(10, 90, &SynthProfile::default());
    let cfg = ModelConfig {
        dropout: 0.1,
        ..ModelConfig::tiny()
    };
    let s1 = sched(1, 16, 0.002, vec![3], 5);
    let s2 = sched(2, 16, 0.01, vec![2], 4);
    let (full1, c_full1) = train_stage1(&split, &cfg, &s1, 11, &TrainOptions::default()).unwrap();
    let (full2, c_full) = train_stage2(&split, c_full1, &s2, &TrainOptions::default()).unwrap();

    let stop_at = |e| TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after_epoch: Some(e),
        ..Default::default()
    };
    let (part, _) = train_stage1(&split, &cfg, &s1, 11, &stop_at(2)).unwrap();
    assert!(!part.completed);
    let ck = load_checkpoint(dir.path().join("stage1_epoch0002.ckpt")).unwrap();
    let (rest, c1) = resume(ck, &split, &TrainOptions::default()).unwrap();
    assert_eq!(rest.first_epoch, 3);
    assert_eq!([part.losses, rest.losses].concat(), full1.losses);

    let (_, _) = train_stage2(&split, c1, &s2, &stop_at(1)).unwrap();
    let ck = load_checkpoint(dir.path().join("stage2_epoch0001.ckpt")).unwrap();
    let (rest2, c2) = resume(ck, &split, &TrainOptions::default()).unwrap();
    assert_eq!(rest2.losses, full2.losses[1..]);
    assert_eq!(c2, c_full);
}

#[test]
fn stage_two_requires_finished_stage_one() {
    let split = synthetic_split(12, 60, &SynthProfile::default());
    let opts = TrainOptions {
        stop_after_epoch: Some(1),
        ..Default::default()
    };
    let (_, partial) = train_stage1(&split, &ModelConfig::tiny(), &sched(1, 16, 0.002, vec![], 3), 1, &opts).unwrap();
    let err = train_stage2(&split, partial, &StageSchedule::stage2(), &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, TrainError::Invalid(_)));
}

proptest! {
    #[test]
    fn schedule_is_monotone_with_one_halving_per_milestone(
        lr in 1e-5f64..1.0,
        raw in prop::collection::btree_set(1usize..400, 0..6),
    ) {
        let milestones: Vec<usize> = raw.into_iter().collect();
        let s = sched(1, 8, lr, milestones.clone(), 400);
        s.validate().unwrap();
        let mut halvings = 0;
        for e in 2..=400 {
            let (a, b) = (lr_schedule(e - 1, &s), lr_schedule(e, &s));
            prop_assert!(b <= a);
            if b < a {
                prop_assert_eq!(b, a / 2.0);
                halvings += 1;
            }
        }
        prop_assert_eq!(halvings, milestones.iter().filter(|&&m| m >= 2).count());
        prop_assert_eq!(lr_schedule(400, &s), lr * 0.5f64.powi(milestones.len() as i32));
    }

    #[test]
    fn shuffles_are_permutations(seed in any::<u64>(), stage in 1u8..=2, epoch in 1usize..1000, n in 1usize..300) {
        let mut p = epoch_permutation(seed, stage, epoch, n);
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }
}
