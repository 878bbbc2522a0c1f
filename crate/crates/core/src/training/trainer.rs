use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, FeatureMatrix, HOURS};
use crate::model::{
    refine_inputs, stage1_forward, stage1_input, stage2_forward, ForwardCtx, LoadModel, ModelConfig, STAGE1, STAGE2,
};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::loss::{day_columns, loss_graph};
use super::schedule::StageSchedule;
use super::{Result, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where milestone and final checkpoints go; nothing is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop (and checkpoint) after this epoch of the current stage.
    pub stop_after_epoch: Option<usize>,
    /// Global gradient-norm clip; off by default.
    pub grad_clip: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub stage: u8,
    /// Mean per-day loss of each epoch run in this call.
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    /// 1-based.
    pub first_epoch: usize,
    pub completed: bool,
    pub wall_time: Duration,
    pub checkpoints: Vec<PathBuf>,
}

/// Order in which training days are visited in `epoch`. Depends only on
/// `(seed, stage, epoch)`, so resumed runs need no saved RNG state.
pub fn epoch_permutation(seed: u64, stage: u8, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage as u64) << 40) | epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn dropout_seed(seed: u64, stage: u8, epoch: usize, batch: usize) -> u64 {
    // splitmix64 finalizer over the coordinates
    let mut z = seed ^ ((stage as u64) << 56) ^ ((epoch as u64) << 24) ^ batch as u64;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn clip(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) {
    let norm = grads.values().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Stage-1 forecasts for every sample, in eval mode.
fn stage1_forecasts(model: &LoadModel, features: &[&FeatureMatrix]) -> Result<Vec<[f64; HOURS]>> {
    let mut out = Vec::with_capacity(features.len());
    for chunk in features.chunks(64) {
        out.extend(model.predict_init(chunk)?);
    }
    Ok(out)
}

fn same_bits(a: &ParamStore, b: &ParamStore) -> std::result::Result<(), String> {
    let pairs = a.params().zip(b.params()).chain(a.buffers().zip(b.buffers()));
    for ((ka, ta), (kb, tb)) in pairs {
        let equal = ka == kb
            && ta.shape() == tb.shape()
            && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if !equal {
            return Err(ka.clone());
        }
    }
    if a.params().count() != b.params().count() || a.buffers().count() != b.buffers().count() {
        return Err("<parameter set>".into());
    }
    Ok(())
}

struct StageData<'a> {
    features: Vec<&'a FeatureMatrix>,
    /// Stage-1 forecasts (stage 2 only).
    y_init: Vec<[f64; HOURS]>,
    targets: Vec<[f64; HOURS]>,
}

fn stage_data<'a>(split: &'a DatasetSplit, model: &LoadModel, stage: u8) -> Result<StageData<'a>> {
    let features: Vec<&FeatureMatrix> = split.train.iter().map(|s| &s.features).collect();
    if features.is_empty() {
        return Err(TrainError::Invalid("training split is empty".into()));
    }
    if stage == 1 {
        let targets = split.train.iter().map(|s| s.target).collect();
        return Ok(StageData {
            features,
            y_init: Vec::new(),
            targets,
        });
    }
    let y_init = stage1_forecasts(model, &features)?;
    let targets = split
        .train
        .iter()
        .zip(&y_init)
        .map(|(s, y)| std::array::from_fn(|h| s.target[h] - y[h]))
        .collect();
    Ok(StageData {
        features,
        y_init,
        targets,
    })
}

/// Forward, backward and one Adam step on a batch. Returns the batch loss.
fn batch_step(
    model: &mut LoadModel,
    data: &StageData<'_>,
    idx: &[usize],
    stage: u8,
    ctx_seed: u64,
    adam: &mut AdamState,
    grad_clip: Option<f64>,
) -> Result<f64> {
    let cfg: &ModelConfig = &model.config;
    let feats: Vec<&FeatureMatrix> = idx.iter().map(|&i| data.features[i]).collect();
    let target = day_columns(&idx.iter().map(|&i| data.targets[i]).collect::<Vec<_>>());
    let mut g = Graph::new();
    let mut ctx = ForwardCtx::train(cfg.dropout, ctx_seed);
    let (bound, pred) = if stage == 1 {
        let p = model.params.bind(&mut g, STAGE1, true);
        let x = g.constant(stage1_input(&feats)?);
        let y = stage1_forward(&mut g, cfg, &model.params, &p, x, &mut ctx)?;
        (p, y)
    } else {
        let p = model.params.bind(&mut g, STAGE2, true);
        let y_init: Vec<[f64; HOURS]> = idx.iter().map(|&i| data.y_init[i]).collect();
        let steps: Vec<Var> = refine_inputs(&feats, &y_init)?
            .into_iter()
            .map(|t| g.constant(t))
            .collect();
        let y = stage2_forward(&mut g, cfg, &p, &steps, &mut ctx)?;
        (p, y)
    };
    let loss = loss_graph(&mut g, pred, &target)?;
    let value = g.value(loss).item().expect("scalar loss");
    if !value.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            stage,
            epoch: 0,
            batch: 0,
        });
    }
    g.backward(loss)?;
    let mut grads = bound.gradients(&g);
    if let Some(c) = grad_clip {
        clip(&mut grads, c);
    }
    adam_step(&mut model.params, &grads, adam)?;
    model.update_running_stats(&ctx.bn_stats)?;
    Ok(value)
}

fn checkpoint_path(dir: &Path, stage: u8, epoch: Option<usize>) -> PathBuf {
    match epoch {
        Some(e) => dir.join(format!("stage{stage}_epoch{e:04}.ckpt")),
        None => dir.join(format!("stage{stage}.ckpt")),
    }
}

fn run_stage(mut ckpt: Checkpoint, split: &DatasetSplit, schedule: &StageSchedule, opts: &TrainOptions) -> Result<(TrainReport, Checkpoint)> {
    schedule.validate()?;
    let stage = schedule.stage;
    let i = stage as usize - 1;
    match &ckpt.schedules[i] {
        Some(s) if s != schedule => {
            return Err(TrainError::Invalid(format!(
                "checkpoint was trained with a different stage-{stage} schedule"
            )))
        }
        _ => ckpt.schedules[i] = Some(schedule.clone()),
    }
    if ckpt.complete[i] {
        return Err(TrainError::Invalid(format!("stage {stage} is already complete")));
    }
    let frozen = (stage == 2).then(|| ckpt.model.params.subset(STAGE1));
    let data = stage_data(split, &ckpt.model, stage)?;
    let mut adam = ckpt.adam[i]
        .take()
        .unwrap_or_else(|| AdamState::new(AdamConfig::default(), schedule.initial_lr));
    let start_time = Instant::now();
    let first_epoch = ckpt.epochs[i] + 1;
    let mut report = TrainReport {
        stage,
        losses: Vec::new(),
        lrs: Vec::new(),
        first_epoch,
        completed: false,
        wall_time: Duration::ZERO,
        checkpoints: Vec::new(),
    };
    let n = data.features.len();
    for epoch in first_epoch..=schedule.total_epochs {
        let lr = schedule.lr_at(epoch);
        adam.lr = lr;
        let order = epoch_permutation(ckpt.seed, stage, epoch, n);
        let mut total = 0.0;
        for (b, idx) in order.chunks(schedule.batch_size).enumerate() {
            let seed = dropout_seed(ckpt.seed, stage, epoch, b);
            let loss = batch_step(&mut ckpt.model, &data, idx, stage, seed, &mut adam, opts.grad_clip).map_err(|e| match e {
                TrainError::NonFiniteLoss { .. } => TrainError::NonFiniteLoss { stage, epoch, batch: b },
                e => e,
            })?;
            total += loss * idx.len() as f64;
        }
        let loss = total / n as f64;
        log::debug!("stage {stage} epoch {epoch}: lr {lr} loss {loss:.6e}");
        report.losses.push(loss);
        report.lrs.push(lr);
        ckpt.history.push(LossRecord { epoch, stage, lr, loss });
        ckpt.epochs[i] = epoch;
        ckpt.complete[i] = epoch == schedule.total_epochs;
        let stop = opts.stop_after_epoch == Some(epoch) && !ckpt.complete[i];
        if let Some(dir) = &opts.checkpoint_dir {
            let mut paths = Vec::new();
            if schedule.milestones.contains(&epoch) || stop {
                paths.push(checkpoint_path(dir, stage, Some(epoch)));
            }
            if ckpt.complete[i] {
                paths.push(checkpoint_path(dir, stage, None));
            }
            if !paths.is_empty() {
                ckpt.adam[i] = Some(adam.clone());
                for p in paths {
                    save_checkpoint(&ckpt, &p)?;
                    report.checkpoints.push(p);
                }
            }
        }
        if stop {
            break;
        }
    }
    ckpt.adam[i] = Some(adam);
    report.completed = ckpt.complete[i];
    report.wall_time = start_time.elapsed();
    if let Some(before) = frozen {
        same_bits(&before, &ckpt.model.params.subset(STAGE1)).map_err(TrainError::StageOneDrift)?;
    }
    Ok((report, ckpt))
}

/// Fresh model from `config` and `seed`, trained through stage 1.
pub fn train_stage1(
    split: &DatasetSplit,
    config: &ModelConfig,
    schedule: &StageSchedule,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(TrainReport, Checkpoint)> {
    if schedule.stage != 1 {
        return Err(TrainError::Schedule("stage-1 training needs a stage-1 schedule".into()));
    }
    let model = LoadModel::new(config.clone(), seed)?;
    run_stage(Checkpoint::new(model, split.stats, seed), split, schedule, opts)
}

/// Train the refinement head on top of a completed stage 1. Stage-1
/// parameters are checked bit for bit on exit.
pub fn train_stage2(
    split: &DatasetSplit,
    stage1: Checkpoint,
    schedule: &StageSchedule,
    opts: &TrainOptions,
) -> Result<(TrainReport, Checkpoint)> {
    if schedule.stage != 2 {
        return Err(TrainError::Schedule("stage-2 training needs a stage-2 schedule".into()));
    }
    if !stage1.complete[0] {
        return Err(TrainError::Invalid("stage 1 has not finished training".into()));
    }
    run_stage(stage1, split, schedule, opts)
}

/// Continue whichever stage the checkpoint stopped in.
pub fn resume(ckpt: Checkpoint, split: &DatasetSplit, opts: &TrainOptions) -> Result<(TrainReport, Checkpoint)> {
    let i = if !ckpt.complete[0] {
        0
    } else if !ckpt.complete[1] && ckpt.epochs[1] > 0 {
        1
    } else {
        return Err(TrainError::Invalid("checkpoint has no stage in progress".into()));
    };
    let schedule = ckpt.schedules[i]
        .clone()
        .ok_or_else(|| TrainError::Invalid("checkpoint carries no schedule for the stage in progress".into()))?;
    run_stage(ckpt, split, &schedule, opts)
}

pub fn write_loss_csv(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "epoch,stage,lr,loss").map_err(io)?;
    for r in history {
        writeln!(f, "{},{},{},{}", r.epoch, r.stage, r.lr, r.loss).map_err(io)?;
    }
    f.flush().map_err(io)
}
