use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, NormStats, FEATURE_ROWS, HOURS};
use crate::tensor::{BatchStats, Bound, Graph, ParamStore, Tensor, Var};

use super::attention::{block_prefix, encoder_decoder_forward};
use super::cnn::{bn_name, conv_name, feature_extract, in_channels, skip_name, skip_projection};
use super::config::{ModelConfig, CONV_LAYERS};
use super::head::ffn_regress_head;
use super::position::positional_encode_2d;
use super::refine::{refine_inputs, refine_load, REFINE_INPUT};
use super::{ModelError, Result};

pub const STAGE1: &str = "stage1";
pub const STAGE2: &str = "stage2";

/// Spatial size of the feature map after the stride-2 layer.
pub(crate) const MAP_HEIGHT: usize = (FEATURE_ROWS - 1) / 2 + 1;
pub(crate) const MAP_WIDTH: usize = (HOURS - 1) / 2 + 1;
pub(crate) const TOKENS: usize = MAP_HEIGHT * MAP_WIDTH;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: batch-norm mode, dropout masks and the batch
/// statistics collected in train mode.
pub struct ForwardCtx {
    pub mode: Mode,
    dropout: f64,
    rng: Option<ChaCha8Rng>,
    pub bn_stats: Vec<(String, BatchStats)>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            dropout: 0.0,
            rng: None,
            bn_stats: Vec::new(),
        }
    }

    pub fn train(dropout: f64, seed: u64) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            dropout,
            rng: (dropout > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed)),
            bn_stats: Vec::new(),
        }
    }

    /// Inverted dropout; identity in eval mode or at rate 0.
    pub(crate) fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        let keep = 1.0 - self.dropout;
        let rng = match (&mut self.rng, self.mode) {
            (Some(rng), Mode::Train) => rng,
            _ => return Ok(x),
        };
        let shape = g.shape(x).to_vec();
        let mask = Tensor::from_fn(shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let m = g.constant(mask);
        Ok(g.mul(x, m)?)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound))
}

/// He-uniform bound for layers followed by a ReLU.
fn kaiming(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// LeCun-uniform bound for linear outputs.
fn lecun(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

pub fn init_stage1(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut s = ParamStore::new();
    for layer in 1..=CONV_LAYERS {
        let (ci, co) = (in_channels(cfg, layer), cfg.conv_channels[layer - 1]);
        s.insert(conv_name(layer), uniform(rng, &[co, ci, 3, 3], kaiming(ci * 9)));
        s.insert(bn_name(layer, "gamma"), Tensor::ones([co]));
        s.insert(bn_name(layer, "beta"), Tensor::zeros([co]));
        s.insert_buffer(bn_name(layer, "running_mean"), Tensor::zeros([co]));
        s.insert_buffer(bn_name(layer, "running_var"), Tensor::ones([co]));
    }
    for block in 1..=CONV_LAYERS / 2 {
        if let Some((ci, co, _)) = skip_projection(cfg, block) {
            s.insert(skip_name(block), uniform(rng, &[co, ci, 1, 1], lecun(ci)));
        }
    }
    let (d, dh, f) = (cfg.d_model(), cfg.head_dim(), cfg.attn_ffn_hidden);
    let blocks = (0..cfg.n_encoder_layers)
        .map(|l| block_prefix("enc", l))
        .chain((0..cfg.n_decoder_layers).map(|l| block_prefix("dec", l)));
    for prefix in blocks {
        for h in 0..cfg.n_heads {
            for w in ["wq", "wk", "wv"] {
                s.insert(format!("{prefix}.attn.head{h}.{w}"), uniform(rng, &[dh, d], lecun(d)));
            }
        }
        s.insert(format!("{prefix}.attn.wo"), uniform(rng, &[d, d], lecun(d)));
        s.insert(format!("{prefix}.ffn.w1"), uniform(rng, &[f, d], kaiming(d)));
        s.insert(format!("{prefix}.ffn.b1"), Tensor::zeros([f]));
        s.insert(format!("{prefix}.ffn.w2"), uniform(rng, &[d, f], lecun(f)));
        s.insert(format!("{prefix}.ffn.b2"), Tensor::zeros([d]));
        for ln in ["ln1", "ln2"] {
            s.insert(format!("{prefix}.{ln}.gamma"), Tensor::ones([d]));
            s.insert(format!("{prefix}.{ln}.beta"), Tensor::zeros([d]));
        }
    }
    let (flat, hh) = (d * TOKENS, cfg.head_hidden);
    s.insert(format!("{STAGE1}.head.w1"), uniform(rng, &[hh, flat], kaiming(flat)));
    s.insert(format!("{STAGE1}.head.b1"), Tensor::zeros([hh]));
    s.insert(format!("{STAGE1}.head.w2"), uniform(rng, &[HOURS, hh], lecun(hh)));
    s.insert(format!("{STAGE1}.head.b2"), Tensor::zeros([HOURS]));
    Ok(s)
}

/// GRU weights uniform in `+-1/sqrt(H)`; the refinement output layer starts at
/// zero so an untrained stage 2 leaves the stage-1 forecast unchanged.
pub fn init_stage2(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut s = ParamStore::new();
    let h = cfg.gru_hidden;
    let k = 1.0 / (h as f64).sqrt();
    for gate in ['z', 'r', 'h'] {
        s.insert(format!("{STAGE2}.gru.w{gate}"), uniform(rng, &[h, REFINE_INPUT], k));
        s.insert(format!("{STAGE2}.gru.u{gate}"), uniform(rng, &[h, h], k));
        s.insert(format!("{STAGE2}.gru.b{gate}"), uniform(rng, &[h], k));
    }
    let (flat, r) = (HOURS * h, cfg.refine_hidden);
    s.insert(format!("{STAGE2}.head.w1"), uniform(rng, &[r, flat], kaiming(flat)));
    s.insert(format!("{STAGE2}.head.b1"), Tensor::zeros([r]));
    s.insert(format!("{STAGE2}.head.w2"), Tensor::zeros([HOURS, r]));
    s.insert(format!("{STAGE2}.head.b2"), Tensor::zeros([HOURS]));
    Ok(s)
}

/// `[B, 1, 9, 24]` batch of feature grids.
pub fn stage1_input(features: &[&FeatureMatrix]) -> Result<Tensor> {
    if features.is_empty() {
        return Err(ModelError::Invalid("empty batch".into()));
    }
    let data = features.iter().flat_map(|f| f.values().iter().copied()).collect();
    Ok(Tensor::new([features.len(), 1, FEATURE_ROWS, HOURS], data)?)
}

/// Full stage-1 network on a `[B, 1, 9, 24]` batch, returning `[24, B]`.
pub fn stage1_forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    store: &ParamStore,
    p: &Bound,
    x: Var,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let maps = feature_extract(g, cfg, store, p, x, ctx)?;
    let maps = positional_encode_2d(g, maps)?;
    let batch = g.shape(maps)[0];
    let d = cfg.d_model();
    let mut cols = Vec::with_capacity(batch);
    for b in 0..batch {
        let m = g.select(maps, b)?;
        let tokens = g.reshape(m, &[d, TOKENS])?;
        let out = encoder_decoder_forward(g, cfg, p, tokens, ctx)?;
        cols.push(g.reshape(out, &[d * TOKENS, 1])?);
    }
    let z = if cols.len() == 1 { cols[0] } else { g.concat(&cols, 1)? };
    ffn_regress_head(g, p, z, ctx)
}

/// Refinement network on per-hour inputs, returning `[24, B]`.
pub fn stage2_forward(g: &mut Graph, cfg: &ModelConfig, p: &Bound, steps: &[Var], ctx: &mut ForwardCtx) -> Result<Var> {
    refine_load(g, cfg, p, steps, ctx)
}

/// Split a `[24, B]` output into per-day rows.
pub(crate) fn columns(t: &Tensor) -> Vec<[f64; HOURS]> {
    let b = t.shape()[1];
    (0..b).map(|j| std::array::from_fn(|h| t.data()[h * b + j])).collect()
}

/// Both stages' parameters plus the config that shaped them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl LoadModel {
    /// Stage 1 and stage 2 draw from separate streams of one seed, so either
    /// stage can be re-initialized without disturbing the other.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng1 = ChaCha8Rng::seed_from_u64(seed);
        rng1.set_stream(1);
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
        rng2.set_stream(2);
        let mut params = init_stage1(&config, &mut rng1)?;
        let s2 = init_stage2(&config, &mut rng2)?;
        for (k, v) in s2.params() {
            params.insert(k.clone(), v.clone());
        }
        Ok(LoadModel { config, params })
    }

    /// Fold train-mode batch statistics into the running buffers.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        let m = self.config.bn_momentum;
        for (prefix, s) in stats {
            for (field, batch) in [("running_mean", &s.mean), ("running_var", &s.var_unbiased)] {
                let name = format!("{prefix}.{field}");
                let buf = self
                    .params
                    .buffer_mut(&name)
                    .ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
                for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
        }
        Ok(())
    }

    /// Eval-mode stage-1 forecasts (normalized) for a batch.
    pub fn predict_init(&self, features: &[&FeatureMatrix]) -> Result<Vec<[f64; HOURS]>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, STAGE1, false);
        let x = g.constant(stage1_input(features)?);
        let y = stage1_forward(&mut g, &self.config, &self.params, &p, x, &mut ForwardCtx::eval())?;
        let out = g.value(y);
        if !out.is_finite() {
            return Err(ModelError::NonFinite { stage: "stage1" });
        }
        Ok(columns(out))
    }

    /// Stage-2 residuals (normalized) given stage-1 forecasts.
    pub fn predict_residual(&self, features: &[&FeatureMatrix], y_init: &[[f64; HOURS]]) -> Result<Vec<[f64; HOURS]>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, STAGE2, false);
        let steps: Vec<Var> = refine_inputs(features, y_init)?
            .into_iter()
            .map(|t| g.constant(t))
            .collect();
        let e = stage2_forward(&mut g, &self.config, &p, &steps, &mut ForwardCtx::eval())?;
        let out = g.value(e);
        if !out.is_finite() {
            return Err(ModelError::NonFinite { stage: "stage2" });
        }
        Ok(columns(out))
    }

    /// Full two-stage predictions for a batch of days.
    pub fn predict(&self, features: &[&FeatureMatrix], stats: &NormStats) -> Result<Vec<DayPrediction>> {
        let init = self.predict_init(features)?;
        let resid = self.predict_residual(features, &init)?;
        Ok(features
            .iter()
            .zip(init.iter().zip(&resid))
            .map(|(f, (yi, e))| DayPrediction::assemble(f.target_date, *yi, *e, stats))
            .collect())
    }
}

/// One day's forecasts. Normalized fields satisfy
/// `y_refine - y_init - e_star == 0` exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayPrediction {
    pub date: NaiveDate,
    pub y_init: [f64; HOURS],
    pub e_star: [f64; HOURS],
    pub y_refine: [f64; HOURS],
    pub y_init_raw: [f64; HOURS],
    pub e_star_raw: [f64; HOURS],
    pub y_refine_raw: [f64; HOURS],
}

impl DayPrediction {
    fn assemble(date: NaiveDate, y_init: [f64; HOURS], residual: [f64; HOURS], stats: &NormStats) -> Self {
        let y_refine: [f64; HOURS] = std::array::from_fn(|h| y_init[h] + residual[h]);
        // recomputing the difference makes the identity exact in floating point
        let e_star: [f64; HOURS] = std::array::from_fn(|h| y_refine[h] - y_init[h]);
        let load = stats.load;
        let span = if load.is_degenerate() { 0.0 } else { load.max - load.min };
        DayPrediction {
            date,
            y_init,
            e_star,
            y_refine,
            y_init_raw: y_init.map(|v| load.denormalize(v)),
            e_star_raw: e_star.map(|v| v * span),
            y_refine_raw: y_refine.map(|v| load.denormalize(v)),
        }
    }
}

/// Eval-mode two-stage forecast for one day.
pub fn predict_day(model: &LoadModel, features: &FeatureMatrix, stats: &NormStats) -> Result<DayPrediction> {
    Ok(model.predict(&[features], stats)?.remove(0))
}
