//! Seven conv -> batch-norm -> ReLU layers. Layers (1,2), (3,4) and (5,6)
//! form residual blocks whose skip is the identity when the block keeps its
//! shape and a 1x1 projection otherwise; layer 7 stands alone.

use crate::tensor::{Bound, Graph, ParamStore, Var};

use super::config::{ModelConfig, CONV_LAYERS};
use super::network::{ForwardCtx, Mode, STAGE1};
use super::{ModelError, Result};

pub(crate) fn conv_name(layer: usize) -> String {
    format!("{STAGE1}.cnn.conv{layer}.weight")
}

pub(crate) fn bn_name(layer: usize, field: &str) -> String {
    format!("{STAGE1}.cnn.bn{layer}.{field}")
}

pub(crate) fn skip_name(block: usize) -> String {
    format!("{STAGE1}.cnn.skip{block}.weight")
}

/// Input channels of conv layer `layer` (1-based).
pub(crate) fn in_channels(cfg: &ModelConfig, layer: usize) -> usize {
    if layer == 1 {
        1
    } else {
        cfg.conv_channels[layer - 2]
    }
}

/// `(c_in, c_out, stride)` of the skip around block `block` (1-based), or
/// `None` when the identity fits.
pub(crate) fn skip_projection(cfg: &ModelConfig, block: usize) -> Option<(usize, usize, usize)> {
    let first = 2 * block - 1;
    let c_in = in_channels(cfg, first);
    let c_out = cfg.conv_channels[first];
    let stride = ModelConfig::stride(first - 1) * ModelConfig::stride(first);
    (c_in != c_out || stride != 1).then_some((c_in, c_out, stride))
}

fn conv_bn(
    g: &mut Graph,
    cfg: &ModelConfig,
    store: &ParamStore,
    p: &Bound,
    x: Var,
    layer: usize,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let y = g.conv2d(x, p.var(&conv_name(layer)), ModelConfig::stride(layer - 1))?;
    let (gamma, beta) = (p.var(&bn_name(layer, "gamma")), p.var(&bn_name(layer, "beta")));
    match ctx.mode {
        Mode::Train => {
            let (out, stats) = g.batch_norm_train(y, gamma, beta, cfg.bn_eps)?;
            ctx.bn_stats.push((format!("{STAGE1}.cnn.bn{layer}"), stats));
            Ok(out)
        }
        Mode::Eval => {
            let buffer = |field: &str| {
                let name = bn_name(layer, field);
                store.buffer(&name).ok_or(ModelError::MissingParameter(name))
            };
            let (rm, rv) = (buffer("running_mean")?, buffer("running_var")?);
            Ok(g.batch_norm_eval(y, gamma, beta, rm.data(), rv.data(), cfg.bn_eps)?)
        }
    }
}

/// `[B, 1, 9, 24]` (or `[1, 9, 24]`) feature grids to `[B, C7, 5, 12]` maps.
pub fn feature_extract(
    g: &mut Graph,
    cfg: &ModelConfig,
    store: &ParamStore,
    p: &Bound,
    x: Var,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let mut h = x;
    for block in 1..=CONV_LAYERS / 2 {
        let first = 2 * block - 1;
        let a = conv_bn(g, cfg, store, p, h, first, ctx)?;
        let a = g.relu(a)?;
        let b = conv_bn(g, cfg, store, p, a, first + 1, ctx)?;
        let b = if cfg.residual {
            let skip = match skip_projection(cfg, block) {
                Some((_, _, stride)) => g.conv2d(h, p.var(&skip_name(block)), stride)?,
                None => h,
            };
            g.add(b, skip)?
        } else {
            b
        };
        h = g.relu(b)?;
    }
    let y = conv_bn(g, cfg, store, p, h, CONV_LAYERS, ctx)?;
    Ok(g.relu(y)?)
}
