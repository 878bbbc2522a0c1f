//! Self-attention over a `[d, n]` token matrix whose columns are tokens:
//! `Q = Wq X`, `K = Wk X`, `V = Wv X`, `alpha = softmax(K^T Q / sqrt(d_k))`
//! normalized over each column, and `A = V alpha`.

use crate::tensor::{Bound, Graph, Var};

use super::config::ModelConfig;
use super::network::{ForwardCtx, STAGE1};
use super::{ModelError, Result};

pub struct Attention {
    /// `[d_v, n]`
    pub output: Var,
    /// `[n, n]`, column `j` holds the weights used by token `j`.
    pub weights: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

pub fn self_attention(g: &mut Graph, x: Var, wq: Var, wk: Var, wv: Var) -> Result<Attention> {
    let q = g.matmul(wq, x)?;
    let k = g.matmul(wk, x)?;
    let v = g.matmul(wv, x)?;
    let d_k = g.shape(k)[0];
    if d_k == 0 {
        return Err(ModelError::Invalid("attention key width is zero".into()));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(kt, q)?;
    let scores = g.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = g.softmax(scores, 0)?;
    let output = g.matmul(v, weights)?;
    Ok(Attention { output, weights })
}

/// Heads run on `d / n_heads`-row projections, are stacked back to `d` rows
/// and mixed by `wo`.
pub fn multi_head_attention(g: &mut Graph, x: Var, heads: &[HeadWeights], wo: Var) -> Result<Var> {
    if heads.is_empty() {
        return Err(ModelError::Invalid("multi-head attention needs at least one head".into()));
    }
    let d = g.shape(x)[0];
    if !d.is_multiple_of(heads.len()) {
        return Err(ModelError::Config(format!("width {d} is not divisible by {} heads", heads.len())));
    }
    let mut outs = Vec::with_capacity(heads.len());
    for h in heads {
        outs.push(self_attention(g, x, h.wq, h.wk, h.wv)?.output);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 0)? };
    Ok(g.matmul(wo, cat)?)
}

pub(crate) fn block_prefix(kind: &str, layer: usize) -> String {
    format!("{STAGE1}.{kind}{layer}")
}

/// `LN(X + MHA(X))` followed by `LN(Y + FFN(Y))`.
fn attention_block(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    prefix: &str,
    x: Var,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let heads: Vec<HeadWeights> = (0..cfg.n_heads)
        .map(|h| HeadWeights {
            wq: p.var(&format!("{prefix}.attn.head{h}.wq")),
            wk: p.var(&format!("{prefix}.attn.head{h}.wk")),
            wv: p.var(&format!("{prefix}.attn.head{h}.wv")),
        })
        .collect();
    let a = multi_head_attention(g, x, &heads, p.var(&format!("{prefix}.attn.wo")))?;
    let a = ctx.dropout(g, a)?;
    let y = g.add(x, a)?;
    let y = g.layer_norm_columns(y, p.var(&format!("{prefix}.ln1.gamma")), p.var(&format!("{prefix}.ln1.beta")), cfg.ln_eps)?;

    let hid = g.matmul(p.var(&format!("{prefix}.ffn.w1")), y)?;
    let hid = g.add_col_bias(hid, p.var(&format!("{prefix}.ffn.b1")))?;
    let hid = g.relu(hid)?;
    let hid = ctx.dropout(g, hid)?;
    let f = g.matmul(p.var(&format!("{prefix}.ffn.w2")), hid)?;
    let f = g.add_col_bias(f, p.var(&format!("{prefix}.ffn.b2")))?;
    let z = g.add(y, f)?;
    Ok(g.layer_norm_columns(z, p.var(&format!("{prefix}.ln2.gamma")), p.var(&format!("{prefix}.ln2.beta")), cfg.ln_eps)?)
}

/// Encoder blocks then decoder blocks over one `[d_model, n]` token matrix.
/// With zero layers this is the identity.
pub fn encoder_decoder_forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    tokens: Var,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let mut h = tokens;
    for l in 0..cfg.n_encoder_layers {
        h = attention_block(g, cfg, p, &block_prefix("enc", l), h, ctx)?;
    }
    for l in 0..cfg.n_decoder_layers {
        h = attention_block(g, cfg, p, &block_prefix("dec", l), h, ctx)?;
    }
    Ok(h)
}
