//! GRU over the 24 hours followed by an FFN that emits the residual
//! correction. Step `t` sees feature column `t` and the stage-1 forecast for
//! hour `t`.

use crate::data::{FeatureMatrix, FEATURE_ROWS, HOURS};
use crate::tensor::{Bound, Graph, Tensor, Var};

use super::config::ModelConfig;
use super::network::{ForwardCtx, STAGE2};
use super::{ModelError, Result};

/// Width of one GRU input step.
pub const REFINE_INPUT: usize = FEATURE_ROWS + 1;

/// Per-hour `[10, B]` input matrices for a batch.
pub fn refine_inputs(features: &[&FeatureMatrix], y_init: &[[f64; HOURS]]) -> Result<Vec<Tensor>> {
    if features.is_empty() || features.len() != y_init.len() {
        return Err(ModelError::Invalid(format!(
            "refinement batch of {} feature grids and {} forecasts",
            features.len(),
            y_init.len()
        )));
    }
    let b = features.len();
    Ok((0..HOURS)
        .map(|t| {
            Tensor::from_fn([REFINE_INPUT, b], |k| {
                let (row, col) = (k / b, k % b);
                if row < FEATURE_ROWS {
                    features[col].get(row, t)
                } else {
                    y_init[col][t]
                }
            })
        })
        .collect())
}

fn gate(g: &mut Graph, p: &Bound, which: char, x: Var, h: Var) -> Result<Var> {
    let wx = g.matmul(p.var(&format!("{STAGE2}.gru.w{which}")), x)?;
    let uh = g.matmul(p.var(&format!("{STAGE2}.gru.u{which}")), h)?;
    let s = g.add(wx, uh)?;
    Ok(g.add_col_bias(s, p.var(&format!("{STAGE2}.gru.b{which}")))?)
}

/// `steps`: 24 `[10, B]` inputs. Returns `[24, B]` residuals.
pub fn refine_load(g: &mut Graph, cfg: &ModelConfig, p: &Bound, steps: &[Var], ctx: &mut ForwardCtx) -> Result<Var> {
    if steps.len() != HOURS {
        return Err(ModelError::Invalid(format!("refinement needs {HOURS} steps, got {}", steps.len())));
    }
    let batch = g.shape(steps[0])[1];
    let mut h = g.constant(Tensor::zeros([cfg.gru_hidden, batch]));
    let mut states = Vec::with_capacity(HOURS);
    for &x in steps {
        let z = gate(g, p, 'z', x, h)?;
        let z = g.sigmoid(z)?;
        let r = gate(g, p, 'r', x, h)?;
        let r = g.sigmoid(r)?;
        let rh = g.mul(r, h)?;
        let cand = gate(g, p, 'h', x, rh)?;
        let cand = g.tanh(cand)?;
        // (1 - z) * h + z * cand
        let delta = g.sub(cand, h)?;
        let step = g.mul(z, delta)?;
        h = g.add(h, step)?;
        states.push(h);
    }
    let all = g.concat(&states, 0)?;
    let hid = g.matmul(p.var(&format!("{STAGE2}.head.w1")), all)?;
    let hid = g.add_col_bias(hid, p.var(&format!("{STAGE2}.head.b1")))?;
    let hid = g.relu(hid)?;
    let hid = ctx.dropout(g, hid)?;
    let e = g.matmul(p.var(&format!("{STAGE2}.head.w2")), hid)?;
    Ok(g.add_col_bias(e, p.var(&format!("{STAGE2}.head.b2")))?)
}
