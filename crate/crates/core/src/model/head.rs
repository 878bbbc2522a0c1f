use crate::tensor::{Bound, Graph, Var};

use super::network::{ForwardCtx, STAGE1};
use super::Result;

/// Two affine layers with a ReLU between: `[D, B]` columns to `[24, B]`.
pub fn ffn_regress_head(g: &mut Graph, p: &Bound, z: Var, ctx: &mut ForwardCtx) -> Result<Var> {
    let h = g.matmul(p.var(&format!("{STAGE1}.head.w1")), z)?;
    let h = g.add_col_bias(h, p.var(&format!("{STAGE1}.head.b1")))?;
    let h = g.relu(h)?;
    let h = ctx.dropout(g, h)?;
    let y = g.matmul(p.var(&format!("{STAGE1}.head.w2")), h)?;
    Ok(g.add_col_bias(y, p.var(&format!("{STAGE1}.head.b2")))?)
}
