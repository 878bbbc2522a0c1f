use crate::tensor::{Graph, Tensor, Var};

use super::{ModelError, Result};

fn pe(p: usize, i: usize, d_model: usize) -> f64 {
    let r = (i / 2) as f64;
    let angle = p as f64 / 10000f64.powf(2.0 * r / d_model as f64);
    if i.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// `[C, H, W]` encoding: the sinusoid of the row index plus the sinusoid of
/// the column index, channel `i` using frequency pair `i / 2`.
pub fn positional_encoding_2d(channels: usize, height: usize, width: usize) -> Result<Tensor> {
    if channels == 0 || !channels.is_multiple_of(2) {
        return Err(ModelError::Config(format!("positional encoding needs an even channel count, got {channels}")));
    }
    Ok(Tensor::from_fn([channels, height, width], |k| {
        let (c, rest) = (k / (height * width), k % (height * width));
        pe(rest / width, c, channels) + pe(rest % width, c, channels)
    }))
}

/// Add the encoding to `[C, H, W]` or `[B, C, H, W]` features.
pub fn positional_encode_2d(g: &mut Graph, f: Var) -> Result<Var> {
    let shape = g.shape(f).to_vec();
    let (batch, c, h, w) = match shape[..] {
        [c, h, w] => (1, c, h, w),
        [b, c, h, w] => (b, c, h, w),
        _ => return Err(ModelError::Invalid(format!("positional encoding expects rank 3 or 4, got {shape:?}"))),
    };
    let one = positional_encoding_2d(c, h, w)?;
    let tiled: Vec<f64> = one.data().iter().copied().cycle().take(batch * one.len()).collect();
    let pe = g.constant(Tensor::new(shape, tiled)?);
    Ok(g.add(f, pe)?)
}
