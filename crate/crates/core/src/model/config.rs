use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Number of convolution layers in the feature extractor.
pub const CONV_LAYERS: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output channels of each conv layer. The last entry is `d_model`.
    pub conv_channels: [usize; CONV_LAYERS],
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    /// Hidden width of the position-wise FFN inside attention blocks.
    pub attn_ffn_hidden: usize,
    /// Hidden width of the stage-1 regression head.
    pub head_hidden: usize,
    pub gru_hidden: usize,
    /// Hidden width of the refinement FFN.
    pub refine_hidden: usize,
    pub dropout: f64,
    /// Skip connections around conv layer pairs.
    pub residual: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_channels: [16, 32, 32, 64, 64, 64, 64],
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            attn_ffn_hidden: 128,
            head_hidden: 64,
            gru_hidden: 32,
            refine_hidden: 64,
            dropout: 0.0,
            residual: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Small network for tests and desk-scale experiments.
    pub fn tiny() -> Self {
        ModelConfig {
            conv_channels: [4, 4, 4, 4, 4, 4, 8],
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            attn_ffn_hidden: 16,
            head_hidden: 32,
            gru_hidden: 8,
            refine_hidden: 16,
            ..Self::default()
        }
    }

    pub fn d_model(&self) -> usize {
        self.conv_channels[CONV_LAYERS - 1]
    }

    pub fn head_dim(&self) -> usize {
        self.d_model() / self.n_heads
    }

    /// Stride of conv layer `i` (0-based): only the second layer downsamples.
    pub fn stride(i: usize) -> usize {
        if i == 1 {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.conv_channels.contains(&0) {
            return err(format!("conv channel widths must be positive: {:?}", self.conv_channels));
        }
        if self.n_heads == 0 {
            return err("n_heads must be at least 1".into());
        }
        let d = self.d_model();
        if !d.is_multiple_of(self.n_heads) {
            return err(format!("d_model {d} is not divisible by n_heads {}", self.n_heads));
        }
        if !d.is_multiple_of(2) {
            return err(format!("d_model {d} must be even for the positional encoding"));
        }
        for (name, v) in [
            ("attn_ffn_hidden", self.attn_ffn_hidden),
            ("head_hidden", self.head_hidden),
            ("gru_hidden", self.gru_hidden),
            ("refine_hidden", self.refine_hidden),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.bn_eps > 0.0 && self.ln_eps > 0.0) {
            return err("normalization eps must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return err(format!("bn_momentum must be in (0, 1], got {}", self.bn_momentum));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(ModelConfig::default().d_model(), 64);
        assert_eq!(ModelConfig::tiny().d_model(), 8);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            n_heads: 3,
            ..ModelConfig::tiny()
        };
        assert!(matches!(cfg.validate(), Err(ModelError::Config(_))));
    }
}
