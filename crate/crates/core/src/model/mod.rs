//! CNN feature extractor, self-attention encoder/decoder with a regression
//! head (stage 1) and the GRU residual refinement head (stage 2).

mod attention;
mod cnn;
mod config;
mod head;
mod network;
mod position;
mod refine;

pub use attention::{encoder_decoder_forward, multi_head_attention, self_attention, Attention, HeadWeights};
pub use cnn::feature_extract;
pub use config::ModelConfig;
pub use head::ffn_regress_head;
pub use network::{
    init_stage1, init_stage2, predict_day, stage1_forward, stage1_input, stage2_forward, DayPrediction, ForwardCtx, LoadModel, Mode,
    STAGE1, STAGE2,
};
pub use position::{positional_encode_2d, positional_encoding_2d};
pub use refine::{refine_inputs, refine_load};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite values in {stage} output")]
    NonFinite { stage: &'static str },
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
