//! Day-ahead electric load forecasting.
//!
//! A CNN feature extractor over a 9×24 day matrix feeds a self-attention
//! encoder-decoder that regresses the next day's 24 hourly loads. A GRU
//! refinement head then predicts the residual of that forecast. Everything
//! runs on the small reverse-mode autodiff engine in [`tensor`].

pub mod data;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod training;

pub use data::{DailyRecord, DatasetSplit, DayType, FeatureMatrix, NormStats, Sample, Unit, HOURS};
pub use eval::{EvalReport, ResidualAnalysis};
pub use model::{DayPrediction, LoadModel, ModelConfig};
pub use training::{Checkpoint, StageSchedule};

/// Version of the core library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
