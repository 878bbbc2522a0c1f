//! Forecast metrics, reporting slices, residual analysis and the ablation
//! harness.

mod ablation;
mod metrics;
mod report;
mod residual;

pub use ablation::{format_ablation_table, run_ablation, write_ablation_csv, AblationConfig, AblationReport, Arm, ArmRun, ArmSummary};
pub use metrics::{daily_accuracy, daily_mean_error};
pub use report::{
    evaluate_model, format_report_table, period_report, time_predict_day, weekly_report, write_report_csv, DayEval,
    EvalReport, Evaluation, SliceMetrics,
};
pub use residual::{outlier_rule_passes, residual_analysis, write_residual_csv, ResidualAnalysis, OUTLIER_FRACTION, OUTLIER_Z};

use thiserror::Error;

use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("actual load is zero at hour {hour}; relative accuracy is undefined")]
    ZeroActual { hour: usize },
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("residuals have zero variance; standardization skipped")]
    ZeroVariance,
    #[error("{0}")]
    Invalid(String),
    #[error("arm {arm}, seed {seed}: {source}")]
    Arm {
        arm: &'static str,
        seed: u64,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
