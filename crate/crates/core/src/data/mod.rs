//! Ingest, cleaning, normalization and feature construction for hourly load data.

mod clean;
mod csv_io;
mod features;
mod normalize;
mod record;
mod split;
mod synth;

pub use clean::{clean_records, day_statistics, detect_anomalous_day, locate_and_replace_outliers, AnomalyCheck, CleaningReport, Replacement, DEFAULT_SIGMA_THRESHOLD_KW};
pub use csv_io::{load_csv, read_csv, write_csv, write_csv_file, CsvSchema, IngestIssue, IngestReport, Ingested};
pub use features::{build_feature_matrix, FeatureMatrix, History, Sample, FEATURE_ROWS};
pub use normalize::{denormalize, minmax_normalize, MinMax, NormStats};
pub use record::{DailyRecord, DayType, Unit, HOURS};
pub use split::{split_train_test, DatasetSplit, SplitSpec};
pub use synth::{daily_shape, expected_load, expected_temperature, is_synthetic_holiday, month_temperature, synthesize_dataset, SynthProfile};

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("ingest failed:\n{0}")]
    Ingest(IngestReport),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{date}: every hour was flagged as an outlier, day cannot be repaired")]
    UnrecoverableDay { date: NaiveDate },
    #[error("{date}: skipped ({reason})")]
    SkipDay { date: NaiveDate, reason: String },
    #[error("test window {start}..={end} contains no usable days")]
    EmptyTestWindow { start: NaiveDate, end: NaiveDate },
    #[error("chronology violation: {0}")]
    Chronology(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
