use loadcast::data::DataError;
use loadcast::eval::EvalError;
use loadcast::model::ModelError;
use loadcast::training::{CheckpointError, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } | ModelError::Tensor(_) => CliError::Numeric(e.to_string()),
            ModelError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Schedule(m) => CliError::Config(m),
            e @ (TrainError::NonFiniteLoss { .. } | TrainError::StageOneDrift(_) | TrainError::Tensor(_)) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Arm { arm, seed, source } => match CliError::from(source) {
                CliError::Numeric(m) => CliError::Numeric(format!("arm {arm}, seed {seed}: {m}")),
                CliError::Config(m) => CliError::Config(format!("arm {arm}, seed {seed}: {m}")),
                other => CliError::Data(format!("arm {arm}, seed {seed}: {other}")),
            },
            EvalError::Model(m) => m.into(),
            EvalError::Train(t) => t.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
