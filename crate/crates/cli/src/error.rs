use icono_core::cam::CamError;
use icono_core::classical::ClassicalError;
use icono_core::data::DataError;
use icono_core::eval::EvalError;
use icono_core::features::FeatureError;
use icono_core::finetune::FinetuneError;
use icono_core::nets::NetError;
use icono_core::style::StyleError;
use thiserror::Error;

use crate::config::ConfigIssue;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_STAGE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", list(.0))]
    Config(Vec<ConfigIssue>),
    #[error("data error in {stage}: {message}")]
    Data { stage: String, message: String },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
}

fn list(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data { .. } => EXIT_DATA,
            CliError::Stage { .. } => EXIT_STAGE,
        }
    }

    pub fn stage(stage: &str, message: impl ToString) -> Self {
        CliError::Stage {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }

    pub fn data(stage: &str, message: impl ToString) -> Self {
        CliError::Data {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

/// Maps a library error raised inside `stage` onto the exit-code classes:
/// bad input data is a data error, everything else a stage failure.
pub trait Classify {
    fn in_stage(self, stage: &str) -> CliError;
}

impl Classify for DataError {
    fn in_stage(self, stage: &str) -> CliError {
        CliError::data(stage, self)
    }
}

impl Classify for StyleError {
    fn in_stage(self, stage: &str) -> CliError {
        match self {
            StyleError::Data(e) => e.in_stage(stage),
            StyleError::InsufficientContent { .. } => CliError::data(stage, self),
            other => CliError::stage(stage, other),
        }
    }
}

impl Classify for FeatureError {
    fn in_stage(self, stage: &str) -> CliError {
        match self {
            FeatureError::Data(e) => e.in_stage(stage),
            other => CliError::stage(stage, other),
        }
    }
}

impl Classify for FinetuneError {
    fn in_stage(self, stage: &str) -> CliError {
        match self {
            FinetuneError::Data(e) => e.in_stage(stage),
            FinetuneError::SingleClassData => CliError::data(stage, self),
            other => CliError::stage(stage, other),
        }
    }
}

impl Classify for ClassicalError {
    fn in_stage(self, stage: &str) -> CliError {
        match self {
            ClassicalError::SingleClassData | ClassicalError::TooFewSamples { .. } => CliError::data(stage, self),
            other => CliError::stage(stage, other),
        }
    }
}

macro_rules! stage_failure {
    ($($t:ty),*) => {$(
        impl Classify for $t {
            fn in_stage(self, stage: &str) -> CliError {
                CliError::stage(stage, self)
            }
        }
    )*};
}

stage_failure!(EvalError, CamError, NetError, std::io::Error, serde_json::Error);

pub trait ResultExt<T> {
    fn in_stage(self, stage: &str) -> Result<T, CliError>;
}

impl<T, E: Classify> ResultExt<T> for Result<T, E> {
    fn in_stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| e.in_stage(stage))
    }
}
