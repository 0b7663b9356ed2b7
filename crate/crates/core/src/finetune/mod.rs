//! Fine-tuning a pretrained backbone with a two-output sigmoid head.

mod augment;
mod early_stop;
mod model;
mod pipeline;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment, mirror, Augmentation};
pub use early_stop::{trace, EarlyStopper, StopDecision};
pub use model::{build_head, predicted_class, FineTunedModel, Prediction, ProvenanceStage, HEAD_INPUT};
pub use pipeline::{pipelines, FinetunePipeline, PipelineId, PipelineInputs};
pub use trainer::{train, LabeledImages, TrainOutcome};

use crate::data::DataError;
use crate::nets::{NetError, TrainableScope};

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training data must contain both classes")]
    SingleClassData,
    #[error("non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize, logs: Vec<EpochLog> },
    #[error("pipeline {pipeline} requires {requirement}")]
    MissingInput { pipeline: PipelineId, requirement: String },
    #[error("bundle {0}")]
    Bundle(String),
}

impl From<candle_core::Error> for FinetuneError {
    fn from(e: candle_core::Error) -> Self {
        FinetuneError::Net(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub early_stop_tolerance: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub augmentation: Augmentation,
    pub trainable: TrainableScope,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 32,
            val_fraction: 0.1,
            early_stop_tolerance: 0.05,
            early_stop_patience: 10,
            max_epochs: 100,
            augmentation: Augmentation::default(),
            trainable: TrainableScope::All,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, keyed by field name.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(("momentum", format!("must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            out.push(("batch_size", "must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            out.push(("val_fraction", format!("must be in (0, 1), got {}", self.val_fraction)));
        }
        if !(self.early_stop_tolerance >= 0.0) {
            out.push((
                "early_stop_tolerance",
                format!("must be >= 0, got {}", self.early_stop_tolerance),
            ));
        }
        if self.early_stop_patience == 0 {
            out.push(("early_stop_patience", "must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            out.push(("max_epochs", "must be at least 1".into()));
        }
        let a = &self.augmentation;
        for (k, v) in [
            ("shear_range", a.shear_range),
            ("shift_range", a.shift_range),
            ("rotation_range", a.rotation_range),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push((k, format!("must be >= 0, got {v}")));
            }
        }
        if a.shift_range >= 1.0 {
            out.push(("shift_range", "must be below 1".into()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), FinetuneError> {
        match self.problems().first() {
            None => Ok(()),
            Some((k, m)) => Err(FinetuneError::InvalidConfig(format!("{k}: {m}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub const EPOCH_LOG_HEADER: [&str; 5] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"];

pub fn write_epoch_logs(path: &std::path::Path, logs: &[EpochLog]) -> Result<(), DataError> {
    let io = |e: std::io::Error| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut text = EPOCH_LOG_HEADER.join(",");
    text.push('\n');
    for l in logs {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            l.epoch, l.train_loss, l.train_acc, l.val_loss, l.val_acc
        ));
    }
    std::fs::write(path, text).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_problems_are_keyed() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            learning_rate: -1.0,
            val_fraction: 1.5,
            ..TrainConfig::default()
        };
        let keys: Vec<_> = c.problems().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, ["learning_rate", "val_fraction"]);
    }
}
