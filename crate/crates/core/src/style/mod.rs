//! Styled surrogate dataset: pairing style scenes with content images and
//! rendering the content in each scene's style.

pub mod adain;
pub mod dataset;
pub mod pairing;
pub mod stylizer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Gender};
use crate::nets::NetError;

pub use adain::{adain, AdainOutput, FeatureGrid, STD_EPSILON};
pub use dataset::{build_styled_dataset, BuildSummary, StyledSample};
pub use pairing::{plan_pairings, style_sources, PairingEntry, StylePairingPlan, StyleSource};
pub use stylizer::{build_stylizer, stylizers, AdainStylizer, PixelStatsStylizer, StyleTransfer, StylizerFactory};

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("content has {content} channels but style has {style}")]
    ChannelMismatch { content: usize, style: usize },
    #[error("need {requested} {} content images per style, only {available} available", .gender.as_str())]
    InsufficientContent {
        gender: Gender,
        available: usize,
        requested: usize,
    },
    #[error("style-transfer weights missing: {0}")]
    MissingWeights(PathBuf),
    #[error("unknown style-transfer method `{0}`")]
    UnknownMethod(String),
    #[error("plan references unknown or inconsistent record: {0}")]
    UnknownReference(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Style-stage settings. `short_side` is the working resolution of the
/// shorter image side before encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSettings {
    pub method: String,
    pub encoder_weights: Option<PathBuf>,
    pub decoder_weights: Option<PathBuf>,
    pub short_side: u32,
    pub alpha: f64,
    pub per_gender: usize,
    /// Held-out fraction of the styled set, per class.
    pub test_fraction: f64,
}

impl Default for StyleSettings {
    fn default() -> Self {
        Self {
            method: "adain".into(),
            encoder_weights: None,
            decoder_weights: None,
            short_side: 512,
            alpha: 1.0,
            per_gender: 8,
            test_fraction: 0.25,
        }
    }
}
