//! The three fine-tuning recipes, registered by name.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{build_head, train, FineTunedModel, FinetuneError, LabeledImages, ProvenanceStage, TrainConfig, TrainOutcome};
use crate::data::{Character, Gender};
use crate::features::BackboneHandle;
use crate::registry::{Named, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineId {
    A,
    B,
    C,
}

impl PipelineId {
    pub const ALL: [PipelineId; 3] = [PipelineId::A, PipelineId::B, PipelineId::C];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineId::A => "A",
            PipelineId::B => "B",
            PipelineId::C => "C",
        }
    }
}

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(PipelineId::A),
            "B" => Ok(PipelineId::B),
            "C" => Ok(PipelineId::C),
            _ => Err(format!("unknown pipeline `{s}` (A, B, C)")),
        }
    }
}

/// What a pipeline starts from.
pub struct PipelineInputs<'a> {
    pub backbone: Option<&'a BackboneHandle>,
    pub init: Option<FineTunedModel>,
    pub data: &'a LabeledImages,
    pub config: &'a TrainConfig,
}

pub trait FinetunePipeline: Named + Send + Sync {
    fn id(&self) -> PipelineId;

    fn class_names(&self) -> [&'static str; 2];

    /// The untrained starting point.
    fn initial_model(&self, inputs: &mut PipelineInputs<'_>) -> Result<FineTunedModel, FinetuneError>;

    fn run(&self, mut inputs: PipelineInputs<'_>) -> Result<TrainOutcome, FinetuneError> {
        let model = self.initial_model(&mut inputs)?;
        let mut out = train(model, inputs.data, inputs.config)?;
        out.model.provenance.push(ProvenanceStage {
            pipeline: self.id(),
            dataset: inputs.data.name.clone(),
            class_names: self.class_names().map(String::from),
            config: inputs.config.clone(),
            train_count: out.train_ids.len(),
            val_count: out.val_ids.len(),
            best_epoch: out.best_epoch,
            epochs: out.logs.clone(),
        });
        Ok(out)
    }
}

fn require_backbone<'a>(id: PipelineId, inputs: &PipelineInputs<'a>) -> Result<&'a BackboneHandle, FinetuneError> {
    inputs.backbone.ok_or(FinetuneError::MissingInput {
        pipeline: id,
        requirement: "a backbone".into(),
    })
}

/// Target-only: a new head on the pretrained backbone, trained on character
/// crops.
struct TargetOnly;

/// Surrogate-only: a new head trained on styled content images.
struct StyledSurrogate;

/// Continues a surrogate-trained model on character crops, keeping its head.
struct SurrogateThenTarget;

impl Named for TargetOnly {
    fn name(&self) -> &'static str {
        "A"
    }
}

impl FinetunePipeline for TargetOnly {
    fn id(&self) -> PipelineId {
        PipelineId::A
    }

    fn class_names(&self) -> [&'static str; 2] {
        Character::ALL.map(Character::as_str)
    }

    fn initial_model(&self, inputs: &mut PipelineInputs<'_>) -> Result<FineTunedModel, FinetuneError> {
        let b = require_backbone(self.id(), inputs)?;
        Ok(build_head(b, self.class_names(), inputs.config.seed)?)
    }
}

impl Named for StyledSurrogate {
    fn name(&self) -> &'static str {
        "B"
    }
}

impl FinetunePipeline for StyledSurrogate {
    fn id(&self) -> PipelineId {
        PipelineId::B
    }

    fn class_names(&self) -> [&'static str; 2] {
        Gender::ALL.map(Gender::as_str)
    }

    fn initial_model(&self, inputs: &mut PipelineInputs<'_>) -> Result<FineTunedModel, FinetuneError> {
        let b = require_backbone(self.id(), inputs)?;
        Ok(build_head(b, self.class_names(), inputs.config.seed)?)
    }
}

impl Named for SurrogateThenTarget {
    fn name(&self) -> &'static str {
        "C"
    }
}

impl FinetunePipeline for SurrogateThenTarget {
    fn id(&self) -> PipelineId {
        PipelineId::C
    }

    fn class_names(&self) -> [&'static str; 2] {
        Character::ALL.map(Character::as_str)
    }

    fn initial_model(&self, inputs: &mut PipelineInputs<'_>) -> Result<FineTunedModel, FinetuneError> {
        let missing = |what: &str| FinetuneError::MissingInput {
            pipeline: PipelineId::C,
            requirement: what.to_string(),
        };
        let mut model = inputs.init.take().ok_or_else(|| missing("an initial model from pipeline B"))?;
        if model.last_pipeline() != Some(PipelineId::B) {
            return Err(missing("an initial model whose last stage is pipeline B"));
        }
        // female -> Mary, male -> Gabriel; head weights carry over unchanged
        model.class_names = self.class_names().map(String::from);
        Ok(model)
    }
}

pub fn pipelines() -> Registry<dyn FinetunePipeline> {
    let mut r: Registry<dyn FinetunePipeline> = Registry::new();
    r.register(Arc::new(TargetOnly))
        .register(Arc::new(StyledSurrogate))
        .register(Arc::new(SurrogateThenTarget));
    r
}
