//! The fine-tuned model bundle: backbone, sigmoid head, class names and
//! training provenance in one safetensors file.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor, D};
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EpochLog, FinetuneError, PipelineId, TrainConfig};
use crate::features::{BackboneHandle, PretrainSource};
use crate::nets::resnet::{global_avg_pool, ResNet50, FEATURE_DIM};
use crate::nets::{device, uniform, NetError, ParamStore, TrainableScope};

pub const HEAD_INPUT: usize = FEATURE_DIM;
const BUNDLE_KEY: &str = "bundle";
const BUNDLE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceStage {
    pub pipeline: PipelineId,
    pub dataset: String,
    pub class_names: [String; 2],
    pub config: TrainConfig,
    pub train_count: usize,
    pub val_count: usize,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleMeta {
    format: u32,
    class_names: [String; 2],
    backbone_fingerprint: String,
    pretrain_source: PretrainSource,
    input_size: u32,
    provenance: Vec<ProvenanceStage>,
}

#[derive(Debug, Clone)]
pub struct FineTunedModel {
    pub class_names: [String; 2],
    pub backbone_fingerprint: String,
    pub pretrain_source: PretrainSource,
    pub input_size: u32,
    pub provenance: Vec<ProvenanceStage>,
    pub(crate) net: ResNet50,
    /// `weight` (2, 2048) and `bias` (2).
    pub(crate) head: ParamStore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probabilities: [f64; 2],
    pub class: usize,
}

/// Index of the larger output, class 0 on ties.
pub fn predicted_class(outputs: [f64; 2]) -> usize {
    usize::from(outputs[1] > outputs[0])
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    // saturated outputs stay strictly inside (0, 1)
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Attaches a freshly initialised 2-way sigmoid head to `handle`'s backbone.
pub fn build_head(handle: &BackboneHandle, class_names: [&str; 2], seed: u64) -> Result<FineTunedModel, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = (6.0 / (HEAD_INPUT + 2) as f32).sqrt();
    let mut head = ParamStore::new();
    head.insert("weight", uniform(&[2, HEAD_INPUT], bound, &mut rng)?);
    head.insert("bias", Tensor::zeros(2, DType::F32, &device())?);
    Ok(FineTunedModel {
        class_names: class_names.map(String::from),
        backbone_fingerprint: handle.fingerprint.clone(),
        pretrain_source: handle.pretrain_source,
        input_size: handle.input_size,
        provenance: Vec::new(),
        net: handle.net().clone(),
        head,
    })
}

impl FineTunedModel {
    pub fn net(&self) -> &ResNet50 {
        &self.net
    }

    pub fn head_weight(&self) -> Result<Tensor, NetError> {
        self.head.get("weight")
    }

    pub fn head_bias(&self) -> Result<Tensor, NetError> {
        self.head.get("bias")
    }

    pub fn set_head(&mut self, weight: Tensor, bias: Tensor) -> Result<(), NetError> {
        if weight.dims() != [2, HEAD_INPUT] || bias.dims() != [2] {
            return Err(NetError::WeightMismatch(format!(
                "head must be (2, {HEAD_INPUT}) + (2), got {:?} + {:?}",
                weight.dims(),
                bias.dims()
            )));
        }
        self.head.insert("weight", weight);
        self.head.insert("bias", bias);
        Ok(())
    }

    /// The backbone as a feature extractor handle.
    pub fn backbone_handle(&self) -> BackboneHandle {
        BackboneHandle::from_net(
            self.net.clone(),
            self.pretrain_source,
            self.backbone_fingerprint.clone(),
            self.input_size,
        )
    }

    pub(crate) fn set_trainable(&mut self, scope: TrainableScope) -> Result<(), NetError> {
        self.net.set_trainable(scope)?;
        self.head.set_trainable(|_| true)
    }

    pub(crate) fn freeze(&mut self) -> Result<(), NetError> {
        self.net.params_mut().set_trainable(|_| false)?;
        self.head.set_trainable(|_| false)
    }

    pub fn input_tensor(&self, images: &[&RgbImage]) -> Result<Tensor, NetError> {
        self.backbone_handle().to_input(images)
    }

    /// Final feature map `(N, 2048, h, w)` and pre-sigmoid outputs `(N, 2)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor), NetError> {
        let fmap = self.net.feature_map(x)?;
        let logits = self.head_logits(&global_avg_pool(&fmap)?)?;
        Ok((fmap, logits))
    }

    pub fn head_logits(&self, pooled: &Tensor) -> Result<Tensor, NetError> {
        let w = self.head.get("weight")?;
        let b = self.head.get("bias")?;
        Ok(pooled.matmul(&w.t()?)?.broadcast_add(&b.unsqueeze(0)?)?)
    }

    pub fn logits(&self, images: &[&RgbImage]) -> Result<Vec<[f64; 2]>, NetError> {
        let (_, logits) = self.forward(&self.input_tensor(images)?)?;
        Ok(logits
            .to_dtype(DType::F64)?
            .to_vec2::<f64>()?
            .into_iter()
            .map(|r| [r[0], r[1]])
            .collect())
    }

    pub fn predict(&self, images: &[&RgbImage]) -> Result<Vec<Prediction>, NetError> {
        Ok(self
            .logits(images)?
            .into_iter()
            .map(|z| {
                let probabilities = z.map(sigmoid);
                Prediction {
                    probabilities,
                    class: predicted_class(probabilities),
                }
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), FinetuneError> {
        let mut store = ParamStore::new();
        store.absorb("backbone.", self.net.params());
        store.absorb("head.", &self.head);
        let meta = BundleMeta {
            format: BUNDLE_FORMAT,
            class_names: self.class_names.clone(),
            backbone_fingerprint: self.backbone_fingerprint.clone(),
            pretrain_source: self.pretrain_source,
            input_size: self.input_size,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_string(&meta).map_err(|e| FinetuneError::Bundle(e.to_string()))?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| NetError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        store.save(path, &BTreeMap::from([(BUNDLE_KEY.to_string(), json)]))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FinetuneError> {
        let (store, meta, _) = ParamStore::load(path)?;
        let json = meta
            .get(BUNDLE_KEY)
            .ok_or_else(|| FinetuneError::Bundle(format!("{}: no bundle metadata", path.display())))?;
        let meta: BundleMeta =
            serde_json::from_str(json).map_err(|e| FinetuneError::Bundle(format!("{}: {e}", path.display())))?;
        if meta.format != BUNDLE_FORMAT {
            return Err(FinetuneError::Bundle(format!(
                "{}: format {} unsupported",
                path.display(),
                meta.format
            )));
        }
        let net = ResNet50::from_params(store.extract("backbone."))?;
        let head = store.extract("head.");
        head.expect_shape("weight", &[2, HEAD_INPUT])?;
        head.expect_shape("bias", &[2])?;
        Ok(Self {
            class_names: meta.class_names,
            backbone_fingerprint: meta.backbone_fingerprint,
            pretrain_source: meta.pretrain_source,
            input_size: meta.input_size,
            provenance: meta.provenance,
            net,
            head,
        })
    }

    pub fn last_pipeline(&self) -> Option<PipelineId> {
        self.provenance.last().map(|p| p.pipeline)
    }
}

/// Mean over the batch of binary cross-entropy summed over both outputs,
/// from logits: `max(z, 0) - z y + ln(1 + e^{-|z|})`.
pub(crate) fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor, NetError> {
    let relu = logits.relu()?;
    let zy = logits.mul(targets)?;
    let soft = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let per = ((relu - zy)? + soft)?.sum(D::Minus1)?;
    Ok(per.mean_all()?)
}
