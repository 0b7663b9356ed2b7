//! Fixed-length descriptors from a pretrained residual backbone.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, AnnotatedRecord, DataError, DataRoot};
use crate::imaging::resize_exact;
use crate::nets::resnet::{self, global_avg_pool, ResNet50};
use crate::nets::{images_to_tensor, NetError, ParamStore};

pub const DEFAULT_INPUT_SIZE: u32 = 224;
pub const META_ARCHITECTURE: &str = "architecture";
pub const META_SOURCE: &str = "pretrain_source";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("feature vector for {image_id} contains non-finite values")]
    NonFinite { image_id: String },
    #[error("feature table {path}: {message}")]
    Table { path: PathBuf, message: String },
}

/// Dataset the backbone weights were trained on. Determines the per-channel
/// mean subtracted from inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainSource {
    ObjectRecognition,
    FaceIdentification,
}

impl PretrainSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PretrainSource::ObjectRecognition => "object_recognition",
            PretrainSource::FaceIdentification => "face_identification",
        }
    }

    /// RGB channel means on the 0..255 scale.
    pub fn channel_mean(self) -> [f32; 3] {
        match self {
            PretrainSource::ObjectRecognition => [123.68, 116.779, 103.939],
            PretrainSource::FaceIdentification => [131.0912, 103.8827, 91.4953],
        }
    }
}

impl fmt::Display for PretrainSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PretrainSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "object_recognition" => Ok(Self::ObjectRecognition),
            "face_identification" => Ok(Self::FaceIdentification),
            other => Err(format!(
                "unknown pretrain source `{other}` (object_recognition, face_identification)"
            )),
        }
    }
}

/// Which region of an annotated image a descriptor is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Face,
    Body,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Face => "face",
            View::Body => "body",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A loaded backbone, read-only after construction.
#[derive(Debug, Clone)]
pub struct BackboneHandle {
    pub architecture: String,
    pub pretrain_source: PretrainSource,
    /// SHA-256 of the weight file, or a synthetic tag for in-memory nets.
    pub fingerprint: String,
    pub input_size: u32,
    net: ResNet50,
}

impl BackboneHandle {
    pub fn from_net(net: ResNet50, source: PretrainSource, fingerprint: String, input_size: u32) -> Self {
        Self {
            architecture: resnet::ARCHITECTURE.to_string(),
            pretrain_source: source,
            fingerprint,
            input_size,
            net,
        }
    }

    pub fn net(&self) -> &ResNet50 {
        &self.net
    }

    pub fn into_net(self) -> ResNet50 {
        self.net
    }

    /// Metadata stored alongside saved backbone weights.
    pub fn metadata(source: PretrainSource) -> BTreeMap<String, String> {
        BTreeMap::from([
            (META_ARCHITECTURE.to_string(), resnet::ARCHITECTURE.to_string()),
            (META_SOURCE.to_string(), source.as_str().to_string()),
        ])
    }

    pub fn save(net: &ResNet50, source: PretrainSource, path: &Path) -> Result<(), NetError> {
        net.params().save(path, &Self::metadata(source))
    }

    pub fn preprocess(&self, img: &RgbImage) -> RgbImage {
        if img.dimensions() == (self.input_size, self.input_size) {
            img.clone()
        } else {
            resize_exact(img, self.input_size, self.input_size)
        }
    }

    pub fn to_input(&self, images: &[&RgbImage]) -> Result<candle_core::Tensor, NetError> {
        let prepared: Vec<RgbImage> = images.iter().map(|i| self.preprocess(i)).collect();
        let refs: Vec<&RgbImage> = prepared.iter().collect();
        images_to_tensor(&refs, self.pretrain_source.channel_mean(), 1.0)
    }
}

/// Loads backbone weights. The file's recorded architecture and pretraining
/// source must match; a missing file is reported as such.
pub fn load_backbone(path: &Path, source: PretrainSource, input_size: u32) -> Result<BackboneHandle, NetError> {
    let (params, meta, fingerprint) = ParamStore::load(path)?;
    match meta.get(META_ARCHITECTURE) {
        Some(a) if a == resnet::ARCHITECTURE => {}
        other => {
            return Err(NetError::WeightMismatch(format!(
                "{}: architecture {:?}, expected {}",
                path.display(),
                other,
                resnet::ARCHITECTURE
            )))
        }
    }
    if let Some(s) = meta.get(META_SOURCE) {
        if s != source.as_str() {
            return Err(NetError::WeightMismatch(format!(
                "{}: pretrained on {s}, expected {source}",
                path.display()
            )));
        }
    }
    let net = ResNet50::from_params(params)?;
    Ok(BackboneHandle::from_net(net, source, fingerprint, input_size))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub image_id: String,
    pub values: Vec<f32>,
}

pub fn extract(handle: &BackboneHandle, image_id: &str, img: &RgbImage) -> Result<FeatureVector, FeatureError> {
    let mut out = extract_many(handle, &[(image_id.to_string(), img)])?;
    Ok(out.remove(0))
}

fn extract_many(handle: &BackboneHandle, batch: &[(String, &RgbImage)]) -> Result<Vec<FeatureVector>, FeatureError> {
    let images: Vec<&RgbImage> = batch.iter().map(|(_, i)| *i).collect();
    let x = handle.to_input(&images)?;
    let pooled = global_avg_pool(&handle.net.feature_map(&x)?)
        .map_err(FeatureError::from)?
        .to_vec2::<f32>()
        .map_err(NetError::from)?;
    batch
        .iter()
        .zip(pooled)
        .map(|((id, _), values)| {
            if values.len() != resnet::FEATURE_DIM || values.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::NonFinite { image_id: id.clone() });
            }
            Ok(FeatureVector {
                image_id: id.clone(),
                values,
            })
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct ExtractSummary {
    pub vectors: Vec<FeatureVector>,
    /// (image_id, reason) for items that could not be processed.
    pub failed: Vec<(String, String)>,
}

/// Extracts descriptors for items produced lazily by `load`. Items whose image
/// cannot be produced are recorded and skipped; the rest are processed in
/// batches of `batch_size`.
pub fn extract_batch<F>(
    handle: &BackboneHandle,
    ids: &[String],
    batch_size: usize,
    mut load: F,
) -> Result<ExtractSummary, FeatureError>
where
    F: FnMut(&str) -> Result<RgbImage, DataError>,
{
    let mut summary = ExtractSummary::default();
    let mut pending: Vec<(String, RgbImage)> = Vec::new();
    let flush = |pending: &mut Vec<(String, RgbImage)>, summary: &mut ExtractSummary| -> Result<(), FeatureError> {
        if pending.is_empty() {
            return Ok(());
        }
        let batch: Vec<(String, &RgbImage)> = pending.iter().map(|(id, img)| (id.clone(), img)).collect();
        summary.vectors.extend(extract_many(handle, &batch)?);
        pending.clear();
        Ok(())
    };
    for id in ids {
        match load(id) {
            Ok(img) => pending.push((id.clone(), img)),
            Err(e) => {
                log::warn!("skipping {id}: {e}");
                summary.failed.push((id.clone(), e.to_string()));
            }
        }
        if pending.len() >= batch_size.max(1) {
            flush(&mut pending, &mut summary)?;
        }
    }
    flush(&mut pending, &mut summary)?;
    Ok(summary)
}

/// The region of `record` used for `view`, or `None` when the record has no
/// face annotation.
pub fn view_crop(record: &AnnotatedRecord, view: View, root: &DataRoot) -> Result<Option<RgbImage>, DataError> {
    let bbox = match view {
        View::Body => record.body_box,
        View::Face => match record.face_box {
            Some(b) => b,
            None => return Ok(None),
        },
    };
    let img = data::load_rgb(&root.resolve(&record.image_path))?;
    data::crop_region(&img, &bbox).map(Some)
}

/// Writes `image_id,f0..f{D-1}` rows. Values use shortest round-trip
/// formatting, so reading back is exact.
pub fn write_feature_table(path: &Path, vectors: &[FeatureVector]) -> Result<(), FeatureError> {
    let err = |m: String| FeatureError::Table {
        path: path.to_path_buf(),
        message: m,
    };
    let dim = vectors.first().map_or(resnet::FEATURE_DIM, |v| v.values.len());
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    let mut header = vec!["image_id".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(|e| err(e.to_string()))?;
    for v in vectors {
        if v.values.len() != dim {
            return Err(err(format!("{} has {} values, expected {dim}", v.image_id, v.values.len())));
        }
        let mut row = vec![v.image_id.clone()];
        row.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

pub fn read_feature_table(path: &Path) -> Result<Vec<FeatureVector>, FeatureError> {
    let err = |m: String| FeatureError::Table {
        path: path.to_path_buf(),
        message: m,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.get(0) != Some("image_id") {
        return Err(err("first column must be image_id".into()));
    }
    let dim = header.len() - 1;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(format!("line {}: {e}", i + 2)))?;
        if values.len() != dim {
            return Err(err(format!("line {}: {} values, expected {dim}", i + 2, values.len())));
        }
        out.push(FeatureVector {
            image_id: rec[0].to_string(),
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let v = vec![
            FeatureVector {
                image_id: "a".into(),
                values: vec![0.1, 1e-30, 3.402_823_5e38],
            },
            FeatureVector {
                image_id: "b".into(),
                values: vec![-0.0, 7.0, 1.0 / 3.0],
            },
        ];
        write_feature_table(&p, &v).unwrap();
        assert_eq!(read_feature_table(&p).unwrap(), v);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("image_id,f0,f1,f2\n"));
    }

    #[test]
    fn source_parsing() {
        assert_eq!(
            "face_identification".parse::<PretrainSource>().unwrap(),
            PretrainSource::FaceIdentification
        );
        assert!("imagenet".parse::<PretrainSource>().is_err());
    }
}
