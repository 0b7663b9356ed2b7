//! Mini-batch SGD with momentum, validation tracking and best-epoch restore.

use candle_core::{DType, Tensor, Var};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::bce_with_logits;
use super::{augment, EarlyStopper, EpochLog, FineTunedModel, FinetuneError, StopDecision, TrainConfig};
use crate::data::stratified_holdout;
use crate::nets::{device, images_to_tensor, NetError};

/// Images with class indices, already cropped to the region of interest.
#[derive(Debug, Clone, Default)]
pub struct LabeledImages {
    pub name: String,
    pub ids: Vec<String>,
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FineTunedModel,
    pub logs: Vec<EpochLog>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn one_hot(labels: &[usize]) -> Result<Tensor, NetError> {
    let v: Vec<f32> = labels
        .iter()
        .flat_map(|&l| if l == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect();
    Ok(Tensor::from_vec(v, (labels.len(), 2), &device())?)
}

fn correct(logits: &Tensor, labels: &[usize]) -> Result<usize, NetError> {
    let rows = logits.to_dtype(DType::F32)?.to_vec2::<f32>()?;
    Ok(rows
        .iter()
        .zip(labels)
        .filter(|(z, &l)| usize::from(z[1] > z[0]) == l)
        .count())
}

/// Mean loss and accuracy over `idx` without augmentation.
fn evaluate(
    model: &FineTunedModel,
    images: &[RgbImage],
    labels: &[usize],
    idx: &[usize],
    batch: usize,
) -> Result<(f64, f64), NetError> {
    if idx.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut loss, mut hits) = (0.0, 0usize);
    for chunk in idx.chunks(batch) {
        let imgs: Vec<&RgbImage> = chunk.iter().map(|&i| &images[i]).collect();
        let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let x = model.input_tensor(&imgs)?;
        let (_, logits) = model.forward(&x)?;
        let logits = logits.detach();
        loss += f64::from(bce_with_logits(&logits, &one_hot(&ys)?)?.to_scalar::<f32>()?) * chunk.len() as f64;
        hits += correct(&logits, &ys)?;
    }
    Ok((loss / idx.len() as f64, hits as f64 / idx.len() as f64))
}

/// Fine-tunes `model` on `data`. A validation subset is held out per class
/// under `cfg.seed`; the returned model carries the weights of the epoch
/// with the lowest validation loss.
pub fn train(mut model: FineTunedModel, data: &LabeledImages, cfg: &TrainConfig) -> Result<TrainOutcome, FinetuneError> {
    cfg.validate()?;
    if !(data.labels.contains(&0) && data.labels.contains(&1)) {
        return Err(FinetuneError::SingleClassData);
    }
    let (train_idx, val_idx) = stratified_holdout(&data.labels, cfg.val_fraction, cfg.seed);
    if val_idx.is_empty() || train_idx.is_empty() {
        return Err(FinetuneError::InvalidConfig(format!(
            "val_fraction {} leaves {} training and {} validation images",
            cfg.val_fraction,
            train_idx.len(),
            val_idx.len()
        )));
    }
    let handle = model.backbone_handle();
    let images: Vec<RgbImage> = data.images.iter().map(|i| handle.preprocess(i)).collect();
    drop(handle);

    model.set_trainable(cfg.trainable)?;
    let vars: Vec<Var> = model
        .net
        .params()
        .trainable()
        .chain(model.head.trainable())
        .map(|(_, v)| v.clone())
        .collect();
    let mut velocity: Vec<Tensor> = vars
        .iter()
        .map(|v| v.as_tensor().zeros_like())
        .collect::<Result<_, _>>()
        .map_err(NetError::from)?;
    log::info!(
        "training {} on {} images ({} validation), {} trainable values",
        data.name,
        train_idx.len(),
        val_idx.len(),
        vars.iter().map(|v| v.elem_count()).sum::<usize>()
    );

    let mut stopper = EarlyStopper::new(cfg.early_stop_tolerance, cfg.early_stop_patience);
    let mut logs = Vec::new();
    let mut best: Option<(f64, _, _)> = None;
    let mean = model.pretrain_source.channel_mean();
    for epoch in 1..=cfg.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0)));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let augmented: Vec<RgbImage> = chunk
                .iter()
                .map(|&i| augment(&images[i], &cfg.augmentation, mix(cfg.seed, epoch as u64, i as u64 + 1)))
                .collect();
            let refs: Vec<&RgbImage> = augmented.iter().collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let x = images_to_tensor(&refs, mean, 1.0)?;
            let (_, logits) = model.forward(&x)?;
            let loss = bce_with_logits(&logits, &one_hot(&ys)?)?;
            let lv = f64::from(loss.to_scalar::<f32>().map_err(NetError::from)?);
            if !lv.is_finite() {
                return Err(FinetuneError::Divergence { epoch, logs });
            }
            loss_sum += lv * chunk.len() as f64;
            hits += correct(&logits, &ys)?;
            let grads = loss.backward().map_err(NetError::from)?;
            for (var, vel) in vars.iter().zip(velocity.iter_mut()) {
                let Some(g) = grads.get(var.as_tensor()) else { continue };
                let step = ((&*vel * cfg.momentum)? - (g * cfg.learning_rate)?)?;
                var.set(&(var.as_tensor() + &step).map_err(NetError::from)?)
                    .map_err(NetError::from)?;
                *vel = step;
            }
        }
        let (val_loss, val_acc) = evaluate(&model, &images, &data.labels, &val_idx, cfg.batch_size)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            train_acc: hits as f64 / train_idx.len() as f64,
            val_loss,
            val_acc,
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} acc {:.3} val_loss {:.4} val_acc {:.3}",
            data.name,
            log.train_loss,
            log.train_acc,
            log.val_loss,
            log.val_acc
        );
        if !val_loss.is_finite() {
            logs.push(log);
            return Err(FinetuneError::Divergence { epoch, logs });
        }
        logs.push(log);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, model.net.params().snapshot()?, model.head.snapshot()?));
        }
        if stopper.observe(val_loss) == StopDecision::Halt {
            break;
        }
    }
    if let Some((_, net, head)) = &best {
        model.net.params_mut().restore(net)?;
        model.head.restore(head)?;
    }
    model.freeze()?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| data.ids[i].clone()).collect();
    Ok(TrainOutcome {
        model,
        best_epoch: stopper.best_epoch().max(1),
        logs,
        train_ids: ids(&train_idx),
        val_ids: ids(&val_idx),
    })
}
