//! Convolutional networks on CPU tensors: the 50-layer residual backbone and
//! the VGG-style encoder/decoder used for style transfer.

mod params;
pub mod resnet;
pub mod vgg;

use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use image::RgbImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use params::ParamStore;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("weight file does not match the expected architecture: {0}")]
    WeightMismatch(String),
    #[error("weights not found at {0}")]
    MissingWeights(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which parameters receive gradients during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    /// Every convolution and normalization affine parameter, plus the head.
    #[default]
    All,
    /// Only the final residual stage and the head.
    LastStage,
    /// Only the classification head.
    Head,
}

impl std::str::FromStr for TrainableScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::All),
            "last_stage" => Ok(Self::LastStage),
            "head" => Ok(Self::Head),
            other => Err(format!("unknown trainable scope `{other}` (all, last_stage, head)")),
        }
    }
}

pub(crate) fn device() -> Device {
    Device::Cpu
}

pub(crate) fn conv(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NetError> {
    let y = x.conv2d(weight, padding, stride, 1, 1)?;
    Ok(match bias {
        Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
        None => y,
    })
}

/// Reflection padding by one pixel on both spatial axes.
pub(crate) fn reflect_pad1(x: &Tensor) -> Result<Tensor, NetError> {
    let (_, _, h, w) = x.dims4()?;
    let rows = Tensor::cat(&[x.narrow(2, 1, 1)?, x.clone(), x.narrow(2, h - 2, 1)?], 2)?;
    Ok(Tensor::cat(
        &[rows.narrow(3, 1, 1)?, rows.clone(), rows.narrow(3, w - 2, 1)?],
        3,
    )?)
}

/// He-normal initialised tensor with standard deviation `sqrt(2 / fan)`.
pub(crate) fn he_normal(shape: &[usize], fan: usize, rng: &mut ChaCha8Rng) -> Result<Tensor, NetError> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0f32, (2.0 / fan as f32).sqrt()).expect("positive std");
    let values: Vec<f32> = (0..n).map(|_| dist.sample(rng)).collect();
    Ok(Tensor::from_vec(values, shape, &device())?)
}

pub(crate) fn uniform(shape: &[usize], bound: f32, rng: &mut ChaCha8Rng) -> Result<Tensor, NetError> {
    let n: usize = shape.iter().product();
    let values: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Ok(Tensor::from_vec(values, shape, &device())?)
}

pub(crate) fn filled(shape: &[usize], value: f32) -> Result<Tensor, NetError> {
    Ok(Tensor::full(value, shape, &device())?.to_dtype(DType::F32)?)
}

/// Stacks images into an `(N, 3, H, W)` tensor of `scale * pixel - mean[c]`.
/// All images must share dimensions.
pub fn images_to_tensor(images: &[&RgbImage], mean: [f32; 3], scale: f32) -> Result<Tensor, NetError> {
    let (w, h) = images
        .first()
        .map(|i| i.dimensions())
        .ok_or_else(|| NetError::WeightMismatch("empty image batch".into()))?;
    let plane = (w * h) as usize;
    let mut data = vec![0f32; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(NetError::WeightMismatch(format!(
                "batch images differ in size: {:?} vs {:?}",
                img.dimensions(),
                (w, h)
            )));
        }
        let base = n * 3 * plane;
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                data[base + c * plane + i] = scale * f32::from(p[c]) - mean[c];
            }
        }
    }
    Ok(Tensor::from_vec(
        data,
        (images.len(), 3, h as usize, w as usize),
        &device(),
    )?)
}

/// Inverse of [`images_to_tensor`] for a `(3, H, W)` tensor holding values in
/// `[0, 1]`; out-of-range values are clamped.
pub fn unit_tensor_to_image(t: &Tensor) -> Result<RgbImage, NetError> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(NetError::WeightMismatch(format!("expected 3 channels, got {c}")));
    }
    let v: Vec<f32> = t.flatten_all()?.to_vec1()?;
    let plane = h * w;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |c: usize| (v[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_padding_mirrors_edges() {
        let x = Tensor::arange(0f32, 9., &device()).unwrap().reshape((1, 1, 3, 3)).unwrap();
        let p = reflect_pad1(&x).unwrap();
        let v: Vec<Vec<f32>> = p.squeeze(0).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        assert_eq!(v[0], vec![4., 3., 4., 5., 4.]);
        assert_eq!(v[1], vec![1., 0., 1., 2., 1.]);
        assert_eq!(v[4], vec![4., 3., 4., 5., 4.]);
    }

    #[test]
    fn image_tensor_round_trip() {
        let img = RgbImage::from_fn(4, 3, |x, y| image::Rgb([(x * 60) as u8, (y * 80) as u8, 7]));
        let t = images_to_tensor(&[&img], [0.0; 3], 1.0 / 255.0).unwrap();
        assert_eq!(t.dims(), &[1, 3, 3, 4]);
        let back = unit_tensor_to_image(&t.squeeze(0).unwrap()).unwrap();
        assert_eq!(back, img);
    }
}
