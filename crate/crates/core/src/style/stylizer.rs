use std::path::Path;
use std::sync::Arc;

use image::RgbImage;

use super::adain::{adain, FeatureGrid};
use super::{StyleError, StyleSettings};
use crate::imaging::resize_short_side;
use crate::nets::vgg::{Sequential, SIZE_MULTIPLE};
use crate::nets::{images_to_tensor, unit_tensor_to_image, NetError, ParamStore};
use crate::registry::{Named, Registry};

/// Re-renders a content image in the appearance of a style image.
pub trait StyleTransfer: Named + Send + Sync {
    /// `alpha` interpolates between the content features (0) and the fully
    /// stylised features (1).
    fn stylize(&self, content: &RgbImage, style: &RgbImage, alpha: f64) -> Result<RgbImage, StyleError>;
}

/// Builds a [`StyleTransfer`] from settings; registered by method name.
pub trait StylizerFactory: Named + Send + Sync {
    fn build(&self, settings: &StyleSettings) -> Result<Arc<dyn StyleTransfer>, StyleError>;
}

/// Encoder/decoder network with feature-statistics transfer at `relu4_1`.
pub struct AdainStylizer {
    encoder: Sequential,
    decoder: Sequential,
    short_side: u32,
}

impl AdainStylizer {
    pub fn new(encoder: Sequential, decoder: Sequential, short_side: u32) -> Self {
        Self {
            encoder,
            decoder,
            short_side,
        }
    }

    pub fn load(encoder: &Path, decoder: &Path, short_side: u32) -> Result<Self, StyleError> {
        let load = |p: &Path| -> Result<ParamStore, StyleError> {
            match ParamStore::load(p) {
                Ok((store, _, _)) => Ok(store),
                Err(NetError::MissingWeights(path)) => Err(StyleError::MissingWeights(path)),
                Err(e) => Err(e.into()),
            }
        };
        let enc = Sequential::encoder(load(encoder)?)?;
        let dec = Sequential::decoder(load(decoder)?)?;
        Ok(Self::new(enc, dec, short_side))
    }

    /// Resizes to the working resolution (short side, sides divisible by 8).
    pub fn prepare(&self, img: &RgbImage) -> RgbImage {
        resize_short_side(img, self.short_side, SIZE_MULTIPLE as u32)
    }

    /// Encodes a prepared image; returns the grid and its spatial shape.
    pub fn encode(&self, img: &RgbImage) -> Result<(FeatureGrid, usize, usize), StyleError> {
        let x = images_to_tensor(&[img], [0.0; 3], 1.0 / 255.0)?;
        let f = self.encoder.forward(&x)?;
        let (_, _, h, w) = f.dims4().map_err(NetError::from)?;
        Ok((FeatureGrid::from_tensor(&f)?, h, w))
    }

    pub fn decode(&self, grid: &FeatureGrid, h: usize, w: usize) -> Result<RgbImage, StyleError> {
        let y = self.decoder.forward(&grid.to_tensor(h, w)?)?;
        Ok(unit_tensor_to_image(&y.squeeze(0).map_err(NetError::from)?)?)
    }

    /// `decode(encode(content))` with no statistics transfer.
    pub fn round_trip(&self, content: &RgbImage) -> Result<RgbImage, StyleError> {
        let (f, h, w) = self.encode(&self.prepare(content))?;
        self.decode(&f, h, w)
    }
}

impl Named for AdainStylizer {
    fn name(&self) -> &'static str {
        "adain"
    }
}

impl StyleTransfer for AdainStylizer {
    fn stylize(&self, content: &RgbImage, style: &RgbImage, alpha: f64) -> Result<RgbImage, StyleError> {
        let (fc, h, w) = self.encode(&self.prepare(content))?;
        let (fs, _, _) = self.encode(&self.prepare(style))?;
        let transferred = adain(&fc, &fs)?.features;
        let mixed = fc.lerp(&transferred, alpha);
        self.decode(&mixed, h, w)
    }
}

/// Statistics transfer applied directly to RGB pixels. No weights needed.
pub struct PixelStatsStylizer {
    short_side: u32,
}

impl PixelStatsStylizer {
    pub fn new(short_side: u32) -> Self {
        Self { short_side }
    }
}

fn pixel_grid(img: &RgbImage) -> FeatureGrid {
    let n = (img.width() * img.height()) as usize;
    let raw = img.as_raw();
    FeatureGrid::from_fn(3, n, |c, s| f64::from(raw[s * 3 + c]) / 255.0)
}

impl Named for PixelStatsStylizer {
    fn name(&self) -> &'static str {
        "pixel_stats"
    }
}

impl StyleTransfer for PixelStatsStylizer {
    fn stylize(&self, content: &RgbImage, style: &RgbImage, alpha: f64) -> Result<RgbImage, StyleError> {
        let c = resize_short_side(content, self.short_side, 1);
        let fc = pixel_grid(&c);
        let fs = pixel_grid(style);
        let mixed = fc.lerp(&adain(&fc, &fs)?.features, alpha);
        let n = fc.spatial();
        let v = mixed.values();
        Ok(RgbImage::from_fn(c.width(), c.height(), |x, y| {
            let s = (y * c.width() + x) as usize;
            let px = |ch: usize| (v[ch * n + s].clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        }))
    }
}

struct AdainFactory;
struct PixelStatsFactory;

impl Named for AdainFactory {
    fn name(&self) -> &'static str {
        "adain"
    }
}

impl StylizerFactory for AdainFactory {
    fn build(&self, s: &StyleSettings) -> Result<Arc<dyn StyleTransfer>, StyleError> {
        let missing = || StyleError::MissingWeights("<not configured>".into());
        let enc = s.encoder_weights.as_deref().ok_or_else(missing)?;
        let dec = s.decoder_weights.as_deref().ok_or_else(missing)?;
        Ok(Arc::new(AdainStylizer::load(enc, dec, s.short_side)?))
    }
}

impl Named for PixelStatsFactory {
    fn name(&self) -> &'static str {
        "pixel_stats"
    }
}

impl StylizerFactory for PixelStatsFactory {
    fn build(&self, s: &StyleSettings) -> Result<Arc<dyn StyleTransfer>, StyleError> {
        Ok(Arc::new(PixelStatsStylizer::new(s.short_side)))
    }
}

/// Every built-in style-transfer method.
pub fn stylizers() -> Registry<dyn StylizerFactory> {
    let mut r: Registry<dyn StylizerFactory> = Registry::new();
    r.register(Arc::new(AdainFactory)).register(Arc::new(PixelStatsFactory));
    r
}

/// Looks up `settings.method` and builds it.
pub fn build_stylizer(settings: &StyleSettings) -> Result<Arc<dyn StyleTransfer>, StyleError> {
    stylizers()
        .get(&settings.method)
        .ok_or_else(|| StyleError::UnknownMethod(settings.method.clone()))?
        .build(settings)
}
