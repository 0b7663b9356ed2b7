use candle_core::Tensor;

use super::StyleError;
use crate::nets::NetError;

/// Lower bound applied to a content channel's standard deviation.
pub const STD_EPSILON: f64 = 1e-5;

/// Channel-major feature grid: `channels` rows of `spatial` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    spatial: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(channels: usize, spatial: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * spatial, "grid data length");
        Self {
            channels,
            spatial,
            data,
        }
    }

    pub fn from_fn(channels: usize, spatial: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..channels)
            .flat_map(|c| (0..spatial).map(move |s| (c, s)))
            .map(|(c, s)| f(c, s))
            .collect();
        Self::new(channels, spatial, data)
    }

    /// From a `(1, C, H, W)` or `(C, H, W)` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self, NetError> {
        let t = if t.rank() == 4 { t.squeeze(0)? } else { t.clone() };
        let (c, h, w) = t.dims3()?;
        let data: Vec<f32> = t.flatten_all()?.to_vec1()?;
        Ok(Self::new(c, h * w, data.into_iter().map(f64::from).collect()))
    }

    /// To a `(1, C, height, width)` f32 tensor.
    pub fn to_tensor(&self, height: usize, width: usize) -> Result<Tensor, NetError> {
        assert_eq!(height * width, self.spatial, "spatial size mismatch");
        let data: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        Ok(Tensor::from_vec(
            data,
            (1, self.channels, height, width),
            &crate::nets::device(),
        )?)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial(&self) -> usize {
        self.spatial
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.spatial..(c + 1) * self.spatial]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Population mean and standard deviation of channel `c`.
    pub fn channel_stats(&self, c: usize) -> (f64, f64) {
        let v = self.channel(c);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Pointwise `(1 - alpha) * self + alpha * other`.
    pub fn lerp(&self, other: &FeatureGrid, alpha: f64) -> FeatureGrid {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect();
        FeatureGrid::new(self.channels, self.spatial, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdainOutput {
    pub features: FeatureGrid,
    /// Content channels whose standard deviation fell below [`STD_EPSILON`];
    /// they were shifted onto the style mean rather than rescaled.
    pub degenerate_channels: Vec<usize>,
}

/// Adaptive instance normalization: each content channel is standardised
/// with its own statistics and re-scaled to the style channel's mean and
/// standard deviation. Spatial sizes may differ; channel counts may not.
pub fn adain(content: &FeatureGrid, style: &FeatureGrid) -> Result<AdainOutput, StyleError> {
    if content.channels != style.channels {
        return Err(StyleError::ChannelMismatch {
            content: content.channels,
            style: style.channels,
        });
    }
    let mut data = Vec::with_capacity(content.data.len());
    let mut degenerate = Vec::new();
    for c in 0..content.channels {
        let (cm, cs) = content.channel_stats(c);
        let (sm, ss) = style.channel_stats(c);
        let cs = if cs < STD_EPSILON {
            degenerate.push(c);
            STD_EPSILON
        } else {
            cs
        };
        data.extend(content.channel(c).iter().map(|x| (x - cm) / cs * ss + sm));
    }
    Ok(AdainOutput {
        features: FeatureGrid::new(content.channels, content.spatial, data),
        degenerate_channels: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-12)
    }

    #[test]
    fn standard_channel_takes_style_statistics() {
        // content mean 0 / std 1, style mean 2 / std 3
        let content = FeatureGrid::new(1, 4, vec![-1.0, 1.0, -1.0, 1.0]);
        let style = FeatureGrid::new(1, 2, vec![-1.0, 5.0]);
        let out = adain(&content, &style).unwrap();
        let (m, s) = out.features.channel_stats(0);
        assert!(close(m, 2.0, 1e-12) && close(s, 3.0, 1e-12));
        assert_eq!(out.features.values(), &[-1.0, 5.0, -1.0, 5.0]);
        assert!(out.degenerate_channels.is_empty());
    }

    #[test]
    fn constant_content_channel_maps_to_style_mean() {
        let content = FeatureGrid::new(1, 5, vec![5.0; 5]);
        let style = FeatureGrid::new(1, 2, vec![-1.0, 5.0]);
        let out = adain(&content, &style).unwrap();
        assert_eq!(out.features.values(), &[2.0; 5]);
        assert_eq!(out.degenerate_channels, vec![0]);
    }

    #[test]
    fn self_transfer_is_identity() {
        let x = FeatureGrid::from_fn(3, 7, |c, s| (c as f64 + 1.0) * (s as f64).sin() + c as f64);
        let out = adain(&x, &x).unwrap();
        for (a, b) in out.features.values().iter().zip(x.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let a = FeatureGrid::new(2, 1, vec![0.0, 1.0]);
        let b = FeatureGrid::new(1, 2, vec![0.0, 1.0]);
        assert!(matches!(adain(&a, &b), Err(StyleError::ChannelMismatch { content: 2, style: 1 })));
    }
}
