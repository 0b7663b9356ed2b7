//! 50-layer bottleneck residual network (torchvision tensor naming).
//!
//! Normalization layers always run on their stored statistics, including
//! while fine-tuning; only their affine parameters can be trained.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{conv, filled, he_normal, NetError, ParamStore, TrainableScope};

pub const ARCHITECTURE: &str = "resnet50";
pub const FEATURE_DIM: usize = 2048;
/// Spatial reduction between the input and the final feature map.
pub const OUTPUT_STRIDE: usize = 32;

const EXPANSION: usize = 4;
const BN_EPS: f64 = 1e-5;
/// (blocks, bottleneck width, first-block stride) per stage.
const STAGES: [(usize, usize, usize); 4] = [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)];

#[derive(Debug, Clone)]
pub struct ResNet50 {
    params: ParamStore,
}

type Calib<'a> = Option<&'a mut BTreeMap<String, Tensor>>;

fn conv_shape(cout: usize, cin: usize, k: usize) -> Vec<usize> {
    vec![cout, cin, k, k]
}

fn bn_names(prefix: &str) -> [String; 4] {
    ["weight", "bias", "running_mean", "running_var"].map(|s| format!("{prefix}.{s}"))
}

impl ResNet50 {
    /// Every tensor the backbone needs, with its shape.
    pub fn expected_shapes() -> Vec<(String, Vec<usize>)> {
        let mut out = vec![("conv1.weight".to_string(), conv_shape(64, 3, 7))];
        out.extend(bn_names("bn1").map(|n| (n, vec![64])));
        let mut inplanes = 64;
        for (s, &(blocks, planes, _)) in STAGES.iter().enumerate() {
            for b in 0..blocks {
                let p = format!("layer{}.{b}", s + 1);
                let outc = planes * EXPANSION;
                out.push((format!("{p}.conv1.weight"), conv_shape(planes, inplanes, 1)));
                out.push((format!("{p}.conv2.weight"), conv_shape(planes, planes, 3)));
                out.push((format!("{p}.conv3.weight"), conv_shape(outc, planes, 1)));
                for (i, c) in [planes, planes, outc].into_iter().enumerate() {
                    out.extend(bn_names(&format!("{p}.bn{}", i + 1)).map(|n| (n, vec![c])));
                }
                if b == 0 {
                    out.push((format!("{p}.downsample.0.weight"), conv_shape(outc, inplanes, 1)));
                    out.extend(bn_names(&format!("{p}.downsample.1")).map(|n| (n, vec![outc])));
                }
                inplanes = outc;
            }
        }
        out
    }

    /// Validates `params` against the architecture. Tensors outside it (such
    /// as a 1000-way `fc` layer) are dropped.
    pub fn from_params(mut params: ParamStore) -> Result<Self, NetError> {
        let expected = Self::expected_shapes();
        for (name, shape) in &expected {
            params.expect_shape(name, shape)?;
        }
        let keep: std::collections::HashSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        for name in params.names() {
            if !keep.contains(name.as_str()) {
                params.remove(&name);
            }
        }
        Ok(Self { params })
    }

    /// He-initialised convolutions with identity normalization.
    pub fn random(seed: u64) -> Result<Self, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in Self::expected_shapes() {
            let t = if name.ends_with("running_var") || (name.ends_with(".weight") && shape.len() == 1) {
                filled(&shape, 1.0)?
            } else if shape.len() == 1 {
                filled(&shape, 0.0)?
            } else {
                // fan-out mode
                let fan = shape[0] * shape[2] * shape[3];
                he_normal(&shape, fan, &mut rng)?
            };
            params.insert(name, t);
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn set_trainable(&mut self, scope: TrainableScope) -> Result<(), NetError> {
        self.params.set_trainable(|name| {
            if name.ends_with("running_mean") || name.ends_with("running_var") {
                return false;
            }
            match scope {
                TrainableScope::All => true,
                TrainableScope::LastStage => name.starts_with("layer4."),
                TrainableScope::Head => false,
            }
        })
    }

    /// Final convolutional feature map, `(N, 2048, H/32, W/32)`.
    pub fn feature_map(&self, x: &Tensor) -> Result<Tensor, NetError> {
        self.forward_impl(x, None)
    }

    /// Replaces every stored normalization statistic with the statistics of
    /// `batch`, computed layer by layer in a single pass.
    pub fn calibrate(&mut self, batch: &Tensor) -> Result<(), NetError> {
        let mut stats = BTreeMap::new();
        self.forward_impl(batch, Some(&mut stats))?;
        for (k, t) in stats {
            self.params.insert(k, t);
        }
        Ok(())
    }

    fn bn(&self, x: &Tensor, prefix: &str, calib: &mut Calib<'_>) -> Result<Tensor, NetError> {
        let c = x.dim(1)?;
        let (mean, var) = match calib {
            Some(stats) => {
                let flat = x.transpose(0, 1)?.contiguous()?.flatten_from(1)?;
                let mean = flat.mean(D::Minus1)?;
                let var = flat.broadcast_sub(&mean.unsqueeze(1)?)?.sqr()?.mean(D::Minus1)?;
                stats.insert(format!("{prefix}.running_mean"), mean.clone());
                stats.insert(format!("{prefix}.running_var"), var.clone());
                (mean, var)
            }
            None => (
                self.params.get(&format!("{prefix}.running_mean"))?,
                self.params.get(&format!("{prefix}.running_var"))?,
            ),
        };
        let gamma = self.params.get(&format!("{prefix}.weight"))?;
        let beta = self.params.get(&format!("{prefix}.bias"))?;
        let scale = gamma.div(&(var + BN_EPS)?.sqrt()?)?;
        let shift = beta.sub(&mean.mul(&scale)?)?;
        Ok(x
            .broadcast_mul(&scale.reshape((1, c, 1, 1))?)?
            .broadcast_add(&shift.reshape((1, c, 1, 1))?)?)
    }

    fn conv(&self, x: &Tensor, name: &str, stride: usize, pad: usize) -> Result<Tensor, NetError> {
        conv(x, &self.params.get(&format!("{name}.weight"))?, None, stride, pad)
    }

    fn forward_impl(&self, x: &Tensor, mut calib: Calib<'_>) -> Result<Tensor, NetError> {
        let x = x.to_dtype(DType::F32)?;
        let mut h = self.conv(&x, "conv1", 2, 3)?;
        h = self.bn(&h, "bn1", &mut calib)?.relu()?;
        // zero padding is equivalent to -inf padding after a ReLU
        h = h
            .pad_with_zeros(2, 1, 1)?
            .pad_with_zeros(3, 1, 1)?
            .max_pool2d_with_stride((3, 3), (2, 2))?;
        for (s, &(blocks, _, stride)) in STAGES.iter().enumerate() {
            for b in 0..blocks {
                let p = format!("layer{}.{b}", s + 1);
                let st = if b == 0 { stride } else { 1 };
                let mut out = self.conv(&h, &format!("{p}.conv1"), 1, 0)?;
                out = self.bn(&out, &format!("{p}.bn1"), &mut calib)?.relu()?;
                out = self.conv(&out, &format!("{p}.conv2"), st, 1)?;
                out = self.bn(&out, &format!("{p}.bn2"), &mut calib)?.relu()?;
                out = self.conv(&out, &format!("{p}.conv3"), 1, 0)?;
                out = self.bn(&out, &format!("{p}.bn3"), &mut calib)?;
                let identity = if b == 0 {
                    let d = self.conv(&h, &format!("{p}.downsample.0"), st, 0)?;
                    self.bn(&d, &format!("{p}.downsample.1"), &mut calib)?
                } else {
                    h.clone()
                };
                h = (out + identity)?.relu()?;
            }
        }
        Ok(h)
    }
}

/// Spatial mean of an `(N, C, H, W)` map, giving `(N, C)`.
pub fn global_avg_pool(feature_map: &Tensor) -> Result<Tensor, NetError> {
    Ok(feature_map.mean(D::Minus1)?.mean(D::Minus1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_inventory_matches_resnet50() {
        let shapes = ResNet50::expected_shapes();
        let conv_params: usize = shapes
            .iter()
            .filter(|(_, s)| s.len() == 4)
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        // torchvision resnet50 without fc: 23,454,912 conv weights
        assert_eq!(conv_params, 23_454_912);
        assert_eq!(shapes.iter().filter(|(n, _)| n.ends_with("conv3.weight")).count(), 16);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let mut p = ResNet50::random(1).unwrap().into_params();
        p.insert("conv1.weight", filled(&[64, 3, 3, 3], 0.0).unwrap());
        assert!(matches!(ResNet50::from_params(p), Err(NetError::WeightMismatch(_))));
    }
}
