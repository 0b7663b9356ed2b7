//! Encoder/decoder pair for feature-statistics style transfer.
//!
//! The encoder is the 19-layer VGG trunk up to the first activation of its
//! fourth block (`relu4_1`, 512 channels, stride 8), preceded by a 1x1
//! colour-normalising convolution. The decoder mirrors it with nearest
//! upsampling. Both use reflection padding. Inputs are RGB in `[0, 1]`.

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{conv, filled, he_normal, reflect_pad1, NetError, ParamStore};

#[derive(Debug, Clone, Copy)]
enum Op {
    Conv {
        name: &'static str,
        cin: usize,
        cout: usize,
        k: usize,
        relu: bool,
    },
    Pool,
    Up,
}

const fn c3(name: &'static str, cin: usize, cout: usize) -> Op {
    Op::Conv {
        name,
        cin,
        cout,
        k: 3,
        relu: true,
    }
}

const ENCODER: [Op; 13] = [
    Op::Conv {
        name: "conv0",
        cin: 3,
        cout: 3,
        k: 1,
        relu: false,
    },
    c3("conv1_1", 3, 64),
    c3("conv1_2", 64, 64),
    Op::Pool,
    c3("conv2_1", 64, 128),
    c3("conv2_2", 128, 128),
    Op::Pool,
    c3("conv3_1", 128, 256),
    c3("conv3_2", 256, 256),
    c3("conv3_3", 256, 256),
    c3("conv3_4", 256, 256),
    Op::Pool,
    c3("conv4_1", 256, 512),
];

const DECODER: [Op; 12] = [
    c3("dec4_1", 512, 256),
    Op::Up,
    c3("dec3_4", 256, 256),
    c3("dec3_3", 256, 256),
    c3("dec3_2", 256, 256),
    c3("dec3_1", 256, 128),
    Op::Up,
    c3("dec2_2", 128, 128),
    c3("dec2_1", 128, 64),
    Op::Up,
    c3("dec1_2", 64, 64),
    Op::Conv {
        name: "dec1_1",
        cin: 64,
        cout: 3,
        k: 3,
        relu: false,
    },
];

/// Input sides must be multiples of this for the decoder to restore them.
pub const SIZE_MULTIPLE: usize = 8;
pub const ENCODED_CHANNELS: usize = 512;

/// A chain of convolutions with fixed pooling/upsampling steps.
#[derive(Debug, Clone)]
pub struct Sequential {
    ops: &'static [Op],
    params: ParamStore,
}

impl Sequential {
    fn build(ops: &'static [Op], params: ParamStore) -> Result<Self, NetError> {
        for op in ops {
            if let Op::Conv { name, cin, cout, k, .. } = *op {
                params.expect_shape(&format!("{name}.weight"), &[cout, cin, k, k])?;
                params.expect_shape(&format!("{name}.bias"), &[cout])?;
            }
        }
        Ok(Self { ops, params })
    }

    pub fn encoder(params: ParamStore) -> Result<Self, NetError> {
        Self::build(&ENCODER, params)
    }

    pub fn decoder(params: ParamStore) -> Result<Self, NetError> {
        Self::build(&DECODER, params)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NetError> {
        let mut h = x.clone();
        for op in self.ops {
            h = self.apply(op, &h)?;
        }
        Ok(h)
    }

    fn apply(&self, op: &Op, h: &Tensor) -> Result<Tensor, NetError> {
        Ok(match *op {
            Op::Conv { name, k, relu, .. } => {
                let input = if k == 3 { reflect_pad1(h)? } else { h.clone() };
                let w = self.params.get(&format!("{name}.weight"))?;
                let b = self.params.get(&format!("{name}.bias"))?;
                let y = conv(&input, &w, Some(&b), 1, 0)?;
                if relu {
                    y.relu()?
                } else {
                    y
                }
            }
            Op::Pool => h.max_pool2d(2)?,
            Op::Up => {
                let (_, _, hh, ww) = h.dims4()?;
                h.upsample_nearest2d(hh * 2, ww * 2)?
            }
        })
    }

    /// Data-dependent initialisation: walks the chain on `batch` and rescales
    /// each convolution so its pre-activation output has unit standard
    /// deviation and zero mean. The last convolution instead targets
    /// `final_mean`/`final_std` when given.
    fn calibrate(&mut self, batch: &Tensor, last: Option<(f32, f32)>) -> Result<(), NetError> {
        let conv_count = self
            .ops
            .iter()
            .filter(|o| matches!(o, Op::Conv { .. }))
            .count();
        let mut seen = 0;
        let mut h = batch.clone();
        for op in self.ops {
            if let Op::Conv { name, k, .. } = *op {
                seen += 1;
                if name == "conv0" {
                    h = self.apply(op, &h)?;
                    continue;
                }
                let (target_mean, target_std) = match last {
                    Some(t) if seen == conv_count => t,
                    _ => (0.0, 1.0),
                };
                let input = if k == 3 { reflect_pad1(&h)? } else { h.clone() };
                let wn = format!("{name}.weight");
                let bn = format!("{name}.bias");
                let w = self.params.get(&wn)?;
                let raw = conv(&input, &w, None, 1, 0)?;
                let flat = raw.flatten_all()?;
                let mean = flat.mean_all()?.to_scalar::<f32>()?;
                let std = flat
                    .affine(1.0, -f64::from(mean))?
                    .sqr()?
                    .mean_all()?
                    .to_scalar::<f32>()?
                    .sqrt()
                    .max(1e-6);
                let gain = target_std / std;
                let w = (w * f64::from(gain))?;
                let bias = filled(&[w.dim(0)?], target_mean - mean * gain)?;
                self.params.insert(wn, w);
                self.params.insert(bn, bias);
                h = self.apply(op, &h)?;
            } else {
                h = self.apply(op, &h)?;
            }
        }
        Ok(())
    }
}

fn random_params(ops: &[Op], rng: &mut ChaCha8Rng) -> Result<ParamStore, NetError> {
    let mut p = ParamStore::new();
    for op in ops {
        if let Op::Conv { name, cin, cout, k, .. } = *op {
            let w = if name == "conv0" {
                colour_normaliser()?
            } else {
                he_normal(&[cout, cin, k, k], cin * k * k, rng)?
            };
            let b = if name == "conv0" {
                Tensor::new(&[-103.939f32, -116.779, -123.68], &super::device())?
            } else {
                filled(&[cout], 0.0)?
            };
            p.insert(format!("{name}.weight"), w);
            p.insert(format!("{name}.bias"), b);
        }
    }
    Ok(p)
}

/// RGB in [0,1] to mean-subtracted BGR in [0,255].
fn colour_normaliser() -> Result<Tensor, NetError> {
    let mut w = [0f32; 9];
    w[2] = 255.0; // out B <- in B
    w[3 + 1] = 255.0; // out G <- in G
    w[6] = 255.0; // out R <- in R
    Ok(Tensor::from_vec(w.to_vec(), (3, 3, 1, 1), &super::device())?)
}

/// Seeded stand-in weights for the encoder/decoder pair, calibrated on
/// `batch` (RGB in `[0, 1]`, sides divisible by [`SIZE_MULTIPLE`]).
pub fn random_pair(seed: u64, batch: &Tensor) -> Result<(Sequential, Sequential), NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Sequential::encoder(random_params(&ENCODER, &mut rng)?)?;
    enc.calibrate(batch, None)?;
    let features = enc.forward(batch)?;
    let mut dec = Sequential::decoder(random_params(&DECODER, &mut rng)?)?;
    dec.calibrate(&features, Some((0.5, 0.2)))?;
    Ok((enc, dec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn encoder_decoder_shapes() {
        let x = Tensor::rand(0f32, 1., (2, 3, 16, 24), &Device::Cpu).unwrap();
        let (enc, dec) = random_pair(3, &x).unwrap();
        let f = enc.forward(&x).unwrap();
        assert_eq!(f.dims(), &[2, ENCODED_CHANNELS, 2, 3]);
        let y = dec.forward(&f).unwrap();
        assert_eq!(y.dims(), &[2, 3, 16, 24]);
        let mean = y.mean_all().unwrap().to_dtype(DType::F32).unwrap().to_scalar::<f32>().unwrap();
        assert!((mean - 0.5).abs() < 0.05, "decoder output mean {mean}");
    }

    #[test]
    fn colour_normaliser_maps_rgb_to_bgr_255() {
        let x = Tensor::new(&[0.1f32, 0.2, 0.3], &Device::Cpu).unwrap().reshape((1, 3, 1, 1)).unwrap();
        let (enc, _) = random_pair(1, &Tensor::rand(0f32, 1., (1, 3, 16, 16), &Device::Cpu).unwrap()).unwrap();
        let w = enc.params.get("conv0.weight").unwrap();
        let b = enc.params.get("conv0.bias").unwrap();
        let y: Vec<f32> = conv(&x, &w, Some(&b), 1, 0).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!((y[0] - (0.3 * 255.0 - 103.939)).abs() < 1e-3);
        assert!((y[2] - (0.1 * 255.0 - 123.68)).abs() < 1e-3);
    }
}
