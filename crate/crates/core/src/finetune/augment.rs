//! Random affine jitter and mirroring for training images.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    /// Maximum shear factor (horizontal displacement per unit of height).
    pub shear_range: f64,
    /// Maximum translation as a fraction of width and height.
    pub shift_range: f64,
    /// Maximum rotation in degrees, either direction.
    pub rotation_range: f64,
    pub horizontal_flip: bool,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            shear_range: 0.2,
            shift_range: 0.1,
            rotation_range: 15.0,
            horizontal_flip: true,
        }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self {
            shear_range: 0.0,
            shift_range: 0.0,
            rotation_range: 0.0,
            horizontal_flip: false,
        }
    }

    fn has_affine(&self) -> bool {
        self.shear_range > 0.0 || self.shift_range > 0.0 || self.rotation_range > 0.0
    }
}

pub fn mirror(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

fn symmetric(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    if range > 0.0 {
        rng.random_range(-range..=range)
    } else {
        0.0
    }
}

/// Applies one random draw of rotation, shear, shift and flip. The same
/// `(img, aug, seed)` always gives the same output.
pub fn augment(img: &RgbImage, aug: &Augmentation, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = symmetric(&mut rng, aug.rotation_range).to_radians();
    let shear = symmetric(&mut rng, aug.shear_range);
    let tx = symmetric(&mut rng, aug.shift_range) * f64::from(img.width());
    let ty = symmetric(&mut rng, aug.shift_range) * f64::from(img.height());
    let flip = aug.horizontal_flip && rng.random_bool(0.5);

    let mut out = if aug.has_affine() {
        warp(img, theta, shear, tx, ty)
    } else {
        img.clone()
    };
    if flip {
        out = mirror(&out);
    }
    out
}

/// Forward map: rotate, then shear, about the centre, then translate.
/// Sampled by inverse mapping with bilinear interpolation; coordinates
/// outside the source repeat the nearest edge pixel.
fn warp(img: &RgbImage, theta: f64, shear: f64, tx: f64, ty: f64) -> RgbImage {
    let (w, h) = img.dimensions();
    let (cx, cy) = ((f64::from(w) - 1.0) / 2.0, (f64::from(h) - 1.0) / 2.0);
    let (s, c) = theta.sin_cos();
    // A = S * R with S = [[1, shear], [0, 1]], R = [[c, -s], [s, c]]
    let a = [[c + shear * s, -s + shear * c], [s, c]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let sample = |x: f64, y: f64| -> Rgb<u8> {
        let x = x.clamp(0.0, f64::from(w) - 1.0);
        let y = y.clamp(0.0, f64::from(h) - 1.0);
        let (x0, y0) = (x.floor() as u32, y.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (x - f64::from(x0), y - f64::from(y0));
        let mut px = [0u8; 3];
        for (ch, v) in px.iter_mut().enumerate() {
            let p = |xx, yy| f64::from(img.get_pixel(xx, yy)[ch]);
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            *v = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    };
    RgbImage::from_fn(w, h, |ox, oy| {
        let dx = f64::from(ox) - cx - tx;
        let dy = f64::from(oy) - cy - ty;
        let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
        let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
        sample(sx, sy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7) as u8, (y * 11) as u8, ((x + y) * 3) as u8]))
    }

    #[test]
    fn null_augmentation_is_identity() {
        let img = gradient(20, 15);
        assert_eq!(augment(&img, &Augmentation::none(), 42), img);
    }

    #[test]
    fn zero_parameters_warp_is_identity() {
        let img = gradient(9, 12);
        assert_eq!(warp(&img, 0.0, 0.0, 0.0, 0.0), img);
    }

    #[test]
    fn flip_only_is_an_involution() {
        let img = gradient(16, 8);
        let aug = Augmentation {
            horizontal_flip: true,
            ..Augmentation::none()
        };
        let seed = (0..100).find(|&s| augment(&img, &aug, s) != img).unwrap();
        let once = augment(&img, &aug, seed);
        assert_eq!(once, mirror(&img));
        assert_eq!(augment(&once, &aug, seed), img);
    }

    #[test]
    fn rotation_changes_pixels_deterministically() {
        let img = gradient(32, 32);
        let aug = Augmentation {
            rotation_range: 10.0,
            ..Augmentation::none()
        };
        let a = augment(&img, &aug, 3);
        assert_ne!(a, img);
        assert_eq!(a, augment(&img, &aug, 3));
        assert_eq!(a.dimensions(), img.dimensions());
    }
}
