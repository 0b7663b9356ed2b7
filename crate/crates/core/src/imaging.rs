//! Resizing and grid interpolation helpers.

use image::imageops::FilterType;
use image::RgbImage;

pub fn resize_exact(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    image::imageops::resize(img, width, height, FilterType::Triangle)
}

/// Scales so the shorter side equals `short`, then rounds both sides to the
/// nearest multiple of `multiple` (at least one multiple).
pub fn resize_short_side(img: &RgbImage, short: u32, multiple: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let scale = f64::from(short) / f64::from(w.min(h));
    let round = |v: u32| {
        let scaled = (f64::from(v) * scale / f64::from(multiple)).round() as u32;
        scaled.max(1) * multiple
    };
    resize_exact(img, round(w), round(h))
}

/// Bilinear resampling of a row-major `(gh, gw)` grid to `(oh, ow)` using
/// half-pixel centres with edge clamping.
pub fn bilinear_resize(grid: &[f32], gh: usize, gw: usize, oh: usize, ow: usize) -> Vec<f32> {
    assert_eq!(grid.len(), gh * gw, "grid size mismatch");
    let coord = |o: usize, out: usize, inp: usize| -> (usize, usize, f32) {
        let src = ((o as f32 + 0.5) * inp as f32 / out as f32 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, src - i0 as f32)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, oh, gh);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, ow, gw);
            let top = grid[y0 * gw + x0] * (1.0 - fx) + grid[y0 * gw + x1] * fx;
            let bot = grid[y1 * gw + x0] * (1.0 - fx) + grid[y1 * gw + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}
