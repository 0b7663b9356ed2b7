//! Class activation maps: head-weighted sums of the final feature maps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finetune::FineTunedModel;
use crate::imaging::bilinear_resize;
use crate::nets::NetError;

pub const OVERLAY_ALPHA: f64 = 0.4;
pub const COLORMAP: &str = "viridis";
pub const INDEX_FILE: &str = "index.csv";
pub const META_FILE: &str = "cam_meta.json";

#[derive(Debug, Error)]
pub enum CamError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("head/feature mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub image_id: String,
    pub class_index: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Row-major raw map at feature resolution.
    pub grid: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Bilinear resize of `grid` to the source image size.
    pub upsampled: Vec<f32>,
}

impl ActivationMap {
    pub fn grid_mean(&self) -> f64 {
        self.grid.iter().sum::<f64>() / self.grid.len() as f64
    }
}

/// `sum_k weights[k] * fmap[k, y, x]` for a `(C, H, W)` row-major feature map.
pub fn weighted_sum(fmap: &[f32], channels: usize, spatial: usize, weights: &[f32]) -> Vec<f64> {
    let mut grid = vec![0f64; spatial];
    for k in 0..channels {
        let w = f64::from(weights[k]);
        if w == 0.0 {
            continue;
        }
        for (g, &f) in grid.iter_mut().zip(&fmap[k * spatial..(k + 1) * spatial]) {
            *g += w * f64::from(f);
        }
    }
    grid
}

/// The map for `class_index` on `image`, together with the model's logit for
/// that class from an ordinary forward pass.
pub fn compute_cam(
    model: &FineTunedModel,
    image_id: &str,
    image: &RgbImage,
    class_index: usize,
) -> Result<(ActivationMap, f64), CamError> {
    let x = model.input_tensor(&[image])?;
    let (fmap, logits) = model.forward(&x)?;
    let (_, c, gh, gw) = fmap.dims4().map_err(NetError::from)?;
    let weight = model.head_weight()?;
    let (outs, wc) = weight.dims2().map_err(NetError::from)?;
    if wc != c || class_index >= outs {
        return Err(CamError::ArchitectureMismatch(format!(
            "head {outs}x{wc} against {c} pooled channels, class {class_index}"
        )));
    }
    let w: Vec<f32> = weight
        .get(class_index)
        .and_then(|r| r.to_vec1())
        .map_err(NetError::from)?;
    let f: Vec<f32> = fmap.flatten_all().and_then(|t| t.to_vec1()).map_err(NetError::from)?;
    let grid = weighted_sum(&f, c, gh * gw, &w);
    let logit = logits
        .get(0)
        .and_then(|r| r.get(class_index))
        .and_then(|v| v.to_scalar::<f32>())
        .map_err(NetError::from)?;
    let (width, height) = (image.width() as usize, image.height() as usize);
    let g32: Vec<f32> = grid.iter().map(|&v| v as f32).collect();
    Ok((
        ActivationMap {
            image_id: image_id.to_string(),
            class_index,
            grid_h: gh,
            grid_w: gw,
            grid,
            height,
            width,
            upsampled: bilinear_resize(&g32, gh, gw, height, width),
        },
        f64::from(logit),
    ))
}

fn viridis(t: f64) -> [f64; 3] {
    let c = colorous::VIRIDIS.eval_continuous(t.clamp(0.0, 1.0));
    [f64::from(c.r), f64::from(c.g), f64::from(c.b)]
}

/// Min-max normalised heatmap blended over `image` at [`OVERLAY_ALPHA`].
pub fn overlay(map: &ActivationMap, image: &RgbImage) -> RgbImage {
    let lo = map.upsampled.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.upsampled.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let i = y as usize * map.width + x as usize;
        let t = if span > 0.0 && i < map.upsampled.len() {
            f64::from((map.upsampled[i] - lo) / span)
        } else {
            0.0
        };
        let heat = viridis(t);
        let src = image.get_pixel(x, y);
        let mut px = [0u8; 3];
        for c in 0..3 {
            let v = OVERLAY_ALPHA * heat[c] + (1.0 - OVERLAY_ALPHA) * f64::from(src[c]);
            px[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

pub fn grid_csv(map: &ActivationMap) -> String {
    let mut s = String::new();
    for row in map.grid.chunks(map.grid_w) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CamIndexRow {
    pub image_id: String,
    pub label: usize,
    pub predicted: usize,
    pub correct: bool,
    pub cam_file: String,
    pub grid_file: String,
}

/// One image to explain, with its true class index.
pub struct CamItem<'a> {
    pub image_id: &'a str,
    pub image: &'a RgbImage,
    pub label: usize,
}

/// Writes `<id>_cam.png`, `<id>_grid.csv` for the predicted class of each item
/// (only correctly predicted ones when `only_correct`) plus `index.csv`.
pub fn batch_cams(
    model: &FineTunedModel,
    items: &[CamItem<'_>],
    out_dir: &Path,
    only_correct: bool,
) -> Result<Vec<CamIndexRow>, CamError> {
    let out_err = |path: &Path, e: &dyn std::fmt::Display| CamError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| out_err(out_dir, &e))?;
    let mut rows = Vec::new();
    for item in items {
        let result = (|| -> Result<Option<CamIndexRow>, CamError> {
            let pred = model.predict(&[item.image])?[0].class;
            let correct = pred == item.label;
            if only_correct && !correct {
                return Ok(None);
            }
            let (map, _) = compute_cam(model, item.image_id, item.image, pred)?;
            let cam_file = format!("{}_cam.png", item.image_id);
            let grid_file = format!("{}_grid.csv", item.image_id);
            let png = out_dir.join(&cam_file);
            overlay(&map, item.image).save(&png).map_err(|e| out_err(&png, &e))?;
            let gp = out_dir.join(&grid_file);
            std::fs::write(&gp, grid_csv(&map)).map_err(|e| out_err(&gp, &e))?;
            Ok(Some(CamIndexRow {
                image_id: item.image_id.to_string(),
                label: item.label,
                predicted: pred,
                correct,
                cam_file,
                grid_file,
            }))
        })();
        match result {
            Ok(Some(row)) => rows.push(row),
            Ok(None) => {}
            Err(e) => log::error!("CAM for {} failed: {e}", item.image_id),
        }
    }
    let mut index = String::from("image_id,label,predicted,correct,cam_file,grid_file\n");
    for r in &rows {
        let _ = writeln!(
            index,
            "{},{},{},{},{},{}",
            r.image_id, model.class_names[r.label], model.class_names[r.predicted], r.correct, r.cam_file, r.grid_file
        );
    }
    let ip = out_dir.join(INDEX_FILE);
    std::fs::write(&ip, index).map_err(|e| out_err(&ip, &e))?;
    let meta = serde_json::json!({
        "colormap": COLORMAP,
        "alpha": OVERLAY_ALPHA,
        "normalization": "per-image min-max",
        "upsampling": "bilinear",
        "only_correct": only_correct,
    });
    let mp = out_dir.join(META_FILE);
    std::fs::write(&mp, serde_json::to_string_pretty(&meta).unwrap_or_default()).map_err(|e| out_err(&mp, &e))?;
    Ok(rows)
}
