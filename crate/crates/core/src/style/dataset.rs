use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pairing::{StylePairingPlan, StyleSource};
use super::stylizer::StyleTransfer;
use super::StyleError;
use crate::data::{self, ContentRecord, DataError, DataRoot, Gender};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const ERROR_LOG: &str = "errors.log";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyledSample {
    pub sample_id: String,
    pub style_id: String,
    pub content_id: String,
    pub gender: Gender,
    /// Relative to the output directory.
    pub image_path: PathBuf,
}

impl StyledSample {
    pub fn as_content(&self) -> ContentRecord {
        ContentRecord {
            image_id: self.sample_id.clone(),
            image_path: self.image_path.clone(),
            gender: self.gender,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildSummary {
    /// Every sample whose image exists after the run, in plan order.
    pub samples: Vec<StyledSample>,
    pub written: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
    pub manifest: PathBuf,
}

/// Renders one image per plan entry into `out_dir/images/` and writes
/// `out_dir/manifest.csv`. Entries whose output already exists are skipped;
/// failing entries are appended to `out_dir/errors.log` and the run goes on.
pub fn build_styled_dataset(
    plan: &StylePairingPlan,
    styles: &[StyleSource],
    contents: &[ContentRecord],
    root: &DataRoot,
    out_dir: &Path,
    stylizer: &dyn StyleTransfer,
    alpha: f64,
) -> Result<BuildSummary, StyleError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| StyleError::Data(DataError::Io { path, source })
    };
    let image_dir = out_dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&image_dir).map_err(io(&image_dir))?;
    let style_by_id: HashMap<&str, &StyleSource> =
        styles.iter().map(|s| (s.style_id.as_str(), s)).collect();
    let content_by_id: HashMap<&str, &ContentRecord> =
        contents.iter().map(|c| (c.image_id.as_str(), c)).collect();

    let mut samples = Vec::with_capacity(plan.entries.len());
    let mut failures = Vec::new();
    let (mut written, mut skipped) = (0, 0);
    let mut style_cache: Option<(String, image::RgbImage)> = None;

    for entry in &plan.entries {
        let sample_id = entry.sample_id();
        let rel = PathBuf::from(IMAGE_DIR).join(format!("{sample_id}.png"));
        let target = out_dir.join(&rel);
        let sample = StyledSample {
            sample_id: sample_id.clone(),
            style_id: entry.style_id.clone(),
            content_id: entry.content_id.clone(),
            gender: entry.gender,
            image_path: rel,
        };
        if target.exists() {
            skipped += 1;
            samples.push(sample);
            continue;
        }
        let result = (|| -> Result<(), StyleError> {
            let style = style_by_id
                .get(entry.style_id.as_str())
                .ok_or_else(|| StyleError::UnknownReference(entry.style_id.clone()))?;
            let content = content_by_id
                .get(entry.content_id.as_str())
                .ok_or_else(|| StyleError::UnknownReference(entry.content_id.clone()))?;
            if content.gender != entry.gender {
                return Err(StyleError::UnknownReference(format!(
                    "{} is {}, plan says {}",
                    content.image_id,
                    content.gender.as_str(),
                    entry.gender.as_str()
                )));
            }
            let style_img = match &style_cache {
                Some((id, img)) if id == &style.style_id => img.clone(),
                _ => {
                    let img = data::load_rgb(&root.resolve(&style.image_path))?;
                    style_cache = Some((style.style_id.clone(), img.clone()));
                    img
                }
            };
            let content_img = data::load_rgb(&root.resolve(&content.image_path))?;
            let out = stylizer.stylize(&content_img, &style_img, alpha)?;
            let tmp = target.with_extension("png.part");
            out.save_with_format(&tmp, image::ImageFormat::Png)
                .map_err(|e| StyleError::Data(DataError::UndecodableImage {
                    path: tmp.clone(),
                    message: e.to_string(),
                }))?;
            std::fs::rename(&tmp, &target).map_err(io(&target))?;
            Ok(())
        })();
        match result {
            Ok(()) => {
                written += 1;
                samples.push(sample);
            }
            Err(e) => {
                log::warn!("styled sample {sample_id} failed: {e}");
                failures.push((sample_id, e.to_string()));
            }
        }
    }

    if !failures.is_empty() {
        let log_path = out_dir.join(ERROR_LOG);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io(&log_path))?;
        for (id, msg) in &failures {
            writeln!(f, "{id}\t{msg}").map_err(io(&log_path))?;
        }
    }

    let manifest = out_dir.join(MANIFEST_FILE);
    let rows: Vec<_> = samples
        .iter()
        .map(|s| (s.as_content(), s.style_id.clone(), s.content_id.clone()))
        .collect();
    data::write_styled(&manifest, &rows)?;
    Ok(BuildSummary {
        samples,
        written,
        skipped,
        failures,
        manifest,
    })
}
