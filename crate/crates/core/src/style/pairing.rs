use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StyleError;
use crate::data::{AnnotatedRecord, ContentRecord, Gender};

/// One style image. Several annotated records may share a scene; the scene
/// is the style source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleSource {
    pub style_id: String,
    pub image_path: PathBuf,
}

/// Distinct scenes referenced by `records`, in first-seen order. The style id
/// is the relative path without extension, with separators replaced by `_`.
pub fn style_sources(records: &[AnnotatedRecord]) -> Vec<StyleSource> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.image_path.clone()))
        .map(|r| {
            let id = r
                .image_path
                .with_extension("")
                .to_string_lossy()
                .replace(['/', '\\'], "_");
            StyleSource {
                style_id: id,
                image_path: r.image_path.clone(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingEntry {
    pub style_id: String,
    pub content_id: String,
    pub gender: Gender,
}

impl PairingEntry {
    pub fn sample_id(&self) -> String {
        format!("{}__{}", self.style_id, self.content_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylePairingPlan {
    pub entries: Vec<PairingEntry>,
    pub per_style: usize,
    pub per_style_male: usize,
    pub per_style_female: usize,
    pub seed: u64,
}

impl StylePairingPlan {
    /// `(female, male)` entry counts for each style id.
    pub fn gender_histogram(&self) -> BTreeMap<&str, (usize, usize)> {
        let mut h: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for e in &self.entries {
            let slot = h.entry(e.style_id.as_str()).or_default();
            match e.gender {
                Gender::Female => slot.0 += 1,
                Gender::Male => slot.1 += 1,
            }
        }
        h
    }
}

/// Assigns `per_gender` female and `per_gender` male content images to every
/// style, sampled without replacement within a style. A content image may
/// serve several styles. Deterministic under `seed` for identical inputs.
pub fn plan_pairings(
    styles: &[StyleSource],
    contents: &[ContentRecord],
    per_gender: usize,
    seed: u64,
) -> Result<StylePairingPlan, StyleError> {
    let pools: [Vec<&ContentRecord>; 2] =
        Gender::ALL.map(|g| contents.iter().filter(|c| c.gender == g).collect());
    for g in Gender::ALL {
        let available = pools[g.index()].len();
        if available < per_gender {
            return Err(StyleError::InsufficientContent {
                gender: g,
                available,
                requested: per_gender,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(styles.len() * per_gender * 2);
    for style in styles {
        for g in Gender::ALL {
            let pool = &pools[g.index()];
            for i in rand::seq::index::sample(&mut rng, pool.len(), per_gender) {
                entries.push(PairingEntry {
                    style_id: style.style_id.clone(),
                    content_id: pool[i].image_id.clone(),
                    gender: g,
                });
            }
        }
    }
    Ok(StylePairingPlan {
        entries,
        per_style: per_gender * 2,
        per_style_male: per_gender,
        per_style_female: per_gender,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn content(n_female: usize, n_male: usize) -> Vec<ContentRecord> {
        let mut v = Vec::new();
        for i in 0..n_female {
            v.push(ContentRecord {
                image_id: format!("f{i}"),
                image_path: format!("f{i}.png").into(),
                gender: Gender::Female,
            });
        }
        for i in 0..n_male {
            v.push(ContentRecord {
                image_id: format!("m{i}"),
                image_path: format!("m{i}.png").into(),
                gender: Gender::Male,
            });
        }
        v
    }

    fn styles(n: usize) -> Vec<StyleSource> {
        (0..n)
            .map(|i| StyleSource {
                style_id: format!("s{i}"),
                image_path: format!("s{i}.png").into(),
            })
            .collect()
    }

    #[test]
    fn exact_pool_is_used_once_each() {
        let c = content(8, 8);
        let plan = plan_pairings(&styles(1), &c, 8, 5).unwrap();
        assert_eq!(plan.entries.len(), 16);
        let mut ids: Vec<_> = plan.entries.iter().map(|e| e.content_id.clone()).collect();
        ids.sort();
        let mut expected: Vec<_> = c.iter().map(|r| r.image_id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
    }

    #[test]
    fn short_pool_is_rejected() {
        let err = plan_pairings(&styles(1), &content(8, 7), 8, 5).unwrap_err();
        assert!(matches!(
            err,
            StyleError::InsufficientContent { gender: Gender::Male, available: 7, requested: 8 }
        ));
    }

    #[test]
    fn style_sources_dedupe_scenes() {
        let mk = |id: &str, path: &str| AnnotatedRecord {
            image_id: id.into(),
            image_path: path.into(),
            character: crate::data::Character::Mary,
            body_box: crate::data::BoundingBox::new(0, 0, 1, 1).unwrap(),
            face_box: None,
        };
        let s = style_sources(&[mk("a", "scenes/x.png"), mk("b", "scenes/x.png"), mk("c", "scenes/y.jpg")]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].style_id, "scenes_x");
        assert_eq!(s[1].style_id, "scenes_y");
    }
}
