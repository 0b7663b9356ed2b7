use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use icono_core::classical::stratified_folds;
use icono_core::data::{split_dataset, stratified_holdout, AnnotatedRecord, BoundingBox, Character, ContentRecord, Gender};
use icono_core::eval::{confusion, format_metric, metrics};
use icono_core::features::{read_feature_table, write_feature_table, FeatureVector};
use icono_core::finetune::{augment, mirror, trace, Augmentation};
use icono_core::style::{adain, plan_pairings, FeatureGrid, StyleSource};
use image::RgbImage;
use proptest::prelude::*;

fn labels(max: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1..=max).prop_flat_map(|n| (prop::collection::vec(0..2usize, n), prop::collection::vec(0..2usize, n)))
}

fn records(n_mary: usize, n_gabriel: usize) -> Vec<AnnotatedRecord> {
    let b = BoundingBox::new(0, 0, 4, 4).unwrap();
    (0..n_mary + n_gabriel)
        .map(|i| AnnotatedRecord {
            image_id: format!("r{i:03}"),
            image_path: PathBuf::from(format!("s{}.png", i / 2)),
            character: if i < n_mary { Character::Mary } else { Character::Gabriel },
            body_box: b,
            face_box: None,
        })
        .collect()
}

/// Straightforward early-stop replay kept separate from the library version.
fn early_stop_oracle(losses: &[f64], tol: f64, patience: usize, cap: usize) -> (usize, usize) {
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    let mut since = 0;
    let mut last = 0;
    for (i, &l) in losses.iter().enumerate().take(cap) {
        last = i + 1;
        since = if best - l > tol { 0 } else { since + 1 };
        if l < best {
            best = l;
            best_at = i + 1;
        }
        if since >= patience {
            break;
        }
    }
    (last, best_at)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn confusion_counts_partition_the_samples((p, t) in labels(60)) {
        let cm = confusion(&p, &t, ["a", "b"]).unwrap();
        prop_assert_eq!(cm.total() as usize, p.len());
        prop_assert_eq!(cm.trace() + cm.off_diagonal(), cm.total());
        let m = metrics(&cm, "m", "d").unwrap();
        let agree = p.iter().zip(&t).filter(|(a, b)| a == b).count();
        prop_assert_eq!(m.accuracy, agree as f64 / p.len() as f64);
        for v in [m.precision, m.recall, m.f1, m.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn rendering_stays_within_half_a_hundredth(v in 0.0f64..=1.0) {
        let shown: f64 = format_metric(v).parse().unwrap();
        prop_assert!((shown - v).abs() <= 0.005 + 1e-12);
        prop_assert_eq!(format_metric(v).len(), 4);
    }

    #[test]
    fn adain_matches_style_statistics(
        c in 1usize..6,
        n in 2usize..40,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shift: f64| FeatureGrid::new(c, n, (0..c * n).map(|_| shift + rng.random_range(-3.0..3.0)).collect());
        let content = draw(0.0);
        let style = draw(5.0);
        let out = adain(&content, &style).unwrap().features;
        for ch in 0..c {
            let (ms, ss) = style.channel_stats(ch);
            let (mo, so) = out.channel_stats(ch);
            prop_assert!((mo - ms).abs() <= 1e-6 * ms.abs().max(1.0));
            prop_assert!((so - ss).abs() <= 1e-4 * ss.max(1e-3));
        }
    }

    #[test]
    fn pairing_plan_shape(styles in 1usize..12, per in 1usize..5, extra in 0usize..6, seed in any::<u64>()) {
        let srcs: Vec<StyleSource> = (0..styles)
            .map(|i| StyleSource { style_id: format!("s{i}"), image_path: format!("s{i}.png").into() })
            .collect();
        let contents: Vec<ContentRecord> = (0..2 * (per + extra))
            .map(|i| ContentRecord {
                image_id: format!("c{i}"),
                image_path: format!("c{i}.png").into(),
                gender: if i % 2 == 0 { Gender::Female } else { Gender::Male },
            })
            .collect();
        let plan = plan_pairings(&srcs, &contents, per, seed).unwrap();
        prop_assert_eq!(plan.entries.len(), styles * 2 * per);
        for (_, (f, m)) in plan.gender_histogram() {
            prop_assert_eq!((f, m), (per, per));
        }
        let mut seen = BTreeSet::new();
        for e in &plan.entries {
            prop_assert!(seen.insert((e.style_id.clone(), e.content_id.clone())), "content reused within a style");
        }
        prop_assert_eq!(plan, plan_pairings(&srcs, &contents, per, seed).unwrap());
    }

    #[test]
    fn split_is_disjoint_exact_and_order_free(m in 3usize..20, g in 3usize..20, k in 1usize..3, seed in any::<u64>()) {
        let recs = records(m, g);
        let s = split_dataset(&recs, k, seed).unwrap();
        prop_assert!(s.train_ids.is_disjoint(&s.test_ids));
        prop_assert_eq!(s.train_ids.len() + s.test_ids.len(), m + g);
        let test_mary = recs.iter().filter(|r| r.character == Character::Mary && s.test_ids.contains(&r.image_id)).count();
        prop_assert_eq!(test_mary, k);
        prop_assert_eq!(s.test_ids.len(), 2 * k);
        let mut reversed = recs.clone();
        reversed.reverse();
        prop_assert_eq!(s, split_dataset(&reversed, k, seed).unwrap());
    }

    #[test]
    fn holdout_keeps_every_class_on_both_sides(ls in prop::collection::vec(0..2usize, 4..60), f in 0.05f64..0.95, seed in any::<u64>()) {
        let (keep, held) = stratified_holdout(&ls, f, seed);
        prop_assert_eq!(keep.len() + held.len(), ls.len());
        for c in 0..2 {
            let n = ls.iter().filter(|&&l| l == c).count();
            if n >= 2 {
                prop_assert!(keep.iter().any(|&i| ls[i] == c));
                prop_assert!(held.iter().any(|&i| ls[i] == c));
            }
        }
    }

    #[test]
    fn folds_cover_every_sample_once_and_stay_stratified(ls in prop::collection::vec(0..2usize, 6..80), k in 2usize..6, seed in any::<u64>()) {
        let folds = stratified_folds(&ls, k, seed);
        prop_assert_eq!(folds.len(), ls.len());
        prop_assert!(folds.iter().all(|&f| f < k));
        for c in 0..2 {
            let mut per: BTreeMap<usize, usize> = BTreeMap::new();
            for (i, &f) in folds.iter().enumerate() {
                if ls[i] == c {
                    *per.entry(f).or_default() += 1;
                }
            }
            let counts: Vec<usize> = (0..k).map(|f| per.get(&f).copied().unwrap_or(0)).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "class {} fold counts {:?}", c, counts);
        }
    }

    #[test]
    fn early_stop_agrees_with_replay(
        losses in prop::collection::vec(0.0f64..2.0, 1..40),
        tol in 0.0f64..0.2,
        patience in 1usize..6,
        cap in 1usize..50,
    ) {
        let (last, best) = trace(&losses, tol, patience, cap);
        prop_assert_eq!((last, best), early_stop_oracle(&losses, tol, patience, cap));
        prop_assert!(best >= 1 && best <= last && last <= cap.min(losses.len()));
    }

    #[test]
    fn feature_tables_round_trip_exactly(rows in prop::collection::vec(prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 5), 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let vs: Vec<FeatureVector> = rows
            .into_iter()
            .enumerate()
            .map(|(i, values)| FeatureVector { image_id: format!("id{i}"), values })
            .collect();
        write_feature_table(&p, &vs).unwrap();
        let back = read_feature_table(&p).unwrap();
        prop_assert_eq!(back.len(), vs.len());
        for (a, b) in back.iter().zip(&vs) {
            prop_assert_eq!(&a.image_id, &b.image_id);
            let bits = |v: &FeatureVector| v.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn augmentation_without_transforms_is_identity(w in 2u32..12, h in 2u32..12, seed in any::<u64>()) {
        let img = RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 20) as u8, (y * 20) as u8, ((x + y) * 7) as u8]));
        prop_assert_eq!(&augment(&img, &Augmentation::none(), seed), &img);
        prop_assert_eq!(&mirror(&mirror(&img)), &img);
    }
}
