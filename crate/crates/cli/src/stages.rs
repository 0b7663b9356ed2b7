//! The experiment stages. Each one sits behind [`Stage`], is registered by
//! name and writes only into its own stamped directory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use icono_core::cam::{batch_cams, CamItem};
use icono_core::classical::{run_bench, BenchOutcome, Matrix, ViewData};
use icono_core::data::{self, AnnotatedRecord, Character, ContentRecord, DataRoot};
use icono_core::eval::{self, render_curves, render_table, MetricsReport, TableLayout};
use icono_core::features::{
    extract_batch, load_backbone, read_feature_table, view_crop, write_feature_table, PretrainSource, View,
};
use icono_core::finetune::{pipelines, write_epoch_logs, FineTunedModel, FinetuneError, LabeledImages, PipelineId, PipelineInputs};
use icono_core::registry::{Named, Registry};
use icono_core::style::{self, build_styled_dataset, build_stylizer, plan_pairings, style_sources};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Classify, CliError, ResultExt};

pub const SPLIT_FILE: &str = "split.json";
pub const TRAIN_MANIFEST: &str = "train.csv";
pub const TEST_MANIFEST: &str = "test.csv";
pub const CONTENT_MANIFEST: &str = "content.csv";
pub const PLAN_FILE: &str = "plan.json";
pub const STYLED_TRAIN: &str = "styled_train.csv";
pub const STYLED_TEST: &str = "styled_test.csv";
pub const BENCH_FILE: &str = "bench.json";

/// What a stage sees while it runs.
pub struct StageCtx<'a> {
    pub cfg: &'a RunConfig,
    pub dir: &'a Path,
    /// Output directories of completed upstream stages, by stage name.
    pub upstream: &'a BTreeMap<&'static str, PathBuf>,
}

impl StageCtx<'_> {
    fn up(&self, name: &str) -> &Path {
        self.upstream
            .get(name)
            .unwrap_or_else(|| panic!("stage dependency `{name}` not wired"))
    }
}

pub trait Stage: Named + Send + Sync {
    fn depends_on(&self) -> &'static [&'static str];

    /// The configuration values the stage output depends on.
    fn settings(&self, cfg: &RunConfig) -> serde_json::Value;

    /// External files whose bytes key the stage (manifests, weights).
    fn input_files(&self, _cfg: &RunConfig) -> Vec<PathBuf> {
        Vec::new()
    }

    /// Runs the stage and returns the artifacts it wrote.
    fn run(&self, ctx: &StageCtx<'_>) -> Result<Vec<PathBuf>, CliError>;
}

pub fn stages() -> Registry<dyn Stage> {
    let mut r: Registry<dyn Stage> = Registry::new();
    r.register(Arc::new(Prepare))
        .register(Arc::new(Stylize))
        .register(Arc::new(Extract))
        .register(Arc::new(Bench))
        .register(Arc::new(Train))
        .register(Arc::new(Evaluate))
        .register(Arc::new(Cam));
    r
}

fn write(stage: &str, path: &Path, text: &str) -> Result<PathBuf, CliError> {
    std::fs::write(path, text).in_stage(stage)?;
    Ok(path.to_path_buf())
}

fn write_json<T: serde::Serialize>(stage: &str, path: &Path, value: &T) -> Result<PathBuf, CliError> {
    write(stage, path, &serde_json::to_string_pretty(value).in_stage(stage)?)
}

fn split_records(ctx: &StageCtx<'_>, stage: &str) -> Result<(Vec<AnnotatedRecord>, Vec<AnnotatedRecord>), CliError> {
    let dir = ctx.up("prepare");
    let train = data::load_annotated(&dir.join(TRAIN_MANIFEST), None).in_stage(stage)?;
    let test = data::load_annotated(&dir.join(TEST_MANIFEST), None).in_stage(stage)?;
    Ok((train, test))
}

fn body_images(records: &[AnnotatedRecord], root: &DataRoot, name: &str, stage: &str) -> Result<LabeledImages, CliError> {
    let mut out = LabeledImages {
        name: name.to_string(),
        ..Default::default()
    };
    for r in records {
        let img = view_crop(r, View::Body, root).in_stage(stage)?.expect("body box is mandatory");
        out.ids.push(r.image_id.clone());
        out.images.push(img);
        out.labels.push(r.character.index());
    }
    Ok(out)
}

fn content_images(records: &[ContentRecord], root: &DataRoot, name: &str, stage: &str) -> Result<LabeledImages, CliError> {
    let mut out = LabeledImages {
        name: name.to_string(),
        ..Default::default()
    };
    for r in records {
        out.ids.push(r.image_id.clone());
        out.images.push(data::load_rgb(&root.resolve(&r.image_path)).in_stage(stage)?);
        out.labels.push(r.gender.index());
    }
    Ok(out)
}

/// Holds out per-class test rows from the annotated manifest and re-checks
/// both manifests against the data root.
struct Prepare;

impl Named for Prepare {
    fn name(&self) -> &'static str {
        "prepare"
    }
}

impl Stage for Prepare {
    fn depends_on(&self) -> &'static [&'static str] {
        &[]
    }

    fn settings(&self, cfg: &RunConfig) -> serde_json::Value {
        json!({ "test_per_class": cfg.data.test_per_class })
    }

    fn input_files(&self, cfg: &RunConfig) -> Vec<PathBuf> {
        vec![
            cfg.input(&cfg.data.annotated_manifest),
            cfg.input(&cfg.data.content_manifest),
        ]
    }

    fn run(&self, ctx: &StageCtx<'_>) -> Result<Vec<PathBuf>, CliError> {
        let s = self.name();
        let cfg = ctx.cfg;
        let root = cfg.root();
        let annotated = data::load_annotated(&cfg.input(&cfg.data.annotated_manifest), Some(&root)).in_stage(s)?;
        let contents = data::load_content(&cfg.input(&cfg.data.content_manifest), Some(&root)).in_stage(s)?;
        let split = data::split_dataset(&annotated, cfg.data.test_per_class, cfg.seed).in_stage(s)?;
        let (train, test) = split.partition(&annotated);
        let owned = |v: Vec<&AnnotatedRecord>| v.into_iter().cloned().collect::<Vec<_>>();
        let paths = [SPLIT_FILE, TRAIN_MANIFEST, TEST_MANIFEST, CONTENT_MANIFEST].map(|f| ctx.dir.join(f));
        split.save(&paths[0]).in_stage(s)?;
        data::write_annotated(&paths[1], &owned(train)).in_stage(s)?;
        data::write_annotated(&paths[2], &owned(test)).in_stage(s)?;
        data::write_content(&paths[3], &contents).in_stage(s)?;
        log::info!(
            "split {} records into {} train / {} test",
            annotated.len(),
            split.train_ids.len(),
            split.test_ids.len()
        );
        Ok(paths.to_vec())
    }
}

/// Builds the surrogate set: content portraits rendered in the style of the
/// training scenes, split into train and test rows.
struct Stylize;

impl Named for Stylize {
    fn name(&self) -> &'static str {
        "stylize"
    }
}

impl Stage for Stylize {
    fn depends_on(&self) -> &'static [&'static str] {
        &["prepare"]
    }

    fn settings(&self, cfg: &RunConfig) -> serde_json::Value {
        serde_json::to_value(&cfg.style).unwrap_or_default()
    }

    fn input_files(&self, cfg: &RunConfig) -> Vec<PathBuf> {
        [&cfg.style.encoder_weights, &cfg.style.decoder_weights]
            .into_iter()
            .flatten()
            .map(|p| cfg.input(p))
            .collect()
    }

    fn run(&self, ctx: &StageCtx<'_>) -> Result<Vec<PathBuf>, CliError> {
        let s = self.name();
        let cfg = ctx.cfg;
        let (train, _) = split_records(ctx, s)?;
        let contents = data::load_content(&ctx.up("prepare").join(CONTENT_MANIFEST), None).in_stage(s)?;
        let mut settings = cfg.style.clone();
        settings.encoder_weights = settings.encoder_weights.map(|p| cfg.input(&p));
        settings.decoder_weights = settings.decoder_weights.map(|p| cfg.input(&p));
        let stylizer = build_stylizer(&settings).in_stage(s)?;

        let styles = style_sources(&train);
        let plan = plan_pairings(&styles, &contents, settings.per_gender, cfg.seed).in_stage(s)?;
        let mut artifacts = vec![write_json(s, &ctx.dir.join(PLAN_FILE), &plan)?];
        let summary = build_styled_dataset(&plan, &styles, &contents, &cfg.root(), ctx.dir, stylizer.as_ref(), settings.alpha)
            .in_stage(s)?;
        log::info!(
            "styled {} samples ({} reused, {} failed)",
            summary.written,
            summary.skipped,
            summary.failures.len()
        );
        if summary.samples.is_empty() {
            return Err(CliError::stage(s, "no styled sample could be produced"));
        }
        artifacts.push(summary.manifest.clone());
        let errors = ctx.dir.join(style::dataset::ERROR_LOG);
        if errors.exists() {
            artifacts.push(errors);
        }

        let records: Vec<ContentRecord> = summary.samples.iter().map(|x| x.as_content()).collect();
        let labels: Vec<usize> = records.iter().map(|r| r.gender.index()).collect();
        let (keep, held) = data::stratified_holdout(&labels, settings.test_fraction, cfg.seed);
        for (file, idx) in [(STYLED_TRAIN, keep), (STYLED_TEST, held)] {
            let rows: Vec<ContentRecord> = idx.iter().map(|&i| records[i].clone()).collect();
            let p = ctx.dir.join(file);
            data::write_content(&p, &rows).in_stage(s)?;
            artifacts.push(p);
        }
        Ok(artifacts)
    }
}

/// Backbone descriptors for face and body crops of both splits.
struct Extract;

impl Named for Extract {
    fn name(&self) -> &'static str {
        "extract"
    }
}

fn feature_file(view: View, split: &str) -> String {
    format!("{}_{split}.csv", view.as_str())
}

impl Stage for Extract {
    fn depends_on(&self) -> &'static [&'static str] {
        &["prepare"]
    }

    fn settings(&self, cfg: &RunConfig) -> serde_json::Value {
        json!({ "input_size": cfg.features.input_size })
    }

    fn input_files(&self, cfg: &RunConfig) -> Vec<PathBuf> {
        vec![cfg.input(&cfg.features.object_weights)]
    }

    fn run(&self, ctx: &StageCtx<'_>) -> Result<Vec<PathBuf>, CliError> {
        let s = self.name();
        let cfg = ctx.cfg;
        let root = cfg.root();
        let handle = load_backbone(
            &cfg.input(&cfg.features.object_weights),
            PretrainSource::ObjectRecognition,
            cfg.features.input_size,
        )
        .in_stage(s)?;
        let (train, test) = split_records(ctx, s)?;
        let mut artifacts = Vec::new();
        let mut failures = String::from("view,split,image_id,reason\n");
        for view in [View::Face, View::Body] {
            for (split, records) in [("train", &train), ("test", &test)] {
                let by_id: HashMap<&str, &AnnotatedRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
                let mut ids = Vec::new();
                for r in records.iter() {
                    if view == View::Face && r.face_box.is_none() {
                        failures.push_str(&format!("{view},{split},{},no face box\n", r.image_id));
                    } else {
                        ids.push(r.image_id.clone());
                    }
                }
                let summary = extract_batch(&handle, &ids, cfg.features.batch_size, |id| {
                    view_crop(by_id[id], view, &root).map(|c| c.expect("box checked above"))
                })
                .in_stage(s)?;
                for (id, reason) in &summary.failed {
                    failures.push_str(&format!("{view},{split},{id},\"{}\"\n", reason.replace('"', "'")));
                }
                let p = ctx.dir.join(feature_file(view, split));
                write_feature_table(&p, &summary.vectors).in_stage(s)?;
                artifacts.push(p);
            }
        }
        artifacts.push(write(s, &ctx.dir.join("failures.csv"), &failures)?);
        Ok(artifacts)
    }
}

/// Grid-searched classical classifiers on the extracted descriptors.
struct Bench;

impl Named for Bench {
    fn name(&self) -> &'static str {
        "bench"
    }
}

fn view_data(dir: &Path, view: View, train: &[AnnotatedRecord], test: &[AnnotatedRecord], stage: &str) -> Result<ViewData, CliError> {
    let load = |split: &str, records: &[AnnotatedRecord]| -> Result<(Vec<String>, Matrix, Vec<usize>), CliError> {
        let label: HashMap<&str, usize> = records.iter().map(|r| (r.image_id.as_str(), r.character.index())).collect();
        let vectors = read_feature_table(&dir.join(feature_file(view, split))).in_stage(stage)?;
        let mut ids = Vec::with_capacity(vectors.len());
        let mut y = Vec::with_capacity(vectors.len());
        for v in &vectors {
            let l = *label
                .get(v.image_id.as_str())
                .ok_or_else(|| CliError::data(stage, format!("feature row {} is not in the {split} split", v.image_id)))?;
            ids.push(v.image_id.clone());
            y.push(l);
        }
        let x = Matrix::from_f32_rows(vectors.iter().map(|v| v.values.as_slice())).in_stage(stage)?;
        Ok((ids, x, y))
    };
    let (train_ids, train_x, train_y) = load("train", train)?;
    let (test_ids, test_x, test_y) = load("test", test)?;
    Ok(ViewData {
        train_ids,
        train_x,
        train_y,
        test_ids,
        test_x,
        test_y,
    })
}

impl Stage for Bench {
    fn depends_on(&self) -> &'static [&'static str] {
        &["prepare", "extract"]
    }

    fn settings(&self, cfg: &RunConfig) -> serde_json::Value {
        serde_json::to_value(&cfg.bench).unwrap_or_default()
    }

    fn run(&self, ctx: &StageCtx<'_>) -> Result<Vec<PathBuf>, CliError> {
        let s = self.name();
        let (train, test) = split_records(ctx, s)?;
        let face = view_data(ctx.up("extract"), View::Face, &train, &test, s)?;
        let body = view_data(ctx.up("extract"), View::Body, &train, &test, s)?;
        let outcome = run_bench(&[(View::Face, &face), (View::Body, &body)], &ctx.cfg.bench, ctx.cfg.seed).in_stage(s)?;
        let mut artifacts = Vec::new();
        for e in &outcome.entries {
            let p = ctx.dir.join(format!("report_{}_{}.json", e.view, e.family.as_str()));
            artifacts.push(write_json(s, &p, e)?);
        }
        artifacts.push(write_json(s, &ctx.dir.join(BENCH_FILE), &outcome)?);
        Ok(artifacts)
    }
}

/// Fine-tunes pipelines A, B and C.
struct Train;

impl Named for Train {
    fn name(&self) -> &'static str {
        "train"
    }
}

pub fn bundle_file(p: PipelineId) -> String {
    format!("{p}.safetensors")
}

impl Stage for Train {
    fn depends_on(&self) -> &'static [&'static str] {
        &["prepare", "stylize"]
    }

    fn settings(&self, cfg: &RunConfig) -> serde_json::Value {
        json!({ "train": cfg.train, "input_size": cfg.features.input_size })
    }

    fn input_files(&self, cfg: &RunConfig) -> Vec<PathBuf> {
        vec![cfg.input(&cfg.features.face_weights)]
    }

    fn run(&self, ctx: &StageCtx<'_>) -> Result<Vec<PathBuf>, CliError> {
        let s = self.name();
        let cfg = ctx.cfg;
        let handle = load_backbone(
            &cfg.input(&cfg.features.face_weights),
            PretrainSource::FaceIdentification,
            cfg.features.input_size,
        )
        .in_stage(s)?;
        let (train, _) = split_records(ctx, s)?;
        let body = body_images(&train, &cfg.root(), "body_train", s)?;
        let styled_dir = ctx.up("stylize");
        let styled_rows = data::load_content(&styled_dir.join(STYLED_TRAIN), None).in_stage(s)?;
        let styled = content_images(&styled_rows, &DataRoot::new(styled_dir), "styled_train", s)?;

        let registry = pipelines();
        let mut artifacts = Vec::new();
        let mut surrogate: Option<FineTunedModel> = None;
        for id in PipelineId::ALL {
            let pipeline = registry.get(id.as_str()).expect("registered pipeline");
            let (data, init) = match id {
                PipelineId::B => (&styled, None),
                PipelineId::C => (&body, surrogate.clone()),
                PipelineId::A => (&body, None),
            };
            log::info!("training pipeline {id} on {} ({} images)", data.name, data.len());
            let logs_path = ctx.dir.join(format!("{id}_epochs.csv"));
            let outcome = match pipeline.run(PipelineInputs {
                backbone: Some(&handle),
                init,
                data,
                config: &cfg.train,
            }) {
                Ok(o) => o,
                Err(FinetuneError::Divergence { epoch, logs }) => {
                    write_epoch_logs(&logs_path, &logs).in_stage(s)?;
                    return Err(CliError::stage(s, format!("pipeline {id} diverged at epoch {epoch}")));
                }
                Err(e) => return Err(Classify::in_stage(e, s)),
            };
            write_epoch_logs(&logs_path, &outcome.logs).in_stage(s)?;
            let bundle = ctx.dir.join(bundle_file(id));
            outcome.model.save(&bundle).in_stage(s)?;
            log::info!("pipeline {id}: best epoch {} of {}", outcome.best_epoch, outcome.logs.len());
            artifacts.extend([bundle, logs_path]);
            if id == PipelineId::B {
                surrogate = Some(outcome.model);
            }
        }
        Ok(artifacts)
    }
}

fn predict_classes(model: &FineTunedModel, images: &[RgbImage], batch: usize, stage: &str) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        out.extend(model.predict(&refs).in_stage(stage)?.into_iter().map(|p| p.class));
    }
    Ok(out)
}

/// Test-set metrics, result tables and training curves.
struct Evaluate;

impl Named for Evaluate {
    fn name(&self) -> &'static str {
        "evaluate"
    }
}

/// Table position of fine-tuned rows, after the classical families.
const FINETUNE_ORDER: u32 = 10;

impl Stage for Evaluate {
    fn depends_on(&self) -> &'static [&'static str] {
        &["prepare", "bench", "train"]
    }

    fn settings(&self, _cfg: &RunConfig) -> serde_json::Value {
        json!({})
    }

    fn run(&self, ctx: &StageCtx<'_>) -> Result<Vec<PathBuf>, CliError> {
        let s = self.name();
        let cfg = ctx.cfg;
        let (_, test) = split_records(ctx, s)?;
        let body = body_images(&test, &cfg.root(), "body_test", s)?;
        let names = Character::ALL.map(Character::as_str);
        let mut artifacts = Vec::new();
        let mut finetuned: Vec<MetricsReport> = Vec::new();
        for (k, id) in PipelineId::ALL.into_iter().enumerate() {
            let model = FineTunedModel::load(&ctx.up("train").join(bundle_file(id))).in_stage(s)?;
            let preds = predict_classes(&model, &body.images, cfg.features.batch_size, s)?;
            let cm = eval::confusion(&preds, &body.labels, names).in_stage(s)?;
            let model_id = format!("finetune_{id}");
            let mut report = eval::metrics(&cm, &model_id, "body_test").in_stage(s)?.with_model(
                &model_id,
                &format!("Finetune-{id}"),
                FINETUNE_ORDER + k as u32,
            );
            if model.class_names != names.map(String::from) {
                report.flags.push(format!(
                    "outputs {} and {} scored as {} and {}",
                    model.class_names[0], model.class_names[1], names[0], names[1]
                ));
            }
            artifacts.push(write_json(s, &ctx.dir.join(format!("{id}_metrics.json")), &report)?);
            artifacts.push(write(s, &ctx.dir.join(format!("{id}_confusion.csv")), &cm.to_csv())?);
            if let Some(stage) = model.provenance.last() {
                let files = render_curves(&stage.epochs, ctx.dir, id.as_str()).in_stage(s)?;
                artifacts.extend([files.accuracy, files.loss, files.data]);
            }
            log::info!("pipeline {id}: test accuracy {:.3}", report.accuracy);
            finetuned.push(report);
        }

        let bench_json = std::fs::read_to_string(ctx.up("bench").join(BENCH_FILE)).in_stage(s)?;
        let bench: BenchOutcome = serde_json::from_str(&bench_json).in_stage(s)?;
        let mut body_rows = bench.reports(View::Body);
        body_rows.extend(finetuned);
        for (layout, rows, stem) in [
            (TableLayout::Face, bench.reports(View::Face), "table_face"),
            (TableLayout::Body, body_rows, "table_body"),
        ] {
            let t = render_table(&rows, layout).in_stage(s)?;
            artifacts.push(write(s, &ctx.dir.join(format!("{stem}.md")), &t.text)?);
            artifacts.push(write(s, &ctx.dir.join(format!("{stem}.csv")), &t.csv)?);
        }
        Ok(artifacts)
    }
}

/// Class activation maps on the body test crops.
struct Cam;

impl Named for Cam {
    fn name(&self) -> &'static str {
        "cam"
    }
}

impl Stage for Cam {
    fn depends_on(&self) -> &'static [&'static str] {
        &["prepare", "train"]
    }

    fn settings(&self, cfg: &RunConfig) -> serde_json::Value {
        serde_json::to_value(&cfg.cam).unwrap_or_default()
    }

    fn run(&self, ctx: &StageCtx<'_>) -> Result<Vec<PathBuf>, CliError> {
        let s = self.name();
        let cfg = ctx.cfg;
        let (_, test) = split_records(ctx, s)?;
        let body = body_images(&test, &cfg.root(), "body_test", s)?;
        let mut artifacts = Vec::new();
        for p in &cfg.cam.pipelines {
            let id: PipelineId = p.parse().map_err(|e: String| CliError::stage(s, e))?;
            let model = FineTunedModel::load(&ctx.up("train").join(bundle_file(id))).in_stage(s)?;
            let items: Vec<CamItem<'_>> = body
                .ids
                .iter()
                .zip(&body.images)
                .zip(&body.labels)
                .map(|((image_id, image), &label)| CamItem { image_id, image, label })
                .collect();
            let out = ctx.dir.join(id.as_str());
            let rows = batch_cams(&model, &items, &out, cfg.cam.only_correct).in_stage(s)?;
            log::info!("pipeline {id}: {} activation maps", rows.len());
            artifacts.push(out.join(icono_core::cam::INDEX_FILE));
            artifacts.push(out.join(icono_core::cam::META_FILE));
            for r in rows {
                artifacts.push(out.join(r.cam_file));
                artifacts.push(out.join(r.grid_file));
            }
        }
        Ok(artifacts)
    }
}
