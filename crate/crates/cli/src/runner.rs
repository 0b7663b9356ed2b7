//! Stage planning, content-hash stamping and resume.
//!
//! A stage's directory is `<output_root>/<stage>-<hash8>`, where the hash
//! covers the stage's settings, the seed, the bytes of its external inputs
//! and the hashes of the stages it reads from. A `.complete` marker records
//! the artifacts; a stage whose marker exists is skipped.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, ResultExt};
use crate::stages::{stages, Stage, StageCtx};

pub const SUMMARY_FILE: &str = "run_summary.jsonl";
pub const COMPLETE_MARKER: &str = ".complete";

#[derive(Clone)]
pub struct PlannedStage {
    pub stage: Arc<dyn Stage>,
    pub input_hash: String,
    pub dir: PathBuf,
}

impl PlannedStage {
    pub fn name(&self) -> &'static str {
        self.stage.name()
    }

    pub fn is_complete(&self) -> bool {
        self.dir.join(COMPLETE_MARKER).is_file()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Skipped,
    Failed,
}

/// One line of the run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    /// Relative to the output root.
    pub artifacts: Vec<PathBuf>,
    pub input_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Marker {
    input_hash: String,
    artifacts: Vec<PathBuf>,
}

fn file_digest(path: &Path) -> String {
    match std::fs::read(path) {
        Ok(bytes) => hex::encode(Sha256::digest(&bytes)),
        Err(_) => "missing".to_string(),
    }
}

/// Every stage in execution order with its stamp. Pure: reads input files
/// but writes nothing.
pub fn plan(cfg: &RunConfig) -> Vec<PlannedStage> {
    let mut hashes: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut out = Vec::new();
    for stage in stages().iter() {
        let upstream: BTreeMap<&str, &String> = stage
            .depends_on()
            .iter()
            .map(|d| (*d, hashes.get(d).expect("dependencies are registered first")))
            .collect();
        let files: Vec<String> = stage.input_files(cfg).iter().map(|p| file_digest(p)).collect();
        let key = serde_json::json!({
            "stage": stage.name(),
            "seed": cfg.seed,
            "settings": stage.settings(cfg),
            "files": files,
            "upstream": upstream,
        });
        let hash = hex::encode(Sha256::digest(key.to_string().as_bytes()));
        let dir = cfg.output_root.join(format!("{}-{}", stage.name(), &hash[..8]));
        hashes.insert(stage.name(), hash.clone());
        out.push(PlannedStage {
            stage,
            input_hash: hash,
            dir,
        });
    }
    out
}

fn append_summary(cfg: &RunConfig, record: &StageRecord) -> Result<(), CliError> {
    let path = cfg.output_root.join(SUMMARY_FILE);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .in_stage(&record.stage)?;
    let line = serde_json::to_string(record).in_stage(&record.stage)?;
    writeln!(f, "{line}").in_stage(&record.stage)
}

fn relative(cfg: &RunConfig, p: &Path) -> PathBuf {
    p.strip_prefix(&cfg.output_root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

/// Runs one planned stage unless its marker already exists (or `force`).
/// Every upstream stage must be complete.
pub fn execute(cfg: &RunConfig, planned: &[PlannedStage], name: &str, force: bool) -> Result<StageRecord, CliError> {
    let target = planned
        .iter()
        .find(|p| p.name() == name)
        .ok_or_else(|| CliError::stage(name, "no such stage"))?;
    let mut upstream = BTreeMap::new();
    for dep in target.stage.depends_on() {
        let p = planned.iter().find(|p| p.name() == *dep).expect("dependency is planned");
        if !p.is_complete() {
            return Err(CliError::stage(
                name,
                format!("upstream stage `{dep}` has not completed for this configuration; run `icono {dep}` first"),
            ));
        }
        upstream.insert(*dep, p.dir.clone());
    }
    std::fs::create_dir_all(&cfg.output_root).in_stage(name)?;
    let marker_path = target.dir.join(COMPLETE_MARKER);

    if target.is_complete() && !force {
        let text = std::fs::read_to_string(&marker_path).in_stage(name)?;
        let marker: Marker = serde_json::from_str(&text).in_stage(name)?;
        log::info!("{name}: up to date in {}", target.dir.display());
        let record = StageRecord {
            stage: name.to_string(),
            status: StageStatus::Skipped,
            artifacts: marker.artifacts,
            input_hash: target.input_hash.clone(),
            error: None,
        };
        append_summary(cfg, &record)?;
        return Ok(record);
    }

    if marker_path.exists() {
        std::fs::remove_file(&marker_path).in_stage(name)?;
    }
    std::fs::create_dir_all(&target.dir).in_stage(name)?;
    log::info!("{name}: running in {}", target.dir.display());
    let ctx = StageCtx {
        cfg,
        dir: &target.dir,
        upstream: &upstream,
    };
    match target.stage.run(&ctx) {
        Ok(artifacts) => {
            let artifacts: Vec<PathBuf> = artifacts.iter().map(|p| relative(cfg, p)).collect();
            let marker = Marker {
                input_hash: target.input_hash.clone(),
                artifacts: artifacts.clone(),
            };
            std::fs::write(&marker_path, serde_json::to_string_pretty(&marker).in_stage(name)?).in_stage(name)?;
            let record = StageRecord {
                stage: name.to_string(),
                status: StageStatus::Completed,
                artifacts,
                input_hash: target.input_hash.clone(),
                error: None,
            };
            append_summary(cfg, &record)?;
            Ok(record)
        }
        Err(e) => {
            let record = StageRecord {
                stage: name.to_string(),
                status: StageStatus::Failed,
                artifacts: Vec::new(),
                input_hash: target.input_hash.clone(),
                error: Some(e.to_string()),
            };
            append_summary(cfg, &record)?;
            Err(e)
        }
    }
}

/// Every stage in order. The summary file is restarted; the first failing
/// stage aborts the run, leaving the records of the stages before it.
pub fn run_all(cfg: &RunConfig, force: bool) -> Result<Vec<StageRecord>, CliError> {
    std::fs::create_dir_all(&cfg.output_root).in_stage("run-all")?;
    std::fs::write(cfg.output_root.join(SUMMARY_FILE), "").in_stage("run-all")?;
    let planned = plan(cfg);
    let mut records = Vec::new();
    for p in &planned {
        records.push(execute(cfg, &planned, p.name(), force)?);
    }
    Ok(records)
}

/// Parses a summary file.
pub fn read_summary(path: &Path) -> Result<Vec<StageRecord>, CliError> {
    let text = std::fs::read_to_string(path).in_stage("summary")?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).in_stage("summary"))
        .collect()
}
