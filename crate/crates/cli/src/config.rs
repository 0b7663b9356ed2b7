//! Run configuration: a TOML file of sections and keys, validated in one pass
//! that reports every problem with its dotted key name.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use icono_core::classical::GridSpec;
use icono_core::data::{DataRoot, DATA_ROOT_ENV};
use icono_core::features::DEFAULT_INPUT_SIZE;
use icono_core::finetune::{Augmentation, TrainConfig};
use icono_core::nets::TrainableScope;
use icono_core::style::StyleSettings;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSection {
    pub annotated_manifest: PathBuf,
    pub content_manifest: PathBuf,
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSection {
    /// Backbone for the classical benchmark.
    pub object_weights: PathBuf,
    /// Backbone for the fine-tuning pipelines.
    pub face_weights: PathBuf,
    pub input_size: u32,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CamSection {
    pub only_correct: bool,
    pub pipelines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub config_path: PathBuf,
    pub data_root: PathBuf,
    pub output_root: PathBuf,
    pub seed: u64,
    pub data: DataSection,
    pub style: StyleSettings,
    pub features: FeatureSection,
    pub bench: GridSpec,
    pub train: TrainConfig,
    pub cam: CamSection,
}

impl RunConfig {
    pub fn root(&self) -> DataRoot {
        DataRoot::new(&self.data_root)
    }

    /// Resolves an input path against the data root.
    pub fn input(&self, p: &Path) -> PathBuf {
        self.root().resolve(p)
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("", &["seed", "data_root", "output_root"]),
    ("data", &["annotated_manifest", "content_manifest", "test_per_class"]),
    (
        "style",
        &[
            "method",
            "encoder_weights",
            "decoder_weights",
            "short_side",
            "alpha",
            "per_gender",
            "test_fraction",
        ],
    ),
    ("features", &["object_weights", "face_weights", "input_size", "batch_size"]),
    (
        "bench",
        &["c", "gamma", "n_estimators", "logistic_c", "cv_folds", "standardize"],
    ),
    (
        "train",
        &[
            "learning_rate",
            "momentum",
            "batch_size",
            "val_fraction",
            "early_stop_tolerance",
            "early_stop_patience",
            "max_epochs",
            "shear_range",
            "shift_range",
            "rotation_range",
            "horizontal_flip",
            "trainable",
        ],
    ),
    ("cam", &["only_correct", "pipelines"]),
];

struct Reader<'a> {
    doc: &'a toml::Table,
    issues: Vec<ConfigIssue>,
}

impl<'a> Reader<'a> {
    fn issue(&mut self, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            key: key.to_string(),
            message: message.into(),
        });
    }

    fn lookup(&self, key: &str) -> Option<&'a toml::Value> {
        match key.split_once('.') {
            Some((section, k)) => self.doc.get(section)?.as_table()?.get(k),
            None => self.doc.get(key),
        }
    }

    fn check_unknown(&mut self) {
        let mut unknown = Vec::new();
        for (k, v) in self.doc {
            match (v.as_table(), KNOWN.iter().find(|(s, _)| s == k)) {
                (Some(t), Some((_, keys))) => {
                    for inner in t.keys() {
                        if !keys.contains(&inner.as_str()) {
                            unknown.push(format!("{k}.{inner}"));
                        }
                    }
                }
                (None, _) if KNOWN[0].1.contains(&k.as_str()) => {}
                _ => unknown.push(k.clone()),
            }
        }
        for k in unknown {
            self.issue(&k, "unknown key");
        }
    }

    fn float(&mut self, key: &str, default: Option<f64>) -> f64 {
        match self.lookup(key) {
            Some(toml::Value::Float(f)) => *f,
            Some(toml::Value::Integer(i)) => *i as f64,
            Some(other) => {
                self.issue(key, format!("expected a number, got {}", other.type_str()));
                default.unwrap_or(f64::NAN)
            }
            None => default.unwrap_or_else(|| {
                self.issue(key, "missing required key");
                f64::NAN
            }),
        }
    }

    fn int(&mut self, key: &str, default: Option<i64>) -> i64 {
        match self.lookup(key) {
            Some(toml::Value::Integer(i)) => *i,
            Some(other) => {
                self.issue(key, format!("expected an integer, got {}", other.type_str()));
                default.unwrap_or(0)
            }
            None => default.unwrap_or_else(|| {
                self.issue(key, "missing required key");
                0
            }),
        }
    }

    fn count(&mut self, key: &str, default: Option<usize>, min: usize) -> usize {
        let v = self.int(key, default.map(|d| d as i64));
        if v < min as i64 {
            self.issue(key, format!("must be at least {min}, got {v}"));
            return min;
        }
        v as usize
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.lookup(key) {
            Some(toml::Value::Boolean(b)) => *b,
            Some(other) => {
                self.issue(key, format!("expected true or false, got {}", other.type_str()));
                default
            }
            None => default,
        }
    }

    fn string(&mut self, key: &str, default: Option<&str>) -> Option<String> {
        match self.lookup(key) {
            Some(toml::Value::String(s)) => Some(s.clone()),
            Some(other) => {
                self.issue(key, format!("expected a string, got {}", other.type_str()));
                None
            }
            None => match default {
                Some(d) => Some(d.to_string()),
                None => {
                    self.issue(key, "missing required key");
                    None
                }
            },
        }
    }

    fn floats(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.lookup(key) {
            None => default.to_vec(),
            Some(toml::Value::Array(a)) => {
                let mut out = Vec::new();
                for v in a {
                    match v {
                        toml::Value::Float(f) => out.push(*f),
                        toml::Value::Integer(i) => out.push(*i as f64),
                        other => self.issue(key, format!("expected numbers, found {}", other.type_str())),
                    }
                }
                if out.is_empty() {
                    self.issue(key, "candidate list must not be empty");
                }
                if out.iter().any(|v| !(*v > 0.0)) {
                    self.issue(key, "candidates must be positive");
                }
                out
            }
            Some(other) => {
                self.issue(key, format!("expected an array, got {}", other.type_str()));
                default.to_vec()
            }
        }
    }

    fn positive(&mut self, key: &str, default: Option<f64>) -> f64 {
        let v = self.float(key, default);
        if !v.is_nan() && !(v > 0.0 && v.is_finite()) {
            self.issue(key, format!("must be > 0, got {v}"));
        }
        v
    }

    fn unit_open(&mut self, key: &str, default: Option<f64>) -> f64 {
        let v = self.float(key, default);
        if !v.is_nan() && !(v > 0.0 && v < 1.0) {
            self.issue(key, format!("must be in (0, 1), got {v}"));
        }
        v
    }

    fn non_negative(&mut self, key: &str, default: Option<f64>) -> f64 {
        let v = self.float(key, default);
        if !v.is_nan() && !(v >= 0.0 && v.is_finite()) {
            self.issue(key, format!("must be >= 0, got {v}"));
        }
        v
    }
}

/// Loads and validates `path`. `data_root_flag` overrides the environment,
/// which overrides the file. Input paths must exist under the data root,
/// except network weight files, which are checked when their stage runs.
pub fn validate_config(path: &Path, data_root_flag: Option<&Path>) -> Result<RunConfig, Vec<ConfigIssue>> {
    let one = |key: &str, message: String| {
        vec![ConfigIssue {
            key: key.to_string(),
            message,
        }]
    };
    let text = std::fs::read_to_string(path).map_err(|e| one("<file>", format!("{}: {e}", path.display())))?;
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| one("<syntax>", e.message().to_string()))?;
    let mut r = Reader { doc: &doc, issues: Vec::new() };
    r.check_unknown();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let rel = |p: String| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    let seed = r.int("seed", None);
    if seed < 0 {
        r.issue("seed", "must be non-negative");
    }
    let seed = seed.max(0) as u64;
    let file_root = r.string("data_root", Some(".")).map(rel).unwrap_or_default();
    let data_root = match (data_root_flag, std::env::var_os(DATA_ROOT_ENV)) {
        (Some(flag), _) => flag.to_path_buf(),
        (None, Some(env)) if !env.is_empty() => PathBuf::from(env),
        _ => file_root,
    };
    let output_root = r.string("output_root", None).map(rel).unwrap_or_default();
    if !data_root.is_dir() {
        r.issue("data_root", format!("{} is not a directory", data_root.display()));
    }

    let input = |r: &mut Reader, key: &str, default: Option<&str>, must_exist: bool| -> PathBuf {
        let Some(s) = r.string(key, default) else {
            return PathBuf::new();
        };
        let p = PathBuf::from(s);
        let full = DataRoot::new(&data_root).resolve(&p);
        if must_exist && data_root.is_dir() && !full.is_file() {
            r.issue(key, format!("{} does not exist", full.display()));
        }
        p
    };
    let data = DataSection {
        annotated_manifest: input(&mut r, "data.annotated_manifest", None, true),
        content_manifest: input(&mut r, "data.content_manifest", None, true),
        test_per_class: r.count("data.test_per_class", Some(100), 1),
    };

    let method = r.string("style.method", Some("adain")).unwrap_or_default();
    let methods: BTreeSet<&str> = icono_core::style::stylizers().names().iter().copied().collect();
    if !methods.contains(method.as_str()) {
        r.issue("style.method", format!("unknown method `{method}`; known: {methods:?}"));
    }
    let weights = |r: &mut Reader, key: &str| -> Option<PathBuf> {
        r.string(key, Some("")).filter(|s| !s.is_empty()).map(PathBuf::from)
    };
    let defaults = StyleSettings::default();
    let style = StyleSettings {
        method,
        encoder_weights: weights(&mut r, "style.encoder_weights"),
        decoder_weights: weights(&mut r, "style.decoder_weights"),
        short_side: r.count("style.short_side", Some(defaults.short_side as usize), 8) as u32,
        alpha: {
            let a = r.float("style.alpha", Some(defaults.alpha));
            if !(0.0..=1.0).contains(&a) {
                r.issue("style.alpha", format!("must be in [0, 1], got {a}"));
            }
            a
        },
        per_gender: r.count("style.per_gender", Some(defaults.per_gender), 1),
        test_fraction: r.unit_open("style.test_fraction", Some(defaults.test_fraction)),
    };

    let features = FeatureSection {
        object_weights: input(&mut r, "features.object_weights", None, false),
        face_weights: input(&mut r, "features.face_weights", None, false),
        input_size: r.count("features.input_size", Some(DEFAULT_INPUT_SIZE as usize), 32) as u32,
        batch_size: r.count("features.batch_size", Some(16), 1),
    };

    let g = GridSpec::default();
    let bench = GridSpec {
        c: r.floats("bench.c", &g.c),
        gamma: r.floats("bench.gamma", &g.gamma),
        n_estimators: r
            .floats("bench.n_estimators", &g.n_estimators.iter().map(|&n| n as f64).collect::<Vec<_>>())
            .into_iter()
            .map(|v| v as usize)
            .collect(),
        logistic_c: r.floats("bench.logistic_c", &g.logistic_c),
        cv_folds: r.count("bench.cv_folds", Some(g.cv_folds), 2),
        standardize: r.boolean("bench.standardize", g.standardize),
    };

    let t = TrainConfig::default();
    let a = Augmentation::default();
    let trainable = r
        .string("train.trainable", Some("all"))
        .and_then(|s| match s.parse::<TrainableScope>() {
            Ok(v) => Some(v),
            Err(e) => {
                r.issue("train.trainable", e);
                None
            }
        })
        .unwrap_or_default();
    let train = TrainConfig {
        learning_rate: r.positive("train.learning_rate", Some(t.learning_rate)),
        momentum: {
            let m = r.float("train.momentum", Some(t.momentum));
            if !(0.0..1.0).contains(&m) {
                r.issue("train.momentum", format!("must be in [0, 1), got {m}"));
            }
            m
        },
        batch_size: r.count("train.batch_size", Some(t.batch_size), 1),
        val_fraction: r.unit_open("train.val_fraction", Some(t.val_fraction)),
        early_stop_tolerance: r.non_negative("train.early_stop_tolerance", Some(t.early_stop_tolerance)),
        early_stop_patience: r.count("train.early_stop_patience", Some(t.early_stop_patience), 1),
        max_epochs: r.count("train.max_epochs", Some(t.max_epochs), 1),
        augmentation: Augmentation {
            shear_range: r.non_negative("train.shear_range", Some(a.shear_range)),
            shift_range: {
                let s = r.non_negative("train.shift_range", Some(a.shift_range));
                if s >= 1.0 {
                    r.issue("train.shift_range", "must be below 1");
                }
                s
            },
            rotation_range: r.non_negative("train.rotation_range", Some(a.rotation_range)),
            horizontal_flip: r.boolean("train.horizontal_flip", a.horizontal_flip),
        },
        trainable,
        seed,
    };

    let pipelines = match r.lookup("cam.pipelines") {
        None => vec!["A".to_string(), "C".to_string()],
        Some(toml::Value::Array(items)) => {
            let mut out = Vec::new();
            for v in items {
                match v.as_str().map(str::parse::<icono_core::finetune::PipelineId>) {
                    Some(Ok(p)) => out.push(p.as_str().to_string()),
                    _ => r.issue("cam.pipelines", format!("not a pipeline id: {v}")),
                }
            }
            out
        }
        Some(other) => {
            r.issue("cam.pipelines", format!("expected an array, got {}", other.type_str()));
            Vec::new()
        }
    };
    let cam = CamSection {
        only_correct: r.boolean("cam.only_correct", true),
        pipelines,
    };

    if r.issues.is_empty() {
        Ok(RunConfig {
            config_path: path.to_path_buf(),
            data_root,
            output_root,
            seed,
            data,
            style,
            features,
            bench,
            train,
            cam,
        })
    } else {
        Err(r.issues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        std::fs::write(dir.join("a.csv"), "x").unwrap();
        std::fs::write(dir.join("c.csv"), "x").unwrap();
        let p = dir.join("run.toml");
        std::fs::write(&p, body).unwrap();
        p
    }

    const BASE: &str = r#"
seed = 3
output_root = "out"
[data]
annotated_manifest = "a.csv"
content_manifest = "c.csv"
[features]
object_weights = "o.safetensors"
face_weights = "f.safetensors"
"#;

    #[test]
    fn minimal_config_validates() {
        let d = tempfile::tempdir().unwrap();
        let cfg = validate_config(&write(d.path(), BASE), Some(d.path())).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.output_root, d.path().join("out"));
    }

    #[test]
    fn negative_learning_rate_is_one_keyed_error() {
        let d = tempfile::tempdir().unwrap();
        let body = format!("{BASE}[train]\nlearning_rate = -0.1\n");
        let errs = validate_config(&write(d.path(), &body), Some(d.path())).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].key, "train.learning_rate");
    }

    #[test]
    fn all_errors_are_reported() {
        let d = tempfile::tempdir().unwrap();
        let body = format!("{BASE}[train]\nlearning_rate = -0.1\nval_fraction = 2.0\ntypo = 1\n");
        let errs = validate_config(&write(d.path(), &body), Some(d.path())).unwrap_err();
        let keys: BTreeSet<_> = errs.iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, BTreeSet::from(["train.learning_rate", "train.val_fraction", "train.typo"]));
    }

    #[test]
    fn missing_manifest_is_reported_by_key() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), BASE);
        std::fs::remove_file(d.path().join("c.csv")).unwrap();
        let errs = validate_config(&p, Some(d.path())).unwrap_err();
        assert_eq!(errs[0].key, "data.content_manifest");
    }
}
