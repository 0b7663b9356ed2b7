//! Classical classifiers over feature tables, with cross-validated grid
//! search and the two-region benchmark.

mod forest;
mod logistic;
mod svm;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use forest::RandomForest;
pub use logistic::LogisticRegression;
pub use svm::{Kernel, Svm};

use crate::data::Character;
use crate::eval::{self, EvalError, MetricsReport};
use crate::features::View;
use crate::registry::{Named, Registry};

#[derive(Debug, Error)]
pub enum ClassicalError {
    #[error("training labels contain a single class")]
    SingleClassData,
    #[error("expected {expected}-dimensional features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("grid has no candidate cells")]
    EmptyGrid,
    #[error("every grid cell failed; first error: {0}")]
    AllCellsFailed(String),
    #[error("{samples} samples cannot fill {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("unknown classifier family `{0}`")]
    UnknownFamily(String),
    #[error("{0} diverged")]
    Diverged(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ClassicalError> {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(ClassicalError::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(Self { data, rows: n, cols })
    }

    pub fn from_f32_rows<'a>(rows: impl IntoIterator<Item = &'a [f32]>) -> Result<Self, ClassicalError> {
        Self::from_rows(
            rows.into_iter()
                .map(|r| r.iter().map(|&v| f64::from(v)).collect())
                .collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            rows: idx.len(),
            cols: self.cols,
        }
    }
}

/// Per-column z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (k, v) in x.row(i).iter().enumerate() {
                var[k] += (v - mean[k]).powi(2) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..x.rows() {
            for k in 0..x.cols() {
                out.data[i * x.cols + k] = (x.data[i * x.cols + k] - self.mean[k]) / self.scale[k];
            }
        }
        out
    }
}

pub trait TrainedClassifier: Send + Sync {
    fn dim(&self) -> usize;

    /// Per-class scores; larger wins.
    fn score(&self, x: &[f64]) -> [f64; 2];

    /// Index of the larger score, class 0 on ties.
    fn predict(&self, x: &[f64]) -> usize {
        let s = self.score(x);
        usize::from(s[1] > s[0])
    }
}

impl fmt::Debug for dyn TrainedClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TrainedClassifier(dim={})", self.dim())
    }
}

/// Checks dimensionality, then predicts every row.
pub fn predict_all(model: &dyn TrainedClassifier, x: &Matrix) -> Result<Vec<usize>, ClassicalError> {
    if x.cols() != model.dim() {
        return Err(ClassicalError::DimensionMismatch {
            expected: model.dim(),
            got: x.cols(),
        });
    }
    Ok((0..x.rows()).map(|i| model.predict(x.row(i))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    RandomForest,
    LogisticRegression,
    SvmLinear,
    SvmRbf,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::RandomForest,
        Family::LogisticRegression,
        Family::SvmLinear,
        Family::SvmRbf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::RandomForest => "random_forest",
            Family::LogisticRegression => "logistic_regression",
            Family::SvmLinear => "svm_linear",
            Family::SvmRbf => "svm_rbf",
        }
    }

    /// Row position in rendered tables.
    pub fn order(self) -> u32 {
        self as u32
    }
}

impl std::str::FromStr for Family {
    type Err = ClassicalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ClassicalError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalModelSpec {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_estimators: Option<usize>,
}

impl ClassicalModelSpec {
    pub fn random_forest(n_estimators: usize) -> Self {
        Self {
            family: Family::RandomForest,
            c: None,
            gamma: None,
            n_estimators: Some(n_estimators),
        }
    }

    pub fn logistic(c: Option<f64>) -> Self {
        Self {
            family: Family::LogisticRegression,
            c,
            gamma: None,
            n_estimators: None,
        }
    }

    pub fn svm_linear(c: f64) -> Self {
        Self {
            family: Family::SvmLinear,
            c: Some(c),
            gamma: None,
            n_estimators: None,
        }
    }

    pub fn svm_rbf(c: f64, gamma: f64) -> Self {
        Self {
            family: Family::SvmRbf,
            c: Some(c),
            gamma: Some(gamma),
            n_estimators: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClassicalError> {
        let bad = |m: &str| Err(ClassicalError::InvalidSpec(format!("{}: {m}", self.family.as_str())));
        let (need_c, need_gamma, need_n) = match self.family {
            Family::RandomForest => (false, false, true),
            Family::LogisticRegression => (false, false, false),
            Family::SvmLinear => (true, false, false),
            Family::SvmRbf => (true, true, false),
        };
        if need_c && self.c.is_none() {
            return bad("C is required");
        }
        if need_gamma && self.gamma.is_none() {
            return bad("gamma is required");
        }
        if need_n && self.n_estimators.is_none() {
            return bad("n_estimators is required");
        }
        if !need_n && self.n_estimators.is_some() {
            return bad("n_estimators does not apply");
        }
        if !need_gamma && self.gamma.is_some() {
            return bad("gamma does not apply");
        }
        if self.family == Family::RandomForest && self.c.is_some() {
            return bad("C does not apply");
        }
        if self.c.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return bad("C must be positive");
        }
        if self.gamma.is_some_and(|g| !(g > 0.0 && g.is_finite())) {
            return bad("gamma must be positive");
        }
        if self.n_estimators == Some(0) {
            return bad("n_estimators must be at least 1");
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        let mut s = self.family.as_str().to_string();
        if let Some(n) = self.n_estimators {
            s += &format!(" n_estimators={n}");
        }
        if let Some(c) = self.c {
            s += &format!(" C={c}");
        }
        if let Some(g) = self.gamma {
            s += &format!(" gamma={g}");
        }
        s
    }

    /// Table row label, e.g. `SVM (RBF, C = 1000, γ = 0.01)`.
    pub fn label(&self) -> String {
        match self.family {
            Family::RandomForest => format!("Random Forests ({} est.)", self.n_estimators.unwrap_or(0)),
            Family::LogisticRegression => match self.c {
                Some(c) => format!("Logistic Regression (C = {c})"),
                None => "Logistic Regression".into(),
            },
            Family::SvmLinear => format!("SVM (Linear, C = {})", self.c.unwrap_or(0.0)),
            Family::SvmRbf => format!(
                "SVM (RBF, C = {}, γ = {})",
                self.c.unwrap_or(0.0),
                self.gamma.unwrap_or(0.0)
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
    pub n_estimators: Vec<usize>,
    /// Candidate regularisation strengths for logistic regression.
    pub logistic_c: Vec<f64>,
    pub cv_folds: usize,
    pub standardize: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            c: vec![1.0, 10.0, 100.0, 1000.0],
            gamma: vec![0.1, 0.01, 0.001],
            n_estimators: vec![100, 200, 500],
            logistic_c: vec![1.0],
            cv_folds: 5,
            standardize: false,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), ClassicalError> {
        let bad = |m: &str| Err(ClassicalError::InvalidSpec(m.to_string()));
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if self.c.is_empty() || self.gamma.is_empty() || self.n_estimators.is_empty() || self.logistic_c.is_empty() {
            return bad("candidate lists must be non-empty");
        }
        Ok(())
    }
}

/// One algorithm family: enumerates its grid cells and fits a cell.
pub trait ClassifierFamily: Named + Send + Sync {
    fn family(&self) -> Family;

    fn candidates(&self, grid: &GridSpec) -> Vec<ClassicalModelSpec>;

    fn fit(
        &self,
        spec: &ClassicalModelSpec,
        x: &Matrix,
        y: &[usize],
        seed: u64,
    ) -> Result<Box<dyn TrainedClassifier>, ClassicalError>;

    /// Fits several cells on the same data.
    fn fit_cells(
        &self,
        specs: &[ClassicalModelSpec],
        x: &Matrix,
        y: &[usize],
        seed: u64,
    ) -> Vec<Result<Box<dyn TrainedClassifier>, ClassicalError>> {
        specs.iter().map(|s| self.fit(s, x, y, seed)).collect()
    }
}

struct ForestFamily;
struct LogisticFamily;
struct LinearSvmFamily;
struct RbfSvmFamily;

impl Named for ForestFamily {
    fn name(&self) -> &'static str {
        Family::RandomForest.as_str()
    }
}

impl ClassifierFamily for ForestFamily {
    fn family(&self) -> Family {
        Family::RandomForest
    }

    fn candidates(&self, grid: &GridSpec) -> Vec<ClassicalModelSpec> {
        grid.n_estimators.iter().map(|&n| ClassicalModelSpec::random_forest(n)).collect()
    }

    fn fit(
        &self,
        spec: &ClassicalModelSpec,
        x: &Matrix,
        y: &[usize],
        seed: u64,
    ) -> Result<Box<dyn TrainedClassifier>, ClassicalError> {
        Ok(Box::new(RandomForest::fit(x, y, spec.n_estimators.unwrap_or(100), seed)?))
    }

    // Smaller forests are prefixes of the largest one.
    fn fit_cells(
        &self,
        specs: &[ClassicalModelSpec],
        x: &Matrix,
        y: &[usize],
        seed: u64,
    ) -> Vec<Result<Box<dyn TrainedClassifier>, ClassicalError>> {
        let max = specs.iter().filter_map(|s| s.n_estimators).max().unwrap_or(0);
        match RandomForest::fit(x, y, max, seed) {
            Ok(full) => specs
                .iter()
                .map(|s| Ok(Box::new(full.truncated(s.n_estimators.unwrap_or(0))) as Box<dyn TrainedClassifier>))
                .collect(),
            Err(e) => {
                let msg = e.to_string();
                specs.iter().map(|_| Err(ClassicalError::Diverged(msg.clone()))).collect()
            }
        }
    }
}

impl Named for LogisticFamily {
    fn name(&self) -> &'static str {
        Family::LogisticRegression.as_str()
    }
}

impl ClassifierFamily for LogisticFamily {
    fn family(&self) -> Family {
        Family::LogisticRegression
    }

    fn candidates(&self, grid: &GridSpec) -> Vec<ClassicalModelSpec> {
        grid.logistic_c.iter().map(|&c| ClassicalModelSpec::logistic(Some(c))).collect()
    }

    fn fit(
        &self,
        spec: &ClassicalModelSpec,
        x: &Matrix,
        y: &[usize],
        _seed: u64,
    ) -> Result<Box<dyn TrainedClassifier>, ClassicalError> {
        Ok(Box::new(LogisticRegression::fit(x, y, spec.c.unwrap_or(1.0))?))
    }
}

impl Named for LinearSvmFamily {
    fn name(&self) -> &'static str {
        Family::SvmLinear.as_str()
    }
}

impl ClassifierFamily for LinearSvmFamily {
    fn family(&self) -> Family {
        Family::SvmLinear
    }

    fn candidates(&self, grid: &GridSpec) -> Vec<ClassicalModelSpec> {
        grid.c.iter().map(|&c| ClassicalModelSpec::svm_linear(c)).collect()
    }

    fn fit(
        &self,
        spec: &ClassicalModelSpec,
        x: &Matrix,
        y: &[usize],
        _seed: u64,
    ) -> Result<Box<dyn TrainedClassifier>, ClassicalError> {
        Ok(Box::new(Svm::fit(x, y, spec.c.unwrap_or(1.0), Kernel::Linear)?))
    }
}

impl Named for RbfSvmFamily {
    fn name(&self) -> &'static str {
        Family::SvmRbf.as_str()
    }
}

impl ClassifierFamily for RbfSvmFamily {
    fn family(&self) -> Family {
        Family::SvmRbf
    }

    fn candidates(&self, grid: &GridSpec) -> Vec<ClassicalModelSpec> {
        grid.c
            .iter()
            .flat_map(|&c| grid.gamma.iter().map(move |&g| ClassicalModelSpec::svm_rbf(c, g)))
            .collect()
    }

    fn fit(
        &self,
        spec: &ClassicalModelSpec,
        x: &Matrix,
        y: &[usize],
        _seed: u64,
    ) -> Result<Box<dyn TrainedClassifier>, ClassicalError> {
        let gamma = spec.gamma.unwrap_or(0.01);
        Ok(Box::new(Svm::fit(x, y, spec.c.unwrap_or(1.0), Kernel::Rbf { gamma })?))
    }
}

pub fn classifier_families() -> Registry<dyn ClassifierFamily> {
    let mut r: Registry<dyn ClassifierFamily> = Registry::new();
    r.register(Arc::new(ForestFamily))
        .register(Arc::new(LogisticFamily))
        .register(Arc::new(LinearSvmFamily))
        .register(Arc::new(RbfSvmFamily));
    r
}

fn family_impl(family: Family) -> Arc<dyn ClassifierFamily> {
    classifier_families()
        .get(family.as_str())
        .expect("every family is registered")
}

fn check_training_data(x: &Matrix, y: &[usize]) -> Result<(), ClassicalError> {
    if x.rows() != y.len() {
        return Err(ClassicalError::LengthMismatch {
            rows: x.rows(),
            labels: y.len(),
        });
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(ClassicalError::SingleClassData);
    }
    if let Some(&bad) = y.iter().find(|&&l| l > 1) {
        return Err(ClassicalError::InvalidSpec(format!("label {bad} outside the 2-class set")));
    }
    Ok(())
}

pub fn train_classifier(
    spec: &ClassicalModelSpec,
    x: &Matrix,
    y: &[usize],
    seed: u64,
) -> Result<Box<dyn TrainedClassifier>, ClassicalError> {
    spec.validate()?;
    check_training_data(x, y)?;
    family_impl(spec.family).fit(spec, x, y, seed)
}

/// Stratified fold index per sample: each class is shuffled under `seed`
/// and dealt round-robin.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    let mut offset = 0;
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = (pos + offset) % k;
        }
        // continue dealing where the previous class stopped, to balance fold sizes
        offset = (offset + y.iter().filter(|&&l| l == class).count()) % k;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub spec: ClassicalModelSpec,
    pub fold_accuracy: Vec<f64>,
    /// Mean cross-validated accuracy; `None` when the cell failed.
    pub mean_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ClassicalModelSpec,
    pub best_score: f64,
    pub table: Vec<CellScore>,
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Mean k-fold accuracy of every cell of `family`'s grid. The winner is the
/// highest mean, earliest cell on ties.
pub fn grid_search(
    x: &Matrix,
    y: &[usize],
    family: Family,
    grid: &GridSpec,
    seed: u64,
) -> Result<GridResult, ClassicalError> {
    grid.validate()?;
    check_training_data(x, y)?;
    let fam = family_impl(family);
    let cells = fam.candidates(grid);
    if cells.is_empty() {
        return Err(ClassicalError::EmptyGrid);
    }
    let k = grid.cv_folds;
    if y.len() < k {
        return Err(ClassicalError::TooFewSamples {
            samples: y.len(),
            folds: k,
        });
    }
    let folds = stratified_folds(y, k, seed);
    let mut per_cell: Vec<Result<Vec<f64>, String>> = vec![Ok(Vec::new()); cells.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
        let val: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
        let (mut xt, yt) = (x.select(&train), train.iter().map(|&i| y[i]).collect::<Vec<_>>());
        let (mut xv, yv) = (x.select(&val), val.iter().map(|&i| y[i]).collect::<Vec<_>>());
        if grid.standardize {
            let s = Standardizer::fit(&xt);
            xt = s.apply(&xt);
            xv = s.apply(&xv);
        }
        let fitted = match check_training_data(&xt, &yt) {
            Ok(()) => fam.fit_cells(&cells, &xt, &yt, seed),
            Err(e) => cells.iter().map(|_| Err(ClassicalError::InvalidSpec(e.to_string()))).collect(),
        };
        for (slot, model) in per_cell.iter_mut().zip(fitted) {
            let Ok(scores) = slot else { continue };
            match model.and_then(|m| predict_all(m.as_ref(), &xv)) {
                Ok(pred) => scores.push(accuracy(&pred, &yv)),
                Err(e) => *slot = Err(format!("fold {f}: {e}")),
            }
        }
    }
    let table: Vec<CellScore> = cells
        .into_iter()
        .zip(per_cell)
        .map(|(spec, r)| match r {
            Ok(scores) => CellScore {
                spec,
                mean_accuracy: Some(scores.iter().sum::<f64>() / scores.len() as f64),
                fold_accuracy: scores,
                error: None,
            },
            Err(e) => CellScore {
                spec,
                fold_accuracy: Vec::new(),
                mean_accuracy: None,
                error: Some(e),
            },
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in table.iter().enumerate() {
        if let Some(m) = c.mean_accuracy {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
    }
    let Some((bi, best_score)) = best else {
        let first = table.iter().find_map(|c| c.error.clone()).unwrap_or_default();
        return Err(ClassicalError::AllCellsFailed(first));
    };
    Ok(GridResult {
        best: table[bi].spec.clone(),
        best_score,
        table,
    })
}

/// Train/test features for one image region.
#[derive(Debug, Clone)]
pub struct ViewData {
    pub train_ids: Vec<String>,
    pub train_x: Matrix,
    pub train_y: Vec<usize>,
    pub test_ids: Vec<String>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
}

/// SHA-256 over the ids, labels and feature bits of a training view.
pub fn training_view_checksum(ids: &[String], x: &Matrix, y: &[usize]) -> String {
    let mut h = Sha256::new();
    for (i, id) in ids.iter().enumerate() {
        h.update(id.as_bytes());
        h.update([0]);
        if let Some(&l) = y.get(i) {
            h.update((l as u64).to_le_bytes());
        }
        if i < x.rows() {
            for v in x.row(i) {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchEntry {
    pub view: View,
    pub family: Family,
    pub search: GridResult,
    pub predictions: Vec<usize>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub entries: Vec<BenchEntry>,
    /// Checksum of exactly the training rows each view's models saw.
    pub training_checksums: BTreeMap<View, String>,
}

impl BenchOutcome {
    pub fn reports(&self, view: View) -> Vec<MetricsReport> {
        self.entries
            .iter()
            .filter(|e| e.view == view)
            .map(|e| e.report.clone())
            .collect()
    }
}

/// Grid-searches every family on each view's training rows, refits the
/// winner on all of them and evaluates on the view's test rows.
pub fn run_bench(views: &[(View, &ViewData)], grid: &GridSpec, seed: u64) -> Result<BenchOutcome, ClassicalError> {
    let names = Character::ALL.map(|c| c.as_str());
    let mut entries = Vec::new();
    let mut training_checksums = BTreeMap::new();
    for &(view, data) in views {
        training_checksums.insert(
            view,
            training_view_checksum(&data.train_ids, &data.train_x, &data.train_y),
        );
        let (train_x, test_x) = if grid.standardize {
            let s = Standardizer::fit(&data.train_x);
            (s.apply(&data.train_x), s.apply(&data.test_x))
        } else {
            (data.train_x.clone(), data.test_x.clone())
        };
        for family in classifier_families().iter() {
            let f = family.family();
            log::info!("bench {view} {}", f.as_str());
            let mut inner = grid.clone();
            inner.standardize = false;
            let search = grid_search(&train_x, &data.train_y, f, &inner, seed)?;
            let model = train_classifier(&search.best, &train_x, &data.train_y, seed)?;
            let predictions = predict_all(model.as_ref(), &test_x)?;
            let cm = eval::confusion(&predictions, &data.test_y, names)?;
            let report = eval::metrics(&cm, &search.best.id(), &format!("{view}_test"))?.with_model(
                &search.best.id(),
                &search.best.label(),
                f.order(),
            );
            entries.push(BenchEntry {
                view,
                family: f,
                search,
                predictions,
                report,
            });
        }
    }
    Ok(BenchOutcome {
        entries,
        training_checksums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(n: usize, d: usize, sep: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let rows = y
            .iter()
            .map(|&l| {
                (0..d)
                    .map(|k| {
                        let centre = if k < 4 { if l == 1 { sep } else { -sep } } else { 0.0 };
                        centre + noise.sample(&mut rng)
                    })
                    .collect()
            })
            .collect();
        (Matrix::from_rows(rows).unwrap(), y)
    }

    #[test]
    fn spec_validation() {
        assert!(ClassicalModelSpec::svm_rbf(1000.0, 0.01).validate().is_ok());
        assert!(ClassicalModelSpec::svm_linear(-1.0).validate().is_err());
        assert!(ClassicalModelSpec::random_forest(0).validate().is_err());
        assert!(ClassicalModelSpec::logistic(None).validate().is_ok());
        let mut s = ClassicalModelSpec::svm_linear(1.0);
        s.gamma = Some(0.1);
        assert!(s.validate().is_err());
        assert_eq!(ClassicalModelSpec::svm_rbf(1000.0, 0.01).label(), "SVM (RBF, C = 1000, γ = 0.01)");
    }

    #[test]
    fn single_class_and_dimension_errors() {
        let (x, _) = blobs(10, 8, 3.0, 1);
        let y = vec![0; 10];
        assert!(matches!(
            train_classifier(&ClassicalModelSpec::svm_linear(1.0), &x, &y, 0),
            Err(ClassicalError::SingleClassData)
        ));
        let (x, y) = blobs(20, 8, 3.0, 1);
        let m = train_classifier(&ClassicalModelSpec::logistic(None), &x, &y, 0).unwrap();
        let (small, _) = blobs(4, 3, 3.0, 1);
        assert!(matches!(
            predict_all(m.as_ref(), &small),
            Err(ClassicalError::DimensionMismatch { expected: 8, got: 3 })
        ));
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<usize> = (0..23).map(|i| usize::from(i < 13)).collect();
        let f = stratified_folds(&y, 5, 9);
        for k in 0..5 {
            let n1 = (0..23).filter(|&i| f[i] == k && y[i] == 1).count();
            assert!((2..=3).contains(&n1));
            let n = (0..23).filter(|&i| f[i] == k).count();
            assert!((4..=5).contains(&n));
        }
    }

    #[test]
    fn one_cell_grid_equals_plain_cv() {
        let (x, y) = blobs(30, 6, 0.4, 2);
        let grid = GridSpec {
            c: vec![10.0],
            ..GridSpec::default()
        };
        let r = grid_search(&x, &y, Family::SvmLinear, &grid, 4).unwrap();
        assert_eq!(r.table.len(), 1);
        let folds = stratified_folds(&y, 5, 4);
        let mut total = 0.0;
        for f in 0..5 {
            let tr: Vec<usize> = (0..30).filter(|&i| folds[i] != f).collect();
            let va: Vec<usize> = (0..30).filter(|&i| folds[i] == f).collect();
            let ytr: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
            let m = Svm::fit(&x.select(&tr), &ytr, 10.0, Kernel::Linear).unwrap();
            let correct = va.iter().filter(|&&i| m.predict(x.row(i)) == y[i]).count();
            total += correct as f64 / va.len() as f64;
        }
        assert_eq!(r.best_score, total / 5.0);
    }
}
