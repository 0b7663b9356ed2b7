//! Confusion matrices, macro-averaged metrics, table rendering and training
//! curves.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finetune::EpochLog;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("{which} {index} has value {value}, outside the 2-class label set")]
    UnknownLabel {
        which: &'static str,
        index: usize,
        value: usize,
    },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("nothing to render")]
    Empty,
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

/// 2x2 counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
    pub class_names: [String; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn off_diagonal(&self) -> u64 {
        self.counts[0][1] + self.counts[1][0]
    }

    pub fn to_csv(&self) -> String {
        let [a, b] = &self.class_names;
        format!(
            "true\\predicted,{a},{b}\n{a},{},{}\n{b},{},{}\n",
            self.counts[0][0], self.counts[0][1], self.counts[1][0], self.counts[1][1]
        )
    }
}

pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    class_names: [&str; 2],
) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut counts = [[0u64; 2]; 2];
    for (i, (&p, &t)) in predictions.iter().zip(labels).enumerate() {
        if t > 1 {
            return Err(EvalError::UnknownLabel {
                which: "label",
                index: i,
                value: t,
            });
        }
        if p > 1 {
            return Err(EvalError::UnknownLabel {
                which: "prediction",
                index: i,
                value: p,
            });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: class_names.map(String::from),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Metrics for one (model, dataset) pair. Stored at full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_id: String,
    /// Human-readable row label used by [`render_table`].
    pub model_label: String,
    /// Row position in rendered tables; equal ranks keep input order.
    pub order: u32,
    pub dataset_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub averaging: String,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Option<ConfusionMatrix>,
    /// Zero-division and absent-class conventions that were applied.
    pub flags: Vec<String>,
}

impl MetricsReport {
    /// A report carrying externally reported values, without a confusion matrix.
    pub fn reported(label: &str, order: u32, pr: f64, re: f64, f1: f64, acc: f64) -> Self {
        Self {
            model_id: label.to_string(),
            model_label: label.to_string(),
            order,
            dataset_id: "reported".into(),
            precision: pr,
            recall: re,
            f1,
            accuracy: acc,
            averaging: "macro".into(),
            per_class: Vec::new(),
            confusion: None,
            flags: Vec::new(),
        }
    }

    pub fn with_model(mut self, model_id: &str, label: &str, order: u32) -> Self {
        self.model_id = model_id.to_string();
        self.model_label = label.to_string();
        self.order = order;
        self
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Macro-averaged precision/recall/F1 and accuracy from a confusion matrix.
/// A class with no predicted samples gets precision 0; a class with no true
/// samples gets recall 0. Both cases are flagged.
pub fn metrics(cm: &ConfusionMatrix, model_id: &str, dataset_id: &str) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut per_class = Vec::with_capacity(2);
    let mut flags = Vec::new();
    for k in 0..2 {
        let tp = cm.counts[k][k];
        let predicted = cm.counts[0][k] + cm.counts[1][k];
        let actual = cm.counts[k][0] + cm.counts[k][1];
        let name = &cm.class_names[k];
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            flags.push(format!("no samples predicted as {name}; precision set to 0"));
            0.0
        };
        let recall = if actual > 0 {
            tp as f64 / actual as f64
        } else {
            flags.push(format!("{name} absent from labels; recall set to 0"));
            0.0
        };
        per_class.push(ClassMetrics {
            name: name.clone(),
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: actual,
        });
    }
    let macro_avg = |f: fn(&ClassMetrics) -> f64| (f(&per_class[0]) + f(&per_class[1])) / 2.0;
    Ok(MetricsReport {
        model_id: model_id.to_string(),
        model_label: model_id.to_string(),
        order: u32::MAX,
        dataset_id: dataset_id.to_string(),
        precision: macro_avg(|c| c.precision),
        recall: macro_avg(|c| c.recall),
        f1: macro_avg(|c| c.f1),
        accuracy: cm.trace() as f64 / total as f64,
        averaging: "macro".into(),
        per_class,
        confusion: Some(cm.clone()),
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    Face,
    Body,
}

impl TableLayout {
    fn title(self) -> &'static str {
        match self {
            TableLayout::Face => "Models trained on features from FACE images",
            TableLayout::Body => "Models trained on features from BODY images",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedTable {
    pub text: String,
    pub csv: String,
}

/// Two-decimal presentation of a stored metric.
pub fn format_metric(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders reports as an aligned pipe table plus CSV. Rows are sorted by
/// `order` (stable); the row with the highest accuracy is bolded, the first
/// such row on ties.
pub fn render_table(reports: &[MetricsReport], layout: TableLayout) -> Result<RenderedTable, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rows: Vec<&MetricsReport> = reports.iter().collect();
    rows.sort_by_key(|r| r.order);
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.accuracy > rows[best].accuracy {
            best = i;
        }
    }
    let header = ["Model Type", "Pr", "Re", "F1", "Acc."];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let c = [
                r.model_label.clone(),
                format_metric(r.precision),
                format_metric(r.recall),
                format_metric(r.f1),
                format_metric(r.accuracy),
            ];
            if i == best {
                c.map(|s| format!("**{s}**"))
            } else {
                c
            }
        })
        .collect();
    let width = |col: usize| {
        cells
            .iter()
            .map(|c| c[col].chars().count())
            .chain(std::iter::once(header[col].chars().count()))
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..5).map(width).collect();
    let line = |vals: &[String]| {
        let mut s = String::from("|");
        for (i, v) in vals.iter().enumerate() {
            let pad = widths[i] - v.chars().count();
            if i == 0 {
                let _ = write!(s, " {v}{} |", " ".repeat(pad));
            } else {
                let _ = write!(s, " {}{v} |", " ".repeat(pad));
            }
        }
        s.push('\n');
        s
    };
    let mut text = format!("{}\n\n", layout.title());
    text.push_str(&line(&header.map(String::from)));
    text.push('|');
    for (i, w) in widths.iter().enumerate() {
        if i == 0 {
            text.push_str(&"-".repeat(w + 2));
        } else {
            text.push_str(&format!("{}:", "-".repeat(w + 1)));
        }
        text.push('|');
    }
    text.push('\n');
    for c in &cells {
        text.push_str(&line(c));
    }

    let mut csv = String::from("model,pr,re,f1,acc,best\n");
    for (i, r) in rows.iter().enumerate() {
        let label = if r.model_label.contains([',', '"']) {
            format!("\"{}\"", r.model_label.replace('"', "\"\""))
        } else {
            r.model_label.clone()
        };
        let _ = writeln!(
            csv,
            "{label},{},{},{},{},{}",
            format_metric(r.precision),
            format_metric(r.recall),
            format_metric(r.f1),
            format_metric(r.accuracy),
            i == best
        );
    }
    Ok(RenderedTable { text, csv })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurveFiles {
    pub accuracy: PathBuf,
    pub loss: PathBuf,
    pub data: PathBuf,
}

fn plot(
    path: &Path,
    title: &str,
    y_label: &str,
    train: &[(f64, f64)],
    val: &[(f64, f64)],
) -> Result<(), Box<dyn std::error::Error>> {
    let x_max = train.iter().map(|p| p.0).fold(1.0, f64::max);
    let ys = train.iter().chain(val).map(|p| p.1);
    let y_max = ys.clone().fold(f64::MIN, f64::max);
    let y_min = ys.fold(f64::MAX, f64::min).min(0.0);
    let y_top = if y_max > y_min { y_max * 1.05 } else { y_min + 1.0 };
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.5f64..x_max + 0.5, y_min..y_top)?;
    chart.configure_mesh().x_desc("epoch").y_desc(y_label).draw()?;
    chart
        .draw_series(LineSeries::new(train.iter().copied(), &BLUE))?
        .label("train")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    chart
        .draw_series(LineSeries::new(val.iter().copied(), &RED))?
        .label("validation")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
    chart.draw_series(train.iter().map(|&p| Circle::new(p, 2, BLUE.filled())))?;
    chart.draw_series(val.iter().map(|&p| Circle::new(p, 2, RED.filled())))?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// Writes `<stem>_accuracy.svg`, `<stem>_loss.svg` and the plotted series as
/// `<stem>_curves.csv` into `out_dir`.
pub fn render_curves(logs: &[EpochLog], out_dir: &Path, stem: &str) -> Result<CurveFiles, EvalError> {
    if logs.is_empty() {
        return Err(EvalError::Empty);
    }
    let out_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e: Box<dyn std::error::Error>| EvalError::Output {
            path,
            message: e.to_string(),
        }
    };
    std::fs::create_dir_all(out_dir).map_err(|e| out_err(out_dir)(e.into()))?;
    let files = CurveFiles {
        accuracy: out_dir.join(format!("{stem}_accuracy.svg")),
        loss: out_dir.join(format!("{stem}_loss.svg")),
        data: out_dir.join(format!("{stem}_curves.csv")),
    };
    let series = |f: fn(&EpochLog) -> f64| -> Vec<(f64, f64)> {
        logs.iter().map(|l| (l.epoch as f64, f(l))).collect()
    };
    plot(
        &files.accuracy,
        "Accuracy",
        "accuracy",
        &series(|l| l.train_acc),
        &series(|l| l.val_acc),
    )
    .map_err(out_err(&files.accuracy))?;
    plot(
        &files.loss,
        "Loss",
        "loss",
        &series(|l| l.train_loss),
        &series(|l| l.val_loss),
    )
    .map_err(out_err(&files.loss))?;
    let mut csv = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for l in logs {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            l.epoch, l.train_loss, l.train_acc, l.val_loss, l.val_acc
        );
    }
    std::fs::write(&files.data, csv).map_err(|e| out_err(&files.data)(e.into()))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(counts: [[u64; 2]; 2]) -> ConfusionMatrix {
        ConfusionMatrix {
            counts,
            class_names: ["Mary".into(), "Gabriel".into()],
        }
    }

    #[test]
    fn perfect_and_degenerate_predictions() {
        let labels: Vec<usize> = (0..200).map(|i| i / 100).collect();
        let c = confusion(&labels, &labels, ["Mary", "Gabriel"]).unwrap();
        assert_eq!(c.counts, [[100, 0], [0, 100]]);
        let zeros = vec![0; 200];
        let c = confusion(&zeros, &labels, ["Mary", "Gabriel"]).unwrap();
        assert_eq!(c.counts, [[100, 0], [100, 0]]);
        let m = metrics(&c, "m", "d").unwrap();
        assert_eq!(m.per_class[1].precision, 0.0);
        assert_eq!(m.flags.len(), 1);
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(
            confusion(&[0, 1], &[0], ["a", "b"]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&[0], &[2], ["a", "b"]),
            Err(EvalError::UnknownLabel { value: 2, .. })
        ));
        assert!(matches!(metrics(&cm([[0, 0], [0, 0]]), "m", "d"), Err(EvalError::EmptyMatrix)));
    }

    #[test]
    fn hand_computed_metrics() {
        let m = metrics(&cm([[50, 0], [0, 50]]), "m", "d").unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
        let m = metrics(&cm([[30, 20], [20, 30]]), "m", "d").unwrap();
        assert!((m.accuracy - 0.6).abs() < 1e-12);
        assert!((m.precision - 0.6).abs() < 1e-12);
        assert!((m.recall - 0.6).abs() < 1e-12);
    }

    #[test]
    fn forty_three_errors_render_as_079() {
        let m = metrics(&cm([[80, 20], [23, 77]]), "m", "d").unwrap();
        assert_eq!(m.accuracy, 0.785);
        assert_eq!(format_metric(m.accuracy), "0.79");
    }

    #[test]
    fn tie_bolds_first_row_and_single_row_renders() {
        let a = MetricsReport::reported("a", 0, 0.5, 0.5, 0.5, 0.7);
        let b = MetricsReport::reported("b", 1, 0.6, 0.6, 0.6, 0.7);
        let t = render_table(&[b.clone(), a.clone()], TableLayout::Body).unwrap();
        assert!(t.text.contains("| **a** "));
        assert!(!t.text.contains("**b**"));
        assert!(t.csv.contains("a,0.50,0.50,0.50,0.70,true"));
        let single = render_table(&[a], TableLayout::Face).unwrap();
        assert_eq!(single.csv.lines().count(), 2);
        assert!(matches!(render_table(&[], TableLayout::Face), Err(EvalError::Empty)));
    }
}
