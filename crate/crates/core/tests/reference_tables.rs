//! Stored reference results rendered through the table writer must match the
//! checked-in golden files byte for byte.

use std::path::PathBuf;

use icono_core::eval::{render_table, MetricsReport, TableLayout};

/// (label, pr, re, f1, acc)
type Row = (&'static str, f64, f64, f64, f64);

pub const FACE_ROWS: [Row; 4] = [
    ("Random Forests (200 est.)", 0.75, 0.75, 0.75, 0.75),
    ("Logistic Regression", 0.70, 0.68, 0.68, 0.68),
    ("SVM (Linear, C = 100)", 0.78, 0.78, 0.78, 0.78),
    ("SVM (RBF, C = 1000, γ = 0.01)", 0.80, 0.79, 0.79, 0.79),
];

pub const BODY_ROWS: [Row; 7] = [
    ("Random Forests (200 est.)", 0.59, 0.56, 0.54, 0.59),
    ("Logistic Regression", 0.68, 0.68, 0.68, 0.69),
    ("SVM (Linear, C = 10)", 0.68, 0.68, 0.68, 0.68),
    ("SVM (RBF, C = 1000, γ = 0.01)", 0.70, 0.70, 0.71, 0.71),
    ("Finetune-A", 0.77, 0.70, 0.73, 0.72),
    ("Finetune-B", 0.53, 0.49, 0.51, 0.49),
    ("Finetune-C", 0.84, 0.76, 0.79, 0.79),
];

fn reports(rows: &[Row]) -> Vec<MetricsReport> {
    rows.iter()
        .enumerate()
        .map(|(i, &(l, p, r, f, a))| MetricsReport::reported(l, i as u32, p, r, f, a))
        .collect()
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check(rows: &[Row], layout: TableLayout, stem: &str) {
    let t = render_table(&reports(rows), layout).unwrap();
    let (md, csv) = (golden(&format!("{stem}.md")), golden(&format!("{stem}.csv")));
    if std::env::var_os("ICONO_BLESS").is_some() {
        std::fs::write(&md, &t.text).unwrap();
        std::fs::write(&csv, &t.csv).unwrap();
    }
    assert_eq!(t.text, std::fs::read_to_string(md).unwrap());
    assert_eq!(t.csv, std::fs::read_to_string(csv).unwrap());
}

#[test]
fn face_reference_table_matches_golden() {
    check(&FACE_ROWS, TableLayout::Face, "reference_face");
}

#[test]
fn body_reference_table_matches_golden() {
    check(&BODY_ROWS, TableLayout::Body, "reference_body");
}

/// Reads the golden CSV back and compares it cell by cell with the stored
/// values, independently of the renderer.
#[test]
fn golden_csv_cells_equal_stored_values() {
    for (rows, stem, best) in [
        (&FACE_ROWS[..], "reference_face", 3),
        (&BODY_ROWS[..], "reference_body", 6),
    ] {
        let text = std::fs::read_to_string(golden(&format!("{stem}.csv"))).unwrap();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(r.headers().unwrap(), vec!["model", "pr", "re", "f1", "acc", "best"]);
        let recs: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(recs.len(), rows.len());
        for (i, (rec, &(l, p, re, f, a))) in recs.iter().zip(rows).enumerate() {
            assert_eq!(&rec[0], l);
            for (cell, v) in rec.iter().skip(1).zip([p, re, f, a]) {
                assert_eq!(cell, format!("{:.2}", v));
            }
            assert_eq!(&rec[5] == "true", i == best, "{stem} row {i}");
        }
    }
}
