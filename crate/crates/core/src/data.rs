//! Corpus contract: manifests, bounding boxes, crops and deterministic splits.
//!
//! A record is one character crop. A scene showing both characters contributes
//! two records that share an `image_path`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable consulted when `--data-root` is not given.
pub const DATA_ROOT_ENV: &str = "ICONO_DATA_ROOT";

pub const ANNOTATED_HEADER: [&str; 11] = [
    "image_id", "image_path", "character", "body_x", "body_y", "body_w", "body_h", "face_x",
    "face_y", "face_w", "face_h",
];
pub const CONTENT_HEADER: [&str; 3] = ["image_id", "image_path", "gender"];
pub const STYLED_HEADER: [&str; 5] = ["image_id", "image_path", "gender", "style_id", "content_id"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed csv: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: {} invalid row(s): {}", .errors.len(), summarize(.errors))]
    InvalidRows { path: PathBuf, errors: Vec<RowError> },
    #[error("box {bbox} does not fit a {width}x{height} image")]
    BoxOutOfBounds {
        bbox: BoundingBox,
        width: u32,
        height: u32,
    },
    #[error("box must have positive width and height, got {0}")]
    EmptyBox(BoundingBox),
    #[error("class {class} has {available} records but {requested} are needed for the test split")]
    InsufficientClassCount {
        class: String,
        available: usize,
        requested: usize,
    },
    #[error("cannot decode image {path}: {message}")]
    UndecodableImage { path: PathBuf, message: String },
}

fn summarize(errors: &[RowError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// One rejected manifest row. `row` is the 1-based line number in the file
/// (the header is line 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub row: usize,
    pub kind: RowErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowErrorKind {
    BadLabel { column: String, value: String },
    BadNumber { column: String, value: String },
    EmptyBox { column: String },
    BoxOutOfBounds { bbox: BoundingBox, width: u32, height: u32 },
    MissingImage { path: PathBuf },
    DuplicateId { image_id: String },
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: ", self.row)?;
        match &self.kind {
            RowErrorKind::BadLabel { column, value } => {
                write!(f, "bad label `{value}` in column {column}")
            }
            RowErrorKind::BadNumber { column, value } => {
                write!(f, "bad number `{value}` in column {column}")
            }
            RowErrorKind::EmptyBox { column } => write!(f, "{column} box has zero extent"),
            RowErrorKind::BoxOutOfBounds { bbox, width, height } => {
                write!(f, "box {bbox} outside {width}x{height} image")
            }
            RowErrorKind::MissingImage { path } => write!(f, "image {} not found", path.display()),
            RowErrorKind::DuplicateId { image_id } => write!(f, "duplicate image_id {image_id}"),
        }
    }
}

/// Axis-aligned pixel rectangle; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self, DataError> {
        let b = Self { x, y, w, h };
        if w == 0 || h == 0 {
            return Err(DataError::EmptyBox(b));
        }
        Ok(b)
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }

    /// Maps a box given relative to this box's window into the parent frame.
    pub fn compose(&self, inner: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x: self.x + inner.x,
            y: self.y + inner.y,
            w: inner.w,
            h: inner.h,
        }
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x, self.y, self.w, self.h)
    }
}

/// The two protagonists. The discriminant is the class index used by every
/// model (Mary = 0, Gabriel = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Character {
    Mary,
    Gabriel,
}

impl Character {
    pub const ALL: [Character; 2] = [Character::Mary, Character::Gabriel];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Character::Mary => "Mary",
            Character::Gabriel => "Gabriel",
        }
    }
}

impl FromStr for Character {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mary" => Ok(Character::Mary),
            "gabriel" => Ok(Character::Gabriel),
            _ => Err(s.to_string()),
        }
    }
}

/// Content-image label. Female = 0, Male = 1, index-aligned with [`Character`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

impl FromStr for Gender {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            _ => Err(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub character: Character,
    pub body_box: BoundingBox,
    pub face_box: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub gender: Gender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    Annotated,
    Content,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Records {
    Annotated(Vec<AnnotatedRecord>),
    Content(Vec<ContentRecord>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Annotated(r) => r.len(),
            Records::Content(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Directory that all manifest paths are relative to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataRoot(PathBuf);

impl DataRoot {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self(path.into())
    }

    /// `flag` wins over the environment variable; falls back to the working directory.
    pub fn from_flag_or_env(flag: Option<PathBuf>) -> Self {
        match flag {
            Some(p) => Self(p),
            None => match std::env::var_os(DATA_ROOT_ENV) {
                Some(p) => Self(PathBuf::from(p)),
                None => Self(PathBuf::from(".")),
            },
        }
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.0.join(relative)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_json()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = read_to_string(path)?;
        Self::from_json(&text).map_err(|e| DataError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn partition<'a>(
        &self,
        records: &'a [AnnotatedRecord],
    ) -> (Vec<&'a AnnotatedRecord>, Vec<&'a AnnotatedRecord>) {
        records
            .iter()
            .filter(|r| self.train_ids.contains(&r.image_id) || self.test_ids.contains(&r.image_id))
            .partition(|r| self.train_ids.contains(&r.image_id))
    }
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a manifest of either kind. Row-level problems are gathered and
/// returned together as [`DataError::InvalidRows`].
///
/// When `root` is given, every referenced image must exist and every box must
/// fit inside it; only image headers are read for this.
pub fn load_manifest(
    path: &Path,
    kind: ManifestKind,
    root: Option<&DataRoot>,
) -> Result<Records, DataError> {
    match kind {
        ManifestKind::Annotated => load_annotated(path, root).map(Records::Annotated),
        ManifestKind::Content => load_content(path, root).map(Records::Content),
    }
}

struct Table {
    path: PathBuf,
    columns: BTreeMap<String, usize>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path, required: &[&str]) -> Result<Self, DataError> {
        let bytes = std::fs::read(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(bytes.as_slice());
        let csv_err = |e: csv::Error| DataError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let headers = reader.headers().map_err(csv_err)?.clone();
        let columns: BTreeMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        for col in required {
            if !columns.contains_key(*col) {
                return Err(DataError::MissingColumn {
                    path: path.to_path_buf(),
                    column: (*col).to_string(),
                });
            }
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            rows.push((line, rec));
        }
        Ok(Self {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn field<'r>(&self, rec: &'r csv::StringRecord, column: &str) -> &'r str {
        self.columns
            .get(column)
            .and_then(|&i| rec.get(i))
            .unwrap_or("")
    }
}

struct RowCheck {
    errors: Vec<RowError>,
    seen: HashSet<String>,
}

impl RowCheck {
    fn new() -> Self {
        Self {
            errors: Vec::new(),
            seen: HashSet::new(),
        }
    }

    fn push(&mut self, row: usize, kind: RowErrorKind) {
        self.errors.push(RowError { row, kind });
    }

    fn id(&mut self, row: usize, id: &str) {
        if !self.seen.insert(id.to_string()) {
            self.push(
                row,
                RowErrorKind::DuplicateId {
                    image_id: id.to_string(),
                },
            );
        }
    }

    fn image_dims(&mut self, row: usize, root: Option<&DataRoot>, rel: &Path) -> Option<(u32, u32)> {
        let root = root?;
        let full = root.resolve(rel);
        match image::image_dimensions(&full) {
            Ok(d) => Some(d),
            Err(_) => {
                self.push(row, RowErrorKind::MissingImage { path: full });
                None
            }
        }
    }

    fn finish<T>(self, path: &Path, records: Vec<T>) -> Result<Vec<T>, DataError> {
        if self.errors.is_empty() {
            Ok(records)
        } else {
            Err(DataError::InvalidRows {
                path: path.to_path_buf(),
                errors: self.errors,
            })
        }
    }
}

fn parse_box(
    table: &Table,
    rec: &csv::StringRecord,
    row: usize,
    prefix: &str,
    optional: bool,
    check: &mut RowCheck,
) -> Option<Option<BoundingBox>> {
    let cols = ["x", "y", "w", "h"].map(|c| format!("{prefix}_{c}"));
    let raw: Vec<&str> = cols.iter().map(|c| table.field(rec, c)).collect();
    if optional && raw.iter().all(|v| v.is_empty()) {
        return Some(None);
    }
    let mut vals = [0u32; 4];
    let mut ok = true;
    for (i, v) in raw.iter().enumerate() {
        match v.parse::<u32>() {
            Ok(n) => vals[i] = n,
            Err(_) => {
                check.push(
                    row,
                    RowErrorKind::BadNumber {
                        column: cols[i].clone(),
                        value: v.to_string(),
                    },
                );
                ok = false;
            }
        }
    }
    if !ok {
        return None;
    }
    match BoundingBox::new(vals[0], vals[1], vals[2], vals[3]) {
        Ok(b) => Some(Some(b)),
        Err(_) => {
            check.push(
                row,
                RowErrorKind::EmptyBox {
                    column: prefix.to_string(),
                },
            );
            None
        }
    }
}

pub fn load_annotated(path: &Path, root: Option<&DataRoot>) -> Result<Vec<AnnotatedRecord>, DataError> {
    let table = Table::read(path, &ANNOTATED_HEADER)?;
    let mut check = RowCheck::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (row, rec) in &table.rows {
        let row = *row;
        let image_id = table.field(rec, "image_id").to_string();
        check.id(row, &image_id);
        let image_path = PathBuf::from(table.field(rec, "image_path"));
        let label = table.field(rec, "character");
        let character = match label.parse::<Character>() {
            Ok(c) => Some(c),
            Err(value) => {
                check.push(
                    row,
                    RowErrorKind::BadLabel {
                        column: "character".into(),
                        value,
                    },
                );
                None
            }
        };
        let body = parse_box(&table, rec, row, "body", false, &mut check).flatten();
        let face = parse_box(&table, rec, row, "face", true, &mut check);
        if let Some((w, h)) = check.image_dims(row, root, &image_path) {
            for b in body.iter().chain(face.iter().flatten()) {
                if !b.fits(w, h) {
                    check.push(
                        row,
                        RowErrorKind::BoxOutOfBounds {
                            bbox: *b,
                            width: w,
                            height: h,
                        },
                    );
                }
            }
        }
        if let (Some(character), Some(body_box), Some(face_box)) = (character, body, face) {
            out.push(AnnotatedRecord {
                image_id,
                image_path,
                character,
                body_box,
                face_box,
            });
        }
    }
    check.finish(&table.path, out)
}

pub fn load_content(path: &Path, root: Option<&DataRoot>) -> Result<Vec<ContentRecord>, DataError> {
    let table = Table::read(path, &CONTENT_HEADER)?;
    let mut check = RowCheck::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (row, rec) in &table.rows {
        let row = *row;
        let image_id = table.field(rec, "image_id").to_string();
        check.id(row, &image_id);
        let image_path = PathBuf::from(table.field(rec, "image_path"));
        check.image_dims(row, root, &image_path);
        match table.field(rec, "gender").parse::<Gender>() {
            Ok(gender) => out.push(ContentRecord {
                image_id,
                image_path,
                gender,
            }),
            Err(value) => check.push(
                row,
                RowErrorKind::BadLabel {
                    column: "gender".into(),
                    value,
                },
            ),
        }
    }
    check.finish(&table.path, out)
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    w.write_record(header).map_err(|e| io(e.into()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

pub fn write_annotated(path: &Path, records: &[AnnotatedRecord]) -> Result<(), DataError> {
    write_csv(
        path,
        &ANNOTATED_HEADER,
        records.iter().map(|r| {
            let b = r.body_box;
            let face = match r.face_box {
                Some(f) => [f.x, f.y, f.w, f.h].map(|v| v.to_string()),
                None => Default::default(),
            };
            let mut row = vec![
                r.image_id.clone(),
                path_str(&r.image_path),
                r.character.as_str().to_string(),
                b.x.to_string(),
                b.y.to_string(),
                b.w.to_string(),
                b.h.to_string(),
            ];
            row.extend(face);
            row
        }),
    )
}

pub fn write_content(path: &Path, records: &[ContentRecord]) -> Result<(), DataError> {
    write_csv(
        path,
        &CONTENT_HEADER,
        records.iter().map(|r| {
            vec![
                r.image_id.clone(),
                path_str(&r.image_path),
                r.gender.as_str().to_string(),
            ]
        }),
    )
}

/// Writes a styled-dataset manifest: the content schema plus provenance columns.
pub fn write_styled(path: &Path, rows: &[(ContentRecord, String, String)]) -> Result<(), DataError> {
    write_csv(
        path,
        &STYLED_HEADER,
        rows.iter().map(|(r, style_id, content_id)| {
            vec![
                r.image_id.clone(),
                path_str(&r.image_path),
                r.gender.as_str().to_string(),
                style_id.clone(),
                content_id.clone(),
            ]
        }),
    )
}

/// Decodes an image file to 8-bit RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage, DataError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| DataError::UndecodableImage {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Copies the pixels under `bbox` into a new image of size `(bbox.w, bbox.h)`.
pub fn crop_region(image: &RgbImage, bbox: &BoundingBox) -> Result<RgbImage, DataError> {
    if !bbox.fits(image.width(), image.height()) {
        return Err(DataError::BoxOutOfBounds {
            bbox: *bbox,
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(image::imageops::crop_imm(image, bbox.x, bbox.y, bbox.w, bbox.h).to_image())
}

/// Holds out exactly `test_per_class` records of each character, sampled
/// uniformly under `seed`. Records are ordered by `image_id` before sampling
/// so the result does not depend on manifest row order.
pub fn split_dataset(
    records: &[AnnotatedRecord],
    test_per_class: usize,
    seed: u64,
) -> Result<SplitAssignment, DataError> {
    let mut by_class: BTreeMap<Character, Vec<&str>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.character).or_default().push(&r.image_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = BTreeSet::new();
    let mut test_ids = BTreeSet::new();
    for class in Character::ALL {
        let mut ids = by_class.remove(&class).unwrap_or_default();
        if ids.len() < test_per_class {
            return Err(DataError::InsufficientClassCount {
                class: class.as_str().to_string(),
                available: ids.len(),
                requested: test_per_class,
            });
        }
        ids.sort_unstable();
        let picked: BTreeSet<usize> =
            rand::seq::index::sample(&mut rng, ids.len(), test_per_class).into_iter().collect();
        for (i, id) in ids.into_iter().enumerate() {
            if picked.contains(&i) {
                test_ids.insert(id.to_string());
            } else {
                train_ids.insert(id.to_string());
            }
        }
    }
    Ok(SplitAssignment {
        train_ids,
        test_ids,
        seed,
    })
}

/// Stratified fractional split used for the styled set and for validation
/// carving. Returns `(kept, held_out)` index lists, both sorted.
///
/// Each class holds out `round(n * fraction)` items, at least one when the
/// class has two or more items, and never all of them.
pub fn stratified_holdout(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = BTreeSet::new();
    for idx in by_class.values() {
        let n = idx.len();
        let mut k = (n as f64 * fraction).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        } else {
            k = 0;
        }
        for j in rand::seq::index::sample(&mut rng, n, k) {
            held.insert(idx[j]);
        }
    }
    let kept = (0..labels.len()).filter(|i| !held.contains(i)).collect();
    (kept, held.into_iter().collect())
}
