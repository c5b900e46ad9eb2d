//! COCO annotation I/O: ground-truth datasets, scored prediction files,
//! pseudo-label export.
//!
//! A dataset file carries top-level `images`, `annotations` and `categories`
//! keys; a prediction (results) file is a flat JSON array of
//! `{image_id, category_id, bbox, score}` records. `bbox` is `[x, y, w, h]`,
//! accepted as integers or reals and always written as reals. Unknown fields
//! on dataset records are kept and written back out; unknown fields on
//! prediction records are dropped with a warning on stderr. Validation never
//! fails because of an unknown field.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geometry::BBox;

pub type ImageId = i64;
pub type CategoryId = i64;
pub type AnnotationId = i64;

/// The 24 uppercase Greek letters in alphabet order. Only these categories
/// count toward evaluation; apostrophes and periods are annotated but ignored.
pub const GREEK_LETTERS: [char; 24] = [
    'Α', 'Β', 'Γ', 'Δ', 'Ε', 'Ζ', 'Η', 'Θ', 'Ι', 'Κ', 'Λ', 'Μ', 'Ν', 'Ξ', 'Ο', 'Π', 'Ρ', 'Σ', 'Τ',
    'Υ', 'Φ', 'Χ', 'Ψ', 'Ω',
];

pub const APOSTROPHE_NAME: &str = "APOSTROPHE";
pub const PERIOD_NAME: &str = "PERIOD";

#[derive(Debug, Error)]
pub enum CocoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("annotation {annotation_id} references unknown image {image_id}")]
    DanglingImage {
        annotation_id: AnnotationId,
        image_id: ImageId,
    },
    #[error("annotation {annotation_id} references unknown category {category_id}")]
    DanglingCategory {
        annotation_id: AnnotationId,
        category_id: CategoryId,
    },
    #[error("prediction record {index} references unknown image {image_id}")]
    PredictionDanglingImage { index: usize, image_id: ImageId },
    #[error("prediction record {index} references unknown category {category_id}")]
    PredictionDanglingCategory {
        index: usize,
        category_id: CategoryId,
    },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: i64 },
    #[error("prediction record {index} has score {score} outside [0, 1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("{kind} {id} has invalid bbox [{x}, {y}, {w}, {h}]")]
    InvalidBox {
        kind: &'static str,
        id: i64,
        x: f64,
        y: f64,
        w: f64,
        h: f64,
    },
    #[error("image {id} has non-positive size {width}x{height}")]
    InvalidImageSize {
        id: ImageId,
        width: i64,
        height: i64,
    },
}

/// One category entry. `evaluated` is not part of the file format: it is
/// derived from the name on load (true exactly for the 24 Greek letters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    #[serde(skip)]
    pub evaluated: bool,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Category {
    pub fn new(id: CategoryId, name: impl Into<String>) -> Self {
        let name = name.into();
        let evaluated = is_greek_letter(&name);
        Self {
            id,
            name,
            evaluated,
            extra: Map::new(),
        }
    }
}

fn is_greek_letter(name: &str) -> bool {
    let mut chars = name.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => GREEK_LETTERS.contains(&c),
        _ => false,
    }
}

/// Category id/name lookup table with evaluation flags.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryTable {
    pub entries: Vec<Category>,
}

impl CategoryTable {
    /// The table shipped by default: Greek letters Α…Ω as ids 1–24 in
    /// alphabet order, then APOSTROPHE (25) and PERIOD (26).
    pub fn default_greek() -> Self {
        let mut entries: Vec<Category> = GREEK_LETTERS
            .iter()
            .enumerate()
            .map(|(i, c)| Category::new(i as CategoryId + 1, c.to_string()))
            .collect();
        entries.push(Category::new(25, APOSTROPHE_NAME));
        entries.push(Category::new(26, PERIOD_NAME));
        Self { entries }
    }

    pub fn get(&self, id: CategoryId) -> Option<&Category> {
        self.entries.iter().find(|c| c.id == id)
    }

    pub fn contains(&self, id: CategoryId) -> bool {
        self.get(id).is_some()
    }

    /// Ids of evaluated categories in ascending order.
    pub fn evaluated_ids(&self) -> Vec<CategoryId> {
        let mut ids: Vec<CategoryId> = self
            .entries
            .iter()
            .filter(|c| c.evaluated)
            .map(|c| c.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// The character a category renders to in a transcript: single-character
    /// names render as themselves, APOSTROPHE as `'` and PERIOD as `.`.
    pub fn glyph(&self, id: CategoryId) -> Option<char> {
        let cat = self.get(id)?;
        let mut chars = cat.name.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Some(c),
            _ => match cat.name.as_str() {
                APOSTROPHE_NAME => Some('\''),
                PERIOD_NAME => Some('.'),
                _ => None,
            },
        }
    }

    fn validate(&self) -> Result<(), CocoError> {
        let mut seen = HashSet::new();
        for cat in &self.entries {
            if cat.id <= 0 {
                return Err(CocoError::Schema(format!(
                    "category {} has non-positive id",
                    cat.id
                )));
            }
            if !seen.insert(cat.id) {
                return Err(CocoError::DuplicateId {
                    kind: "category",
                    id: cat.id,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub file_name: String,
    pub width: i64,
    pub height: i64,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(id: ImageId, file_name: impl Into<String>, width: i64, height: i64) -> Self {
        Self {
            id,
            file_name: file_name.into(),
            width,
            height,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: AnnotationId,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Annotation {
    pub fn new(id: AnnotationId, image_id: ImageId, category_id: CategoryId, bbox: BBox) -> Self {
        Self {
            id,
            image_id,
            category_id,
            bbox,
            extra: Map::new(),
        }
    }
}

/// A ground-truth dataset: images, category table, box annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: CategoryTable,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Dataset {
    pub fn new(images: Vec<ImageRecord>, categories: CategoryTable) -> Self {
        Self {
            images,
            annotations: Vec::new(),
            categories,
            extra: Map::new(),
        }
    }

    /// Check all structural invariants; errors name the offending record id.
    pub fn validate(&self) -> Result<(), CocoError> {
        self.categories.validate()?;
        let mut image_ids = HashSet::new();
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(CocoError::DuplicateId {
                    kind: "image",
                    id: img.id,
                });
            }
            if img.width <= 0 || img.height <= 0 {
                return Err(CocoError::InvalidImageSize {
                    id: img.id,
                    width: img.width,
                    height: img.height,
                });
            }
        }
        let category_ids: HashSet<CategoryId> =
            self.categories.entries.iter().map(|c| c.id).collect();
        let mut ann_ids = HashSet::new();
        for ann in &self.annotations {
            if !ann_ids.insert(ann.id) {
                return Err(CocoError::DuplicateId {
                    kind: "annotation",
                    id: ann.id,
                });
            }
            if !image_ids.contains(&ann.image_id) {
                return Err(CocoError::DanglingImage {
                    annotation_id: ann.id,
                    image_id: ann.image_id,
                });
            }
            if !category_ids.contains(&ann.category_id) {
                return Err(CocoError::DanglingCategory {
                    annotation_id: ann.id,
                    category_id: ann.category_id,
                });
            }
            if !ann.bbox.is_valid() {
                return Err(CocoError::InvalidBox {
                    kind: "annotation",
                    id: ann.id,
                    x: ann.bbox.x,
                    y: ann.bbox.y,
                    w: ann.bbox.w,
                    h: ann.bbox.h,
                });
            }
        }
        Ok(())
    }

    /// Annotations grouped by image id, in file order within each image.
    pub fn annotations_by_image(&self) -> BTreeMap<ImageId, Vec<&Annotation>> {
        let mut out: BTreeMap<ImageId, Vec<&Annotation>> = BTreeMap::new();
        for ann in &self.annotations {
            out.entry(ann.image_id).or_default().push(ann);
        }
        out
    }

    /// View the annotations as a prediction set with a uniform score.
    pub fn to_prediction_set(&self, score: f64) -> PredictionSet {
        PredictionSet::from_records(
            self.annotations
                .iter()
                .map(|a| (a.image_id, ScoredBox::new(a.bbox, a.category_id, score))),
        )
    }
}

/// A detection with class label and confidence: the atom of every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub category_id: CategoryId,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, category_id: CategoryId, score: f64) -> Self {
        Self {
            bbox,
            category_id,
            score,
        }
    }
}

/// On-disk form of one prediction record.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRecord {
    image_id: ImageId,
    category_id: CategoryId,
    bbox: BBox,
    score: f64,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Scored model outputs grouped by image. Iteration order is canonical:
/// ascending image id, file order within an image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    by_image: BTreeMap<ImageId, Vec<ScoredBox>>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, image_id: ImageId, sb: ScoredBox) {
        self.by_image.entry(image_id).or_default().push(sb);
    }

    pub fn from_records(records: impl IntoIterator<Item = (ImageId, ScoredBox)>) -> Self {
        let mut set = Self::new();
        for (id, sb) in records {
            set.push(id, sb);
        }
        set
    }

    pub fn image_ids(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.by_image.keys().copied()
    }

    pub fn boxes(&self, image_id: ImageId) -> &[ScoredBox] {
        self.by_image
            .get(&image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ImageId, &[ScoredBox])> {
        self.by_image.iter().map(|(id, v)| (*id, v.as_slice()))
    }

    /// All records in canonical order.
    pub fn flat_iter(&self) -> impl Iterator<Item = (ImageId, &ScoredBox)> {
        self.by_image
            .iter()
            .flat_map(|(id, v)| v.iter().map(move |sb| (*id, sb)))
    }

    /// Total box count over all images.
    pub fn len(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_count(&self) -> usize {
        self.by_image.len()
    }

    /// Validate scores, boxes, and (when a dataset is supplied) referential
    /// integrity of image and category ids. Indices refer to canonical order.
    pub fn validate(&self, dataset: Option<&Dataset>) -> Result<(), CocoError> {
        let image_ids: Option<BTreeSet<ImageId>> =
            dataset.map(|d| d.images.iter().map(|i| i.id).collect());
        let category_ids: Option<BTreeSet<CategoryId>> =
            dataset.map(|d| d.categories.entries.iter().map(|c| c.id).collect());
        for (index, (image_id, sb)) in self.flat_iter().enumerate() {
            if !(0.0..=1.0).contains(&sb.score) || !sb.score.is_finite() {
                return Err(CocoError::ScoreOutOfRange {
                    index,
                    score: sb.score,
                });
            }
            if !sb.bbox.is_valid() {
                return Err(CocoError::InvalidBox {
                    kind: "prediction",
                    id: index as i64,
                    x: sb.bbox.x,
                    y: sb.bbox.y,
                    w: sb.bbox.w,
                    h: sb.bbox.h,
                });
            }
            if let Some(ids) = &image_ids {
                if !ids.contains(&image_id) {
                    return Err(CocoError::PredictionDanglingImage { index, image_id });
                }
            }
            if let Some(ids) = &category_ids {
                if !ids.contains(&sb.category_id) {
                    return Err(CocoError::PredictionDanglingCategory {
                        index,
                        category_id: sb.category_id,
                    });
                }
            }
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<String, CocoError> {
    fs::read_to_string(path).map_err(|source| CocoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CocoError> {
    fs::write(path, contents).map_err(|source| CocoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load and validate a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, CocoError> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let mut ds: Dataset = serde_json::from_str(&text).map_err(|source| CocoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    for cat in &mut ds.categories.entries {
        cat.evaluated = is_greek_letter(&cat.name);
    }
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset as pretty-printed COCO JSON.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), CocoError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(ds).map_err(|source| CocoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    write_file(path, &text)
}

/// Load a COCO results file. When `dataset` is given, image and category
/// ids are checked against it.
pub fn load_predictions(
    path: impl AsRef<Path>,
    dataset: Option<&Dataset>,
) -> Result<PredictionSet, CocoError> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let records: Vec<PredictionRecord> =
        serde_json::from_str(&text).map_err(|source| CocoError::Json {
            path: path.display().to_string(),
            source,
        })?;
    let dropped: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.extra.is_empty())
        .map(|(i, _)| i)
        .collect();
    if !dropped.is_empty() {
        eprintln!(
            "warning: {}: dropped unknown fields on {} prediction record(s) (first at index {})",
            path.display(),
            dropped.len(),
            dropped[0]
        );
    }
    for (index, rec) in records.iter().enumerate() {
        if !(0.0..=1.0).contains(&rec.score) || !rec.score.is_finite() {
            return Err(CocoError::ScoreOutOfRange {
                index,
                score: rec.score,
            });
        }
    }
    let preds = PredictionSet::from_records(
        records
            .into_iter()
            .map(|r| (r.image_id, ScoredBox::new(r.bbox, r.category_id, r.score))),
    );
    preds.validate(dataset)?;
    Ok(preds)
}

/// Write predictions as a flat COCO results array in canonical order.
pub fn write_predictions(preds: &PredictionSet, path: impl AsRef<Path>) -> Result<(), CocoError> {
    let path = path.as_ref();
    let records: Vec<PredictionRecord> = preds
        .flat_iter()
        .map(|(image_id, sb)| PredictionRecord {
            image_id,
            category_id: sb.category_id,
            bbox: sb.bbox,
            score: sb.score,
            extra: Map::new(),
        })
        .collect();
    let text = serde_json::to_string_pretty(&records).map_err(|source| CocoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    write_file(path, &text)
}

/// Promote confident predictions to annotations. Every prediction with
/// `score >= min_conf` becomes an annotation (score discarded); annotation
/// ids are assigned densely from 1 in canonical prediction order.
pub fn export_pseudo_labels(
    preds: &PredictionSet,
    min_conf: f64,
    images: Vec<ImageRecord>,
    categories: CategoryTable,
) -> Dataset {
    let mut ds = Dataset::new(images, categories);
    let mut next_id: AnnotationId = 1;
    for (image_id, sb) in preds.flat_iter() {
        if sb.score >= min_conf {
            ds.annotations
                .push(Annotation::new(next_id, image_id, sb.category_id, sb.bbox));
            next_id += 1;
        }
    }
    ds
}
