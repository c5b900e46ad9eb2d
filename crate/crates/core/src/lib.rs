//! Post-detection tooling for character-level manuscript pipelines: fuse
//! multi-model detections, merge recognition votes, recover reading order,
//! render transcripts, and score predictions with COCO-style metrics.
//!
//! The crate is organized around the stages a prediction file moves through:
//!
//! - [`geometry`] — box arithmetic (IoU, feathering)
//! - [`coco`] — dataset / prediction file I/O and pseudo-label export
//! - [`fusion`] — weighted boxes fusion, confidence filtering, overlap
//!   suppression
//! - [`ensemble`] — majority voting and vote-proportional confidence splits
//! - [`layout`] — line and paragraph recovery from recognized boxes
//! - [`transcript`] — plain-text / TEI rendering and wildcard search
//! - [`eval`] — mAP / mAR scoring and confusion matrices
//! - [`synth`] — deterministic synthetic scenes and noisy detector output

pub mod coco;
pub mod ensemble;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod layout;
pub mod synth;
pub mod transcript;

pub use coco::{
    load_dataset, load_predictions, write_dataset, write_predictions, CategoryTable, CocoError,
    Dataset, PredictionSet, ScoredBox,
};
pub use geometry::{feather, iou, BBox};
