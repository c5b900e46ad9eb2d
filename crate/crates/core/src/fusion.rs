//! Per-image detection ensembling: weighted boxes fusion, confidence
//! filtering, and greedy overlap suppression.
//!
//! Fusion is per-class: boxes with different category ids never merge.
//! Candidate boxes are visited in descending score order (ties broken by
//! larger area, then lower model index, then input index) and each joins the
//! first cluster whose *running fused box* — recomputed after every join —
//! overlaps it with IoU above the match threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{CategoryId, ScoredBox};
use crate::geometry::{iou, BBox};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("config declares {declared} models but {supplied} per-model lists were supplied")]
    ModelCountMismatch { declared: usize, supplied: usize },
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

/// How a cluster's mean score is rescaled by its support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRescaleMode {
    /// Multiply by `N / T`; can exceed the mean when one model
    /// double-detects, so the result is clamped to 1.
    Proportional,
    /// Multiply by `min(N, T) / T`.
    #[default]
    Clipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// A candidate joins a cluster when IoU with its running fused box
    /// exceeds this. In (0, 1).
    pub iou_match_threshold: f64,
    /// Input boxes scoring below this are discarded before clustering.
    pub skip_box_threshold: f64,
    /// Number of models being fused (T).
    pub model_count: usize,
    pub score_rescale_mode: ScoreRescaleMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iou_match_threshold: 0.55,
            skip_box_threshold: 0.0,
            model_count: 1,
            score_rescale_mode: ScoreRescaleMode::default(),
        }
    }
}

impl FusionConfig {
    pub fn for_models(model_count: usize) -> Self {
        Self {
            model_count,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), FusionError> {
        if !(self.iou_match_threshold > 0.0 && self.iou_match_threshold < 1.0) {
            return Err(FusionError::InvalidConfig(format!(
                "iou_match_threshold {} outside (0, 1)",
                self.iou_match_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.skip_box_threshold) {
            return Err(FusionError::InvalidConfig(format!(
                "skip_box_threshold {} outside [0, 1]",
                self.skip_box_threshold
            )));
        }
        if self.model_count == 0 {
            return Err(FusionError::InvalidConfig(
                "model_count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One input box's contribution to a fused cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contributor {
    pub model: usize,
    pub score: f64,
}

/// A cluster of mutually matching detections collapsed to one box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedBox {
    pub bbox: BBox,
    pub category_id: CategoryId,
    pub score: f64,
    /// Number of member boxes (N). Exceeds the model count only when one
    /// model detected the same object twice.
    pub source_count: usize,
    pub contributors: Vec<Contributor>,
}

impl FusedBox {
    /// View a plain scored box as a single-source fused box, e.g. after the
    /// cluster metadata has been shed by a file round trip.
    pub fn from_scored(sb: &ScoredBox) -> Self {
        Self {
            bbox: sb.bbox,
            category_id: sb.category_id,
            score: sb.score,
            source_count: 1,
            contributors: Vec::new(),
        }
    }

    pub fn to_scored(&self) -> ScoredBox {
        ScoredBox::new(self.bbox, self.category_id, self.score)
    }
}

struct Cluster {
    category_id: CategoryId,
    members: Vec<(usize, ScoredBox)>,
    fused: BBox,
    score_sum: f64,
}

impl Cluster {
    fn new(model: usize, sb: ScoredBox) -> Self {
        Self {
            category_id: sb.category_id,
            fused: sb.bbox,
            score_sum: sb.score,
            members: vec![(model, sb)],
        }
    }

    fn join(&mut self, model: usize, sb: ScoredBox) {
        self.score_sum += sb.score;
        self.members.push((model, sb));
        self.fused = self.weighted_mean();
    }

    fn weighted_mean(&self) -> BBox {
        let mut acc = [0.0f64; 4];
        for (_, sb) in &self.members {
            let w = sb.score;
            acc[0] += w * sb.bbox.x;
            acc[1] += w * sb.bbox.y;
            acc[2] += w * sb.bbox.w;
            acc[3] += w * sb.bbox.h;
        }
        if self.score_sum > 0.0 {
            BBox::new(
                acc[0] / self.score_sum,
                acc[1] / self.score_sum,
                acc[2] / self.score_sum,
                acc[3] / self.score_sum,
            )
        } else {
            // All-zero scores: fall back to the unweighted mean.
            let n = self.members.len() as f64;
            let mut m = [0.0f64; 4];
            for (_, sb) in &self.members {
                m[0] += sb.bbox.x;
                m[1] += sb.bbox.y;
                m[2] += sb.bbox.w;
                m[3] += sb.bbox.h;
            }
            BBox::new(m[0] / n, m[1] / n, m[2] / n, m[3] / n)
        }
    }

    fn finish(self, cfg: &FusionConfig) -> FusedBox {
        let n = self.members.len();
        let t = cfg.model_count;
        let mean = self.score_sum / n as f64;
        let score = match cfg.score_rescale_mode {
            ScoreRescaleMode::Proportional => (mean * n as f64 / t as f64).min(1.0),
            ScoreRescaleMode::Clipped => mean * n.min(t) as f64 / t as f64,
        };
        FusedBox {
            bbox: self.fused,
            category_id: self.category_id,
            score,
            source_count: n,
            contributors: self
                .members
                .iter()
                .map(|(model, sb)| Contributor {
                    model: *model,
                    score: sb.score,
                })
                .collect(),
        }
    }
}

/// Fuse one image's detections from `T = cfg.model_count` models.
///
/// `per_model[k]` holds model `k`'s boxes for the image and may be empty.
/// Output clusters appear in creation order, i.e. descending founder score.
pub fn weighted_boxes_fusion(
    per_model: &[Vec<ScoredBox>],
    cfg: &FusionConfig,
) -> Result<Vec<FusedBox>, FusionError> {
    cfg.validate()?;
    if per_model.len() != cfg.model_count {
        return Err(FusionError::ModelCountMismatch {
            declared: cfg.model_count,
            supplied: per_model.len(),
        });
    }

    let mut candidates: Vec<(usize, usize, &ScoredBox)> = per_model
        .iter()
        .enumerate()
        .flat_map(|(model, boxes)| {
            boxes
                .iter()
                .enumerate()
                .map(move |(idx, sb)| (model, idx, sb))
        })
        .filter(|(_, _, sb)| sb.score >= cfg.skip_box_threshold)
        .collect();
    candidates.sort_by(|a, b| {
        b.2.score
            .partial_cmp(&a.2.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                b.2.bbox
                    .area()
                    .partial_cmp(&a.2.bbox.area())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut clusters: Vec<Cluster> = Vec::new();
    for (model, _, sb) in candidates {
        let joined = clusters.iter_mut().find(|c| {
            c.category_id == sb.category_id && iou(&sb.bbox, &c.fused) > cfg.iou_match_threshold
        });
        match joined {
            Some(cluster) => cluster.join(model, sb.clone()),
            None => clusters.push(Cluster::new(model, sb.clone())),
        }
    }

    Ok(clusters.into_iter().map(|c| c.finish(cfg)).collect())
}

/// Fuse whole prediction sets image by image. `sets[k]` is model `k`'s
/// output; images missing from a model contribute an empty list. Cluster
/// metadata is shed: the result holds plain scored boxes.
pub fn fuse_prediction_sets(
    sets: &[crate::coco::PredictionSet],
    cfg: &FusionConfig,
) -> Result<crate::coco::PredictionSet, FusionError> {
    let image_ids: std::collections::BTreeSet<crate::coco::ImageId> =
        sets.iter().flat_map(|s| s.image_ids()).collect();
    let mut out = crate::coco::PredictionSet::new();
    for image_id in image_ids {
        let per_model: Vec<Vec<ScoredBox>> =
            sets.iter().map(|s| s.boxes(image_id).to_vec()).collect();
        for fused in weighted_boxes_fusion(&per_model, cfg)? {
            out.push(image_id, fused.to_scored());
        }
    }
    Ok(out)
}

/// Keep exactly the boxes with `score >= min_conf`, preserving order.
pub fn filter_confidence(boxes: &[ScoredBox], min_conf: f64) -> Vec<ScoredBox> {
    boxes
        .iter()
        .filter(|sb| sb.score >= min_conf)
        .cloned()
        .collect()
}

/// Greedy class-agnostic overlap suppression.
///
/// Boxes are visited in descending score order (ties: larger area, then
/// earlier input index); a box is kept iff its IoU with every already kept
/// box is at most `iou_threshold`. Output follows acceptance order.
pub fn suppress_overlaps(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .partial_cmp(&boxes[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                boxes[b]
                    .bbox
                    .area()
                    .partial_cmp(&boxes[a].bbox.area())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    let mut kept: Vec<ScoredBox> = Vec::new();
    for idx in order {
        let candidate = &boxes[idx];
        if kept
            .iter()
            .all(|k| iou(&k.bbox, &candidate.bbox) <= iou_threshold)
        {
            kept.push(candidate.clone());
        }
    }
    kept
}
