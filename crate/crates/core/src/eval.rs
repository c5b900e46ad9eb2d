//! COCO-style scoring: greedy IoU matching, 101-point interpolated average
//! precision over a threshold sweep, average recall, per-class breakdowns,
//! and confusion matrices.
//!
//! Punctuation categories (those with `evaluated == false`) are removed
//! from both ground truth and predictions before any matching. Matching is
//! greedy per image: predictions in descending score order each claim the
//! unmatched ground-truth box of highest IoU at or above the threshold,
//! same class required in recognition mode, any class in detection mode,
//! IoU ties going to the lower ground-truth id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{AnnotationId, CategoryId, Dataset, ImageId, PredictionSet};
use crate::geometry::{iou, BBox};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] crate::coco::CocoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Class-agnostic: all evaluated classes collapse to one before matching.
    Detection,
    /// Per-class matching and AP averaging.
    Recognition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Strictly increasing IoU thresholds in (0, 1].
    pub iou_thresholds: Vec<f64>,
    pub mode: EvalMode,
    /// Per image, only the top-scoring detections up to this count enter
    /// the evaluation.
    pub max_detections: usize,
    /// Evenly spaced recall points in [0, 1] at which the precision
    /// envelope is sampled.
    pub recall_sample_points: usize,
}

/// The standard sweep: 0.50 to 0.95 in steps of 0.05.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + i as f64 * 0.05).collect()
}

impl EvalConfig {
    pub fn detection() -> Self {
        Self {
            iou_thresholds: default_iou_thresholds(),
            mode: EvalMode::Detection,
            max_detections: 2000,
            recall_sample_points: 101,
        }
    }

    pub fn recognition() -> Self {
        Self {
            mode: EvalMode::Recognition,
            ..Self::detection()
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::InvalidConfig("no IoU thresholds".into()));
        }
        for pair in self.iou_thresholds.windows(2) {
            if pair[0] >= pair[1] {
                return Err(EvalError::InvalidConfig(
                    "IoU thresholds must be strictly increasing".into(),
                ));
            }
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(EvalError::InvalidConfig(
                "IoU thresholds must lie in (0, 1]".into(),
            ));
        }
        if self.recall_sample_points < 2 {
            return Err(EvalError::InvalidConfig(
                "recall_sample_points must be at least 2".into(),
            ));
        }
        if self.max_detections == 0 {
            return Err(EvalError::InvalidConfig(
                "max_detections must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Pseudo-class used when detection mode collapses all evaluated classes.
const COLLAPSED_CLASS: CategoryId = 0;

#[derive(Debug, Clone)]
struct GtBox {
    id: AnnotationId,
    /// Matching class: collapsed in detection mode.
    class: CategoryId,
    bbox: BBox,
}

#[derive(Debug, Clone)]
struct PredBox {
    /// Position in the image's capped, score-ordered prediction list.
    index: usize,
    /// Matching class: collapsed in detection mode.
    class: CategoryId,
    /// The detector's label, regardless of mode.
    true_class: CategoryId,
    bbox: BBox,
    score: f64,
}

/// Inputs reduced to evaluated categories, score-capped, and (in detection
/// mode) collapsed to a single class.
struct Prepared {
    /// Image id -> (ground truth, predictions sorted by score desc).
    images: BTreeMap<ImageId, (Vec<GtBox>, Vec<PredBox>)>,
    /// Classes under evaluation.
    classes: Vec<CategoryId>,
    gt_count_per_class: BTreeMap<CategoryId, usize>,
}

fn prepare(gt: &Dataset, preds: &PredictionSet, cfg: &EvalConfig) -> Prepared {
    let evaluated = gt.categories.evaluated_ids();
    let eval_set: std::collections::BTreeSet<CategoryId> = evaluated.iter().copied().collect();
    let collapse = cfg.mode == EvalMode::Detection;

    let mut images: BTreeMap<ImageId, (Vec<GtBox>, Vec<PredBox>)> = BTreeMap::new();
    for img in &gt.images {
        images.insert(img.id, (Vec::new(), Vec::new()));
    }
    let mut gt_count_per_class: BTreeMap<CategoryId, usize> = BTreeMap::new();
    for ann in &gt.annotations {
        if !eval_set.contains(&ann.category_id) {
            continue;
        }
        let class = if collapse {
            COLLAPSED_CLASS
        } else {
            ann.category_id
        };
        *gt_count_per_class.entry(class).or_insert(0) += 1;
        images.entry(ann.image_id).or_default().0.push(GtBox {
            id: ann.id,
            class,
            bbox: ann.bbox,
        });
    }

    for (image_id, boxes) in preds.iter() {
        let mut kept: Vec<(usize, &crate::coco::ScoredBox)> = boxes
            .iter()
            .enumerate()
            .filter(|(_, sb)| eval_set.contains(&sb.category_id))
            .collect();
        kept.sort_by(|a, b| {
            b.1.score
                .partial_cmp(&a.1.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        kept.truncate(cfg.max_detections);
        let entry = images.entry(image_id).or_default();
        entry.1 = kept
            .into_iter()
            .enumerate()
            .map(|(rank, (_, sb))| PredBox {
                index: rank,
                class: if collapse {
                    COLLAPSED_CLASS
                } else {
                    sb.category_id
                },
                true_class: sb.category_id,
                bbox: sb.bbox,
                score: sb.score,
            })
            .collect();
    }

    let classes = if collapse {
        vec![COLLAPSED_CLASS]
    } else {
        evaluated
    };
    Prepared {
        images,
        classes,
        gt_count_per_class,
    }
}

/// Matching outcome for one image at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredMatch {
    /// Rank of the prediction in the image's capped, score-ordered list.
    pub pred_index: usize,
    pub score: f64,
    pub category_id: CategoryId,
    /// Claimed ground-truth annotation id, if any.
    pub matched: Option<AnnotationId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageMatches {
    pub predictions: Vec<PredMatch>,
    pub unmatched_gt: Vec<AnnotationId>,
}

/// Greedy matching outcome across all images at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub threshold: f64,
    pub images: BTreeMap<ImageId, ImageMatches>,
}

fn match_image(gts: &[GtBox], preds: &[PredBox], threshold: f64, same_class: bool) -> ImageMatches {
    let mut gt_taken = vec![false; gts.len()];
    let mut predictions = Vec::with_capacity(preds.len());
    // `preds` is already score-ordered.
    for pred in preds {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] || (same_class && gt.class != pred.class) {
                continue;
            }
            let overlap = iou(&pred.bbox, &gt.bbox);
            if overlap < threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, biou)) => overlap > biou || (overlap == biou && gt.id < gts[bi].id),
            };
            if better {
                best = Some((gi, overlap));
            }
        }
        let matched = best.map(|(gi, _)| {
            gt_taken[gi] = true;
            gts[gi].id
        });
        predictions.push(PredMatch {
            pred_index: pred.index,
            score: pred.score,
            category_id: pred.class,
            matched,
        });
    }
    let unmatched_gt = gts
        .iter()
        .enumerate()
        .filter(|(gi, _)| !gt_taken[*gi])
        .map(|(_, gt)| gt.id)
        .collect();
    ImageMatches {
        predictions,
        unmatched_gt,
    }
}

/// Run greedy matching at a single threshold.
pub fn match_detections(
    gt: &Dataset,
    preds: &PredictionSet,
    threshold: f64,
    mode: EvalMode,
) -> Result<MatchResult, EvalError> {
    gt.validate()?;
    preds.validate(Some(gt))?;
    let cfg = EvalConfig {
        iou_thresholds: vec![threshold],
        mode,
        ..EvalConfig::detection()
    };
    let prepared = prepare(gt, preds, &cfg);
    let same_class = mode == EvalMode::Recognition;
    let images = prepared
        .images
        .iter()
        .map(|(id, (gts, pbs))| (*id, match_image(gts, pbs, threshold, same_class)))
        .collect();
    Ok(MatchResult { threshold, images })
}

/// One pooled detection outcome used to build a PR curve.
#[derive(Debug, Clone, Copy)]
struct PoolEntry {
    score: f64,
    image_id: ImageId,
    index: usize,
    is_tp: bool,
}

/// 101-point (by default) interpolated AP from a pooled, match-flagged
/// detection list. Returns `None` when the value is undefined (no ground
/// truth and no predictions).
fn average_precision_from_pool(
    pool: &mut [PoolEntry],
    gt_count: usize,
    sample_points: usize,
) -> Option<f64> {
    if gt_count == 0 {
        return if pool.is_empty() { None } else { Some(0.0) };
    }
    if pool.is_empty() {
        return Some(0.0);
    }
    pool.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.image_id.cmp(&b.image_id))
            .then(a.index.cmp(&b.index))
    });
    let n = pool.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (k, entry) in pool.iter().enumerate() {
        if entry.is_tp {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / gt_count as f64);
    }
    // Precision envelope from the right: env[k] = max precision at >= k.
    let mut envelope = precision.clone();
    for k in (0..n - 1).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    // Sample at evenly spaced recall points; recall is non-decreasing so a
    // single forward pointer suffices.
    let mut sum = 0.0;
    let mut k = 0usize;
    for j in 0..sample_points {
        let r = j as f64 / (sample_points - 1) as f64;
        while k < n && recall[k] < r {
            k += 1;
        }
        if k < n {
            sum += envelope[k];
        }
    }
    Some(sum / sample_points as f64)
}

/// Public single-list AP entry point: `outcomes` pairs each prediction's
/// score with its TP flag, pooled over images in canonical order.
pub fn average_precision(
    outcomes: &[(f64, bool)],
    gt_count: usize,
    sample_points: usize,
) -> Option<f64> {
    let mut pool: Vec<PoolEntry> = outcomes
        .iter()
        .enumerate()
        .map(|(i, (score, is_tp))| PoolEntry {
            score: *score,
            image_id: 0,
            index: i,
            is_tp: *is_tp,
        })
        .collect();
    average_precision_from_pool(&mut pool, gt_count, sample_points)
}

/// AP for one class of a single-threshold matching outcome. `None` when
/// undefined (no ground truth for the class and no predictions).
pub fn average_precision_for_class(
    result: &MatchResult,
    class: CategoryId,
    gt_count: usize,
    sample_points: usize,
) -> Option<f64> {
    let mut pool: Vec<PoolEntry> = Vec::new();
    for (image_id, matches) in &result.images {
        for pm in &matches.predictions {
            if pm.category_id == class {
                pool.push(PoolEntry {
                    score: pm.score,
                    image_id: *image_id,
                    index: pm.pred_index,
                    is_tp: pm.matched.is_some(),
                });
            }
        }
    }
    average_precision_from_pool(&mut pool, gt_count, sample_points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Mean AP over defined classes at this threshold.
    pub ap: f64,
    /// Mean recall over classes with ground truth at this threshold.
    pub ar: f64,
}

/// Scores for one run: mAP over the threshold sweep, the fixed-threshold
/// extracts, per-class APs and raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "AP50", skip_serializing_if = "Option::is_none")]
    pub ap50: Option<f64>,
    #[serde(rename = "AP75", skip_serializing_if = "Option::is_none")]
    pub ap75: Option<f64>,
    #[serde(rename = "AR50", skip_serializing_if = "Option::is_none")]
    pub ar50: Option<f64>,
    #[serde(rename = "AR75", skip_serializing_if = "Option::is_none")]
    pub ar75: Option<f64>,
    /// Mean recall over the whole threshold sweep.
    #[serde(rename = "mAR")]
    pub mar: f64,
    /// Per-class AP averaged over thresholds, keyed by category name
    /// (recognition mode only).
    pub per_class: BTreeMap<String, f64>,
    pub counts: Vec<ThresholdCounts>,
    /// Definition notes for quantities the report fixes by convention.
    pub notes: Vec<String>,
}

/// Score predictions against ground truth over the configured sweep.
pub fn evaluate(
    gt: &Dataset,
    preds: &PredictionSet,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    gt.validate()?;
    preds.validate(Some(gt))?;

    let prepared = prepare(gt, preds, cfg);
    let same_class = cfg.mode == EvalMode::Recognition;

    let mut counts: Vec<ThresholdCounts> = Vec::with_capacity(cfg.iou_thresholds.len());
    let mut ap_means: Vec<f64> = Vec::new();
    let mut ar_means: Vec<f64> = Vec::new();
    // class -> APs across thresholds where defined
    let mut per_class_aps: BTreeMap<CategoryId, Vec<f64>> = BTreeMap::new();

    for &threshold in &cfg.iou_thresholds {
        // class -> pooled outcomes
        let mut pools: BTreeMap<CategoryId, Vec<PoolEntry>> = BTreeMap::new();
        let mut matched_per_class: BTreeMap<CategoryId, usize> = BTreeMap::new();
        let mut tp_total = 0usize;
        let mut fp_total = 0usize;
        let mut fn_total = 0usize;

        for (image_id, (gts, pbs)) in &prepared.images {
            let matches = match_image(gts, pbs, threshold, same_class);
            for (pm, pb) in matches.predictions.iter().zip(pbs.iter()) {
                let is_tp = pm.matched.is_some();
                if is_tp {
                    tp_total += 1;
                    *matched_per_class.entry(pb.class).or_insert(0) += 1;
                } else {
                    fp_total += 1;
                }
                pools.entry(pb.class).or_default().push(PoolEntry {
                    score: pb.score,
                    image_id: *image_id,
                    index: pb.index,
                    is_tp,
                });
            }
            fn_total += matches.unmatched_gt.len();
        }

        let mut class_aps: Vec<f64> = Vec::new();
        for &class in &prepared.classes {
            let gt_count = prepared
                .gt_count_per_class
                .get(&class)
                .copied()
                .unwrap_or(0);
            let mut pool = pools.remove(&class).unwrap_or_default();
            if let Some(ap) =
                average_precision_from_pool(&mut pool, gt_count, cfg.recall_sample_points)
            {
                class_aps.push(ap);
                per_class_aps.entry(class).or_default().push(ap);
            }
        }
        let ap_t = mean(&class_aps).unwrap_or(0.0);

        let mut class_recalls: Vec<f64> = Vec::new();
        for &class in &prepared.classes {
            let gt_count = prepared
                .gt_count_per_class
                .get(&class)
                .copied()
                .unwrap_or(0);
            if gt_count > 0 {
                let matched = matched_per_class.get(&class).copied().unwrap_or(0);
                class_recalls.push(matched as f64 / gt_count as f64);
            }
        }
        let ar_t = mean(&class_recalls).unwrap_or(0.0);

        ap_means.push(ap_t);
        ar_means.push(ar_t);
        counts.push(ThresholdCounts {
            threshold,
            true_positives: tp_total,
            false_positives: fp_total,
            false_negatives: fn_total,
            ap: ap_t,
            ar: ar_t,
        });
    }

    let map = mean(&ap_means).unwrap_or(0.0);
    let mar = mean(&ar_means).unwrap_or(0.0);
    let at = |target: f64, xs: &[f64]| -> Option<f64> {
        cfg.iou_thresholds
            .iter()
            .position(|t| (t - target).abs() < 1e-9)
            .map(|i| xs[i])
    };

    let per_class: BTreeMap<String, f64> = if cfg.mode == EvalMode::Recognition {
        per_class_aps
            .iter()
            .filter_map(|(class, aps)| {
                let name = gt
                    .categories
                    .get(*class)
                    .map(|c| c.name.clone())
                    .unwrap_or_else(|| class.to_string());
                mean(aps).map(|m| (name, m))
            })
            .collect()
    } else {
        BTreeMap::new()
    };

    Ok(EvalReport {
        mode: cfg.mode,
        map,
        ap50: at(0.5, &ap_means),
        ap75: at(0.75, &ap_means),
        ar50: at(0.5, &ar_means),
        ar75: at(0.75, &ar_means),
        mar,
        per_class,
        counts,
        notes: vec![
            format!(
                "AR averages per-class recall with up to {} highest-score detections per image",
                cfg.max_detections
            ),
            "classes with no ground truth and no predictions are excluded from means".into(),
        ],
    })
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Confusion counts over evaluated categories at one IoU threshold; the
/// final row/column collects missed ground truth and unmatched predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub threshold: f64,
    /// Evaluated category ids in ascending order; the implicit final
    /// row/column index means "missed".
    pub categories: Vec<CategoryId>,
    /// `(K+1) x (K+1)` counts: rows = ground-truth class, columns =
    /// predicted class.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn size(&self) -> usize {
        self.categories.len() + 1
    }

    fn class_index(&self, id: CategoryId) -> usize {
        self.categories
            .binary_search(&id)
            .expect("category id present")
    }

    pub fn get(&self, gt: Option<CategoryId>, pred: Option<CategoryId>) -> u64 {
        let r = gt.map_or(self.categories.len(), |id| self.class_index(id));
        let c = pred.map_or(self.categories.len(), |id| self.class_index(id));
        self.counts[r][c]
    }
}

/// Build the confusion matrix at one threshold. Matching is class-agnostic
/// (highest score wins each ground-truth box); each matched pair increments
/// `(gt class, predicted class)`.
pub fn confusion(
    gt: &Dataset,
    preds: &PredictionSet,
    threshold: f64,
) -> Result<ConfusionMatrix, EvalError> {
    gt.validate()?;
    preds.validate(Some(gt))?;
    let evaluated = gt.categories.evaluated_ids();
    let index_of: BTreeMap<CategoryId, usize> = evaluated
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let missed = evaluated.len();
    let mut counts = vec![vec![0u64; missed + 1]; missed + 1];

    // Class-agnostic matching, but retain the true classes for the cells.
    let cfg = EvalConfig {
        mode: EvalMode::Detection,
        max_detections: usize::MAX / 2,
        ..EvalConfig::detection()
    };
    let prepared = prepare(gt, preds, &cfg);
    // Rebuild true class lookups (prepare collapsed them).
    let gt_class: BTreeMap<AnnotationId, CategoryId> = gt
        .annotations
        .iter()
        .map(|a| (a.id, a.category_id))
        .collect();

    for (gts, pbs) in prepared.images.values() {
        let matches = match_image(gts, pbs, threshold, false);
        for (pm, pb) in matches.predictions.iter().zip(pbs.iter()) {
            let c = index_of[&pb.true_class];
            match pm.matched {
                Some(gt_id) => {
                    let r = index_of[&gt_class[&gt_id]];
                    counts[r][c] += 1;
                }
                None => counts[missed][c] += 1,
            }
        }
        for gt_id in &matches.unmatched_gt {
            let r = index_of[&gt_class[gt_id]];
            counts[r][missed] += 1;
        }
    }

    Ok(ConfusionMatrix {
        threshold,
        categories: evaluated,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::{Annotation, CategoryTable, Dataset, ImageRecord, ScoredBox};

    fn dataset_with(boxes: &[(ImageId, CategoryId, [f64; 4])]) -> Dataset {
        let images = (1..=boxes.iter().map(|b| b.0).max().unwrap_or(1))
            .map(|i| ImageRecord::new(i, format!("img-{i}.png"), 1000, 1000))
            .collect();
        let mut ds = Dataset::new(images, CategoryTable::default_greek());
        for (i, (img, cat, b)) in boxes.iter().enumerate() {
            ds.annotations.push(Annotation::new(
                i as i64 + 1,
                *img,
                *cat,
                BBox::new(b[0], b[1], b[2], b[3]),
            ));
        }
        ds.validate().unwrap();
        ds
    }

    fn preds_with(boxes: &[(ImageId, CategoryId, [f64; 4], f64)]) -> PredictionSet {
        PredictionSet::from_records(boxes.iter().map(|(img, cat, b, s)| {
            (
                *img,
                ScoredBox::new(BBox::new(b[0], b[1], b[2], b[3]), *cat, *s),
            )
        }))
    }

    fn perfect_preds(ds: &Dataset) -> PredictionSet {
        PredictionSet::from_records(
            ds.annotations
                .iter()
                .map(|a| (a.image_id, ScoredBox::new(a.bbox, a.category_id, 1.0))),
        )
    }

    #[test]
    fn identity_predictions_score_one() {
        let ds = dataset_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0]),
            (1, 2, [20.0, 0.0, 10.0, 10.0]),
            (2, 3, [0.0, 0.0, 8.0, 12.0]),
        ]);
        let preds = perfect_preds(&ds);
        for cfg in [EvalConfig::detection(), EvalConfig::recognition()] {
            let report = evaluate(&ds, &preds, &cfg).unwrap();
            assert_eq!(report.map, 1.0);
            assert_eq!(report.ap50, Some(1.0));
            assert_eq!(report.ap75, Some(1.0));
            assert_eq!(report.ar50, Some(1.0));
            assert_eq!(report.ar75, Some(1.0));
        }
    }

    #[test]
    fn no_predictions_zero_scores() {
        let ds = dataset_with(&[(1, 1, [0.0, 0.0, 10.0, 10.0])]);
        let report = evaluate(&ds, &PredictionSet::new(), &EvalConfig::recognition()).unwrap();
        assert_eq!(report.map, 0.0);
        assert_eq!(report.ar50, Some(0.0));
        assert_eq!(report.counts[0].false_negatives, 1);
    }

    #[test]
    fn fp_then_tp_gives_half_ap() {
        // 1 gt box; rank-1 prediction misses it, rank-2 hits it.
        let ds = dataset_with(&[(1, 1, [0.0, 0.0, 10.0, 10.0])]);
        let preds = preds_with(&[
            (1, 1, [500.0, 500.0, 10.0, 10.0], 0.9),
            (1, 1, [0.0, 0.0, 10.0, 10.0], 0.8),
        ]);
        let report = evaluate(&ds, &preds, &EvalConfig::recognition()).unwrap();
        assert_eq!(report.ap50, Some(0.5));
        assert_eq!(report.map, 0.5);
    }

    #[test]
    fn higher_scoring_duplicate_takes_the_match() {
        let ds = dataset_with(&[(1, 1, [0.0, 0.0, 10.0, 10.0])]);
        let preds = preds_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0], 0.8),
            (1, 1, [0.0, 0.0, 10.0, 10.0], 0.9),
        ]);
        let result = match_detections(&ds, &preds, 0.5, EvalMode::Recognition).unwrap();
        let im = &result.images[&1];
        // pred_index 0 is the 0.9 one after score ordering.
        assert_eq!(im.predictions[0].score, 0.9);
        assert!(im.predictions[0].matched.is_some());
        assert!(im.predictions[1].matched.is_none());
        assert!(im.unmatched_gt.is_empty());
    }

    #[test]
    fn half_recall_when_half_predicted() {
        let ds = dataset_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0]),
            (1, 1, [50.0, 0.0, 10.0, 10.0]),
        ]);
        let preds = preds_with(&[(1, 1, [0.0, 0.0, 10.0, 10.0], 0.9)]);
        let report = evaluate(&ds, &preds, &EvalConfig::recognition()).unwrap();
        assert_eq!(report.ar50, Some(0.5));
    }

    #[test]
    fn punctuation_is_ignored() {
        // Category 25 = APOSTROPHE: present in gt and preds, never scored.
        let ds = dataset_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0]),
            (1, 25, [30.0, 0.0, 5.0, 5.0]),
        ]);
        let preds = preds_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0], 0.9),
            (1, 25, [200.0, 200.0, 5.0, 5.0], 0.95),
        ]);
        for cfg in [EvalConfig::detection(), EvalConfig::recognition()] {
            let report = evaluate(&ds, &preds, &cfg).unwrap();
            assert_eq!(report.map, 1.0, "stray punctuation FP must not count");
            assert_eq!(report.counts[0].false_positives, 0);
        }
    }

    #[test]
    fn detection_mode_forgives_wrong_labels() {
        let ds = dataset_with(&[(1, 1, [0.0, 0.0, 10.0, 10.0])]);
        let preds = preds_with(&[(1, 2, [0.0, 0.0, 10.0, 10.0], 0.9)]);
        let det = evaluate(&ds, &preds, &EvalConfig::detection()).unwrap();
        let rec = evaluate(&ds, &preds, &EvalConfig::recognition()).unwrap();
        assert_eq!(det.map, 1.0);
        assert_eq!(rec.map, 0.0);
    }

    #[test]
    fn ap_monotone_under_score_rescaling() {
        let ds = dataset_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0]),
            (1, 2, [30.0, 0.0, 10.0, 10.0]),
            (2, 1, [0.0, 0.0, 10.0, 10.0]),
        ]);
        let preds = preds_with(&[
            (1, 1, [1.0, 0.0, 10.0, 10.0], 0.9),
            (1, 2, [300.0, 300.0, 10.0, 10.0], 0.5),
            (2, 1, [0.0, 1.0, 10.0, 10.0], 0.7),
        ]);
        let base = evaluate(&ds, &preds, &EvalConfig::recognition()).unwrap();
        // Strictly monotone transform: s -> s^3 / 2.
        let transformed = PredictionSet::from_records(preds.flat_iter().map(|(img, sb)| {
            (
                img,
                ScoredBox::new(sb.bbox, sb.category_id, sb.score.powi(3) / 2.0),
            )
        }));
        let after = evaluate(&ds, &transformed, &EvalConfig::recognition()).unwrap();
        assert!((base.map - after.map).abs() < 1e-12);
    }

    #[test]
    fn trailing_fp_never_raises_ap() {
        let ds = dataset_with(&[(1, 1, [0.0, 0.0, 10.0, 10.0])]);
        let clean = preds_with(&[(1, 1, [0.0, 0.0, 10.0, 10.0], 0.9)]);
        let with_fp = preds_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0], 0.9),
            (1, 1, [400.0, 400.0, 10.0, 10.0], 0.1),
        ]);
        let base = evaluate(&ds, &clean, &EvalConfig::recognition()).unwrap();
        let noisy = evaluate(&ds, &with_fp, &EvalConfig::recognition()).unwrap();
        assert!(noisy.map <= base.map);
    }

    #[test]
    fn ap_nonincreasing_in_threshold() {
        let ds = dataset_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0]),
            (1, 1, [30.0, 0.0, 10.0, 10.0]),
        ]);
        // One tight and one loose localization.
        let preds = preds_with(&[
            (1, 1, [0.5, 0.5, 10.0, 10.0], 0.9),
            (1, 1, [33.0, 2.0, 10.0, 11.0], 0.8),
        ]);
        let report = evaluate(&ds, &preds, &EvalConfig::recognition()).unwrap();
        for pair in report.counts.windows(2) {
            assert!(pair[0].ap >= pair[1].ap - 1e-12);
        }
    }

    #[test]
    fn ap_nonincreasing_in_threshold_on_random_instances() {
        use rand_core::RngCore;
        let mut rng = rand_pcg::Pcg32::new(55, 3);
        let mut pick = |n: usize| (rng.next_u32() as usize) % n;
        for _ in 0..200 {
            let mut gt = Vec::new();
            for _ in 0..1 + pick(5) {
                gt.push((
                    1i64,
                    1 + pick(2) as i64,
                    [
                        pick(10) as f64 * 11.0,
                        pick(10) as f64 * 11.0,
                        8.0 + pick(4) as f64 * 2.0,
                        8.0 + pick(4) as f64 * 2.0,
                    ],
                ));
            }
            let ds = dataset_with(&gt);
            let mut pred = Vec::new();
            for _ in 0..pick(7) {
                pred.push((
                    1i64,
                    1 + pick(2) as i64,
                    [
                        pick(12) as f64 * 9.5,
                        pick(12) as f64 * 9.5,
                        8.0 + pick(5) as f64 * 2.0,
                        8.0 + pick(5) as f64 * 2.0,
                    ],
                    (1 + pick(20)) as f64 / 20.0,
                ));
            }
            let preds = preds_with(&pred);
            for cfg in [EvalConfig::detection(), EvalConfig::recognition()] {
                let report = evaluate(&ds, &preds, &cfg).unwrap();
                for pair in report.counts.windows(2) {
                    assert!(
                        pair[0].ap >= pair[1].ap - 1e-12,
                        "AP rose from {} to {} between t={} and t={}",
                        pair[0].ap,
                        pair[1].ap,
                        pair[0].threshold,
                        pair[1].threshold
                    );
                }
            }
        }
    }

    #[test]
    fn confusion_diagonal_for_perfect_predictions() {
        let ds = dataset_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0]),
            (1, 2, [30.0, 0.0, 10.0, 10.0]),
        ]);
        let cm = confusion(&ds, &perfect_preds(&ds), 0.5).unwrap();
        assert_eq!(cm.get(Some(1), Some(1)), 1);
        assert_eq!(cm.get(Some(2), Some(2)), 1);
        assert_eq!(cm.get(Some(1), Some(2)), 0);
        assert_eq!(cm.get(Some(1), None), 0);
    }

    #[test]
    fn confusion_counts_mislabels_and_misses() {
        // gt Α predicted as Λ (id 11); second gt missed entirely;
        // one spurious prediction.
        let ds = dataset_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0]),
            (1, 2, [30.0, 0.0, 10.0, 10.0]),
        ]);
        let preds = preds_with(&[
            (1, 11, [0.0, 0.0, 10.0, 10.0], 0.9),
            (1, 3, [200.0, 200.0, 10.0, 10.0], 0.8),
        ]);
        let cm = confusion(&ds, &preds, 0.5).unwrap();
        assert_eq!(cm.get(Some(1), Some(11)), 1);
        assert_eq!(cm.get(Some(2), None), 1);
        assert_eq!(cm.get(None, Some(3)), 1);
        // Row sums equal gt counts per class.
        let row_sum = |id: CategoryId| -> u64 {
            cm.counts[cm.categories.binary_search(&id).unwrap()]
                .iter()
                .sum()
        };
        assert_eq!(row_sum(1), 1);
        assert_eq!(row_sum(2), 1);
    }

    #[test]
    fn max_detections_caps_per_image() {
        let ds = dataset_with(&[(1, 1, [0.0, 0.0, 10.0, 10.0])]);
        // The highest-score prediction misses; the capped-out one would hit.
        let preds = preds_with(&[
            (1, 1, [500.0, 500.0, 10.0, 10.0], 0.9),
            (1, 1, [0.0, 0.0, 10.0, 10.0], 0.8),
        ]);
        let mut cfg = EvalConfig::recognition();
        cfg.max_detections = 1;
        let report = evaluate(&ds, &preds, &cfg).unwrap();
        assert_eq!(report.map, 0.0);
        assert_eq!(report.ar50, Some(0.0));
    }

    #[test]
    fn empty_inputs_report_zero() {
        let ds = dataset_with(&[]);
        let report = evaluate(&ds, &PredictionSet::new(), &EvalConfig::recognition()).unwrap();
        assert_eq!(report.map, 0.0);
        assert!(report.per_class.is_empty());
    }

    #[test]
    fn confusion_row_sums_equal_gt_counts_on_random_instances() {
        use rand_core::RngCore;
        let mut rng = rand_pcg::Pcg32::new(99, 3);
        let mut draw = |n: usize| (rng.next_u32() as usize) % n;
        for _ in 0..50 {
            let mut ds = Dataset::new(
                vec![
                    ImageRecord::new(1, "a.png", 200, 200),
                    ImageRecord::new(2, "b.png", 200, 200),
                ],
                CategoryTable::default_greek(),
            );
            let mut preds = PredictionSet::new();
            let mut ann_id = 1;
            for img in 1..=2i64 {
                for _ in 0..draw(7) {
                    ds.annotations.push(Annotation::new(
                        ann_id,
                        img,
                        1 + draw(4) as i64,
                        BBox::new(draw(12) as f64 * 12.0, draw(12) as f64 * 12.0, 10.0, 10.0),
                    ));
                    ann_id += 1;
                }
                for _ in 0..draw(7) {
                    preds.push(
                        img,
                        ScoredBox::new(
                            BBox::new(draw(12) as f64 * 12.0, draw(12) as f64 * 12.0, 10.0, 10.0),
                            1 + draw(4) as i64,
                            (1 + draw(10)) as f64 / 10.0,
                        ),
                    );
                }
            }
            ds.validate().unwrap();
            let cm = confusion(&ds, &preds, 0.5).unwrap();
            for (r, &class) in cm.categories.iter().enumerate() {
                let want = ds
                    .annotations
                    .iter()
                    .filter(|a| a.category_id == class)
                    .count() as u64;
                let got: u64 = cm.counts[r].iter().sum();
                assert_eq!(got, want, "row sum for class {class}");
            }
        }
    }

    #[test]
    fn average_precision_edge_cases() {
        // All gt matched by top-ranked preds, no FPs.
        assert_eq!(
            average_precision(&[(0.9, true), (0.8, true)], 2, 101),
            Some(1.0)
        );
        // FP at rank 1, TP at rank 2: envelope 0.5 everywhere.
        assert_eq!(
            average_precision(&[(0.9, false), (0.8, true)], 1, 101),
            Some(0.5)
        );
        // No predictions but ground truth exists.
        assert_eq!(average_precision(&[], 3, 101), Some(0.0));
        // Predictions against an absent class.
        assert_eq!(average_precision(&[(0.9, false)], 0, 101), Some(0.0));
        // Nothing at all: undefined.
        assert_eq!(average_precision(&[], 0, 101), None);
    }

    #[test]
    fn ap_from_match_result_agrees_with_evaluate() {
        let ds = dataset_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0]),
            (1, 1, [30.0, 0.0, 10.0, 10.0]),
            (2, 1, [0.0, 0.0, 10.0, 10.0]),
        ]);
        let preds = preds_with(&[
            (1, 1, [0.0, 0.0, 10.0, 10.0], 0.9),
            (1, 1, [200.0, 200.0, 10.0, 10.0], 0.7),
            (2, 1, [1.0, 0.0, 10.0, 10.0], 0.8),
        ]);
        let result = match_detections(&ds, &preds, 0.5, EvalMode::Recognition).unwrap();
        let ap = average_precision_for_class(&result, 1, 3, 101).unwrap();
        let mut cfg = EvalConfig::recognition();
        cfg.iou_thresholds = vec![0.5];
        let report = evaluate(&ds, &preds, &cfg).unwrap();
        assert!((ap - report.counts[0].ap).abs() < 1e-12);
    }

    #[test]
    fn report_json_uses_interface_keys() {
        let ds = dataset_with(&[(1, 1, [0.0, 0.0, 10.0, 10.0])]);
        let report = evaluate(&ds, &perfect_preds(&ds), &EvalConfig::recognition()).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        assert!(json.get("mAP").is_some());
        assert!(json.get("AP50").is_some());
        assert!(json.get("AR75").is_some());
        assert!(json.get("per_class").is_some());
        assert_eq!(json["per_class"]["Α"], 1.0);
    }
}
