//! On-disk schemas owned by the CLI: recognizer vote files, the layout
//! file, and the declarative configs for `synth` and `pipeline`.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use papyri_core::coco::{CategoryId, ImageId};
use papyri_core::ensemble::{majority_vote, RecognizerOutput, VoterFamily};
use papyri_core::fusion::ScoreRescaleMode;
use papyri_core::layout::PageLayout;
use papyri_core::synth::SceneSpec;

/// One recognizer family's verdicts for one fused box: the labels and
/// confidences of the family's ensemble members (e.g. cross-validation
/// folds). Files hold a JSON array of these, index-aligned with the fused
/// prediction file in canonical order (ascending image id, file order
/// within an image).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecognizerRecord {
    pub family: String,
    pub labels: Vec<CategoryId>,
    pub confidences: Vec<f64>,
}

pub fn load_recognizer_file(
    path: &Path,
    family: VoterFamily,
    expected_len: usize,
) -> Result<Vec<RecognizerOutput>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading recognizer file {}", path.display()))?;
    let records: Vec<RecognizerRecord> = serde_json::from_str(&text)
        .with_context(|| format!("parsing recognizer file {}", path.display()))?;
    if records.len() != expected_len {
        bail!(
            "{}: {} records but the fused file has {} boxes",
            path.display(),
            records.len(),
            expected_len
        );
    }
    let mut verdicts = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        if rec.labels.is_empty() || rec.labels.len() != rec.confidences.len() {
            bail!(
                "{}: record {} needs equally many labels and confidences (at least one)",
                path.display(),
                i
            );
        }
        let members: Vec<RecognizerOutput> = rec
            .labels
            .iter()
            .zip(rec.confidences.iter())
            .map(|(label, conf)| RecognizerOutput::new(*label, *conf, family))
            .collect();
        verdicts.push(majority_vote(&members)?);
    }
    Ok(verdicts)
}

/// One page's recovered structure inside a layout file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub image_id: ImageId,
    pub layout: PageLayout,
}

pub fn write_layout_file(entries: &[LayoutEntry], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(entries)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_layout_file(path: &Path) -> Result<Vec<LayoutEntry>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading layout file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing layout file {}", path.display()))
}

fn default_tp_score() -> (f64, f64) {
    (0.8, 0.1)
}

fn default_fp_score() -> (f64, f64) {
    (0.3, 0.1)
}

/// One simulated detector in a `synth` config. `label_confusion` is the
/// total probability of relabeling a box, spread uniformly over the other
/// alphabet letters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub seed: u64,
    #[serde(default)]
    pub jitter_sigma: f64,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub spurious_rate: f64,
    #[serde(default)]
    pub label_confusion: f64,
    #[serde(default = "default_tp_score")]
    pub tp_score: (f64, f64),
    #[serde(default = "default_fp_score")]
    pub fp_score: (f64, f64),
}

/// `synth --config` schema: one scene plus any number of simulated
/// detectors to run over it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    #[serde(default)]
    pub noise: Vec<NoiseEntry>,
}

fn default_fuse_iou() -> f64 {
    0.55
}

fn default_min_conf() -> f64 {
    0.3
}

fn default_suppress_iou() -> f64 {
    0.5
}

fn default_feather_x() -> f64 {
    0.4
}

fn default_feather_y() -> f64 {
    0.1
}

fn default_para_gap() -> f64 {
    1.8
}

/// `pipeline --config` schema: fuse, optionally ensemble, postprocess,
/// lay out and render in one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// One prediction file per detection model.
    pub predictions: Vec<PathBuf>,
    /// Recognizer vote files; supply both or neither.
    #[serde(default)]
    pub recognizer_a: Option<PathBuf>,
    #[serde(default)]
    pub recognizer_b: Option<PathBuf>,
    /// Dataset supplying category names and image file names.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_fuse_iou")]
    pub fuse_iou: f64,
    #[serde(default)]
    pub skip_thr: f64,
    #[serde(default)]
    pub rescale: ScoreRescaleMode,
    #[serde(default = "default_min_conf")]
    pub min_conf: f64,
    #[serde(default = "default_suppress_iou")]
    pub suppress_iou: f64,
    #[serde(default = "default_feather_x")]
    pub feather_x: f64,
    #[serde(default = "default_feather_y")]
    pub feather_y: f64,
    #[serde(default = "default_para_gap")]
    pub para_gap: f64,
    #[serde(default)]
    pub emit_tei: bool,
    #[serde(default)]
    pub title: String,
    pub out_dir: PathBuf,
}

pub fn load_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
