//! Deterministic synthetic pages and noisy detector output: the desk-scale
//! harness the rest of the pipeline is tested against.
//!
//! # Reproducibility contract
//!
//! All randomness comes from PCG-32 (PCG XSH RR 64/32, as implemented by
//! `rand_pcg::Pcg32`) seeded with `Pcg32::new(seed, stream)` where the
//! stream constant is [`SCENE_STREAM`] for scene generation and
//! [`NOISE_STREAM`] for perturbation. Derived quantities consume the
//! generator in a fixed, documented order:
//!
//! - `u01`: one `next_u32`, mapped to `[0, 1)` as `x / 2^32`.
//! - `uniform_int(a..=b)`: one `next_u32`, mapped as `a + x % (b - a + 1)`.
//! - `gauss`: two `u01` draws via Box-Muller,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.
//! - `poisson(rate)`: Knuth inversion, one `u01` per iteration.
//!
//! `generate_scene` draws per line: the character count; then per
//! character: width jitter, height jitter, alphabet index.
//!
//! `perturb` visits images in ascending id and each image's annotations in
//! file order. Per annotation: one `u01` drop draw (a dropped box consumes
//! nothing further); then four `gauss` draws (dx, dy, dw, dh); one `u01`
//! label-confusion draw; one `gauss` score draw. After the image's
//! annotations: one `poisson` count draw, then per spurious box one `u01`
//! width factor, one `u01` height factor, one `u01` x, one `u01` y, one
//! `uniform_int` category pick, and one `gauss` score draw.

use rand_core::RngCore;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{
    Annotation, CategoryId, CategoryTable, Dataset, ImageRecord, PredictionSet, ScoredBox,
};
use crate::geometry::BBox;
use crate::transcript::Transcript;

/// Stream constant for scene generation.
pub const SCENE_STREAM: u64 = 0xda3e39cb94b95bdb;
/// Stream constant for prediction perturbation.
pub const NOISE_STREAM: u64 = 0x853c49e6748fea9b;

/// Extra vertical skip inserted at a paragraph break, as a multiple of the
/// mean glyph height. Large enough that the default layout config detects
/// the break.
pub const PARAGRAPH_SKIP_FACTOR: f64 = 2.5;

const PAGE_MARGIN: f64 = 20.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidScene(String),
    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),
}

/// Declarative description of one synthetic page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// Number of text lines.
    pub lines: usize,
    /// Inclusive (min, max) characters per line.
    pub chars_per_line: (usize, usize),
    /// Mean and symmetric jitter of glyph width, in pixels.
    pub glyph_width: (f64, f64),
    /// Mean and symmetric jitter of glyph height, in pixels.
    pub glyph_height: (f64, f64),
    /// Horizontal gap between neighbors as a fraction of mean glyph width.
    pub inter_char_gap: f64,
    /// Vertical gap between lines as a fraction of mean glyph height.
    pub line_gap: f64,
    /// Zero-based line indices after which a paragraph break is inserted.
    pub paragraph_breaks: Vec<usize>,
    /// Category ids drawn for glyph labels; defaults to the evaluated ids
    /// of the default table.
    #[serde(default)]
    pub alphabet: Vec<CategoryId>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            lines: 6,
            chars_per_line: (8, 14),
            glyph_width: (22.0, 2.0),
            glyph_height: (30.0, 3.0),
            inter_char_gap: 0.25,
            line_gap: 0.5,
            paragraph_breaks: Vec::new(),
            alphabet: Vec::new(),
        }
    }
}

impl SceneSpec {
    fn validate(&self, table: &CategoryTable) -> Result<(), SynthError> {
        if self.lines == 0 {
            return Err(SynthError::InvalidScene("lines must be positive".into()));
        }
        let (lo, hi) = self.chars_per_line;
        if lo == 0 || lo > hi {
            return Err(SynthError::InvalidScene(format!(
                "chars_per_line range ({lo}, {hi}) invalid"
            )));
        }
        for (label, (mean, jitter)) in [
            ("glyph_width", self.glyph_width),
            ("glyph_height", self.glyph_height),
        ] {
            if mean <= 0.0 || jitter < 0.0 {
                return Err(SynthError::InvalidScene(format!(
                    "{label} mean must be positive and jitter non-negative"
                )));
            }
            if jitter >= mean {
                return Err(SynthError::InvalidScene(format!(
                    "{label} jitter must stay below the mean"
                )));
            }
        }
        if self.inter_char_gap < 0.0 || self.line_gap < 0.0 {
            return Err(SynthError::InvalidScene("gaps must be non-negative".into()));
        }
        for id in &self.alphabet {
            if !table.contains(*id) {
                return Err(SynthError::InvalidScene(format!(
                    "alphabet id {id} not in the category table"
                )));
            }
        }
        Ok(())
    }
}

/// Row-stochastic label-confusion matrix over a fixed category order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionModel {
    pub categories: Vec<CategoryId>,
    pub rows: Vec<Vec<f64>>,
}

impl ConfusionModel {
    pub fn identity(categories: Vec<CategoryId>) -> Self {
        let n = categories.len();
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { categories, rows }
    }

    /// Keep the true label with probability `1 - error_rate`, spreading the
    /// remainder uniformly over the other labels.
    pub fn uniform(categories: Vec<CategoryId>, error_rate: f64) -> Self {
        let n = categories.len();
        let off = if n > 1 {
            error_rate / (n - 1) as f64
        } else {
            0.0
        };
        let keep = if n > 1 { 1.0 - error_rate } else { 1.0 };
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { keep } else { off }).collect())
            .collect();
        Self { categories, rows }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.rows.len() != self.categories.len() {
            return Err(SynthError::InvalidNoise(
                "confusion row count differs from category count".into(),
            ));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.categories.len() {
                return Err(SynthError::InvalidNoise(format!(
                    "confusion row {i} has wrong length"
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(SynthError::InvalidNoise(format!(
                    "confusion row {i} has probabilities outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SynthError::InvalidNoise(format!(
                    "confusion row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }

    fn draw(&self, true_id: CategoryId, u: f64) -> CategoryId {
        let Some(row_idx) = self.categories.iter().position(|c| *c == true_id) else {
            return true_id;
        };
        let row = &self.rows[row_idx];
        let mut acc = 0.0;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return self.categories[j];
            }
        }
        *self.categories.last().unwrap_or(&true_id)
    }
}

/// Parameters of one simulated detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub seed: u64,
    /// Standard deviation of the Gaussian jitter added to x, y, w, h.
    pub jitter_sigma: f64,
    /// Probability of dropping each ground-truth box.
    pub drop_prob: f64,
    /// Poisson mean of spurious boxes per image.
    pub spurious_rate: f64,
    pub confusion: ConfusionModel,
    /// (mean, sd) of the clamped Gaussian score for detected boxes.
    pub tp_score: (f64, f64),
    /// (mean, sd) of the clamped Gaussian score for spurious boxes.
    pub fp_score: (f64, f64),
}

impl NoiseSpec {
    /// The identity noise model: `perturb` reproduces the ground truth with
    /// every score exactly 1.0.
    pub fn zero(seed: u64, categories: Vec<CategoryId>) -> Self {
        Self {
            seed,
            jitter_sigma: 0.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
            confusion: ConfusionModel::identity(categories),
            tp_score: (1.0, 0.0),
            fp_score: (0.0, 0.0),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        for (label, p) in [("drop_prob", self.drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidNoise(format!(
                    "{label} {p} outside [0, 1]"
                )));
            }
        }
        if self.jitter_sigma < 0.0 || self.spurious_rate < 0.0 {
            return Err(SynthError::InvalidNoise(
                "jitter_sigma and spurious_rate must be non-negative".into(),
            ));
        }
        if self.spurious_rate > 0.0 && self.confusion.categories.is_empty() {
            return Err(SynthError::InvalidNoise(
                "spurious boxes need at least one category to draw from".into(),
            ));
        }
        self.confusion.validate()
    }
}

fn u01(rng: &mut Pcg32) -> f64 {
    rng.next_u32() as f64 / 4294967296.0
}

fn uniform_int(rng: &mut Pcg32, lo: u64, hi: u64) -> u64 {
    lo + rng.next_u32() as u64 % (hi - lo + 1)
}

fn gauss(rng: &mut Pcg32) -> f64 {
    let u1 = u01(rng);
    let u2 = u01(rng);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn poisson(rng: &mut Pcg32, rate: f64) -> usize {
    let limit = (-rate).exp();
    let mut count = 0usize;
    let mut product = 1.0;
    loop {
        product *= u01(rng);
        if product <= limit {
            return count;
        }
        count += 1;
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Generate a page of glyph boxes laid out row by row, plus the exact
/// reading-order transcript. Deterministic for a fixed spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<(Dataset, Transcript), SynthError> {
    let table = CategoryTable::default_greek();
    spec.validate(&table)?;
    let alphabet: Vec<CategoryId> = if spec.alphabet.is_empty() {
        table.evaluated_ids()
    } else {
        spec.alphabet.clone()
    };

    let mut rng = Pcg32::new(spec.seed, SCENE_STREAM);
    let (w_mean, w_jit) = spec.glyph_width;
    let (h_mean, h_jit) = spec.glyph_height;
    let gap_x = spec.inter_char_gap * w_mean;
    let advance_y = h_mean * (1.0 + spec.line_gap);

    let doc_id = format!("scene-{}", spec.seed);
    let mut ds = Dataset::new(Vec::new(), table.clone());
    let mut transcript = Transcript::new(doc_id.clone());
    let mut paragraph: Vec<String> = Vec::new();

    let mut y = PAGE_MARGIN;
    let mut max_right = PAGE_MARGIN;
    let mut max_bottom = PAGE_MARGIN;
    let mut next_ann = 1i64;

    for line_idx in 0..spec.lines {
        let count = uniform_int(
            &mut rng,
            spec.chars_per_line.0 as u64,
            spec.chars_per_line.1 as u64,
        ) as usize;
        let mut x = PAGE_MARGIN;
        let mut text = String::new();
        for _ in 0..count {
            let w = (w_mean + (2.0 * u01(&mut rng) - 1.0) * w_jit).max(2.0);
            let h = (h_mean + (2.0 * u01(&mut rng) - 1.0) * h_jit).max(2.0);
            let label = alphabet[uniform_int(&mut rng, 0, alphabet.len() as u64 - 1) as usize];
            ds.annotations
                .push(Annotation::new(next_ann, 1, label, BBox::new(x, y, w, h)));
            next_ann += 1;
            text.push(table.glyph(label).unwrap_or('?'));
            max_right = max_right.max(x + w);
            max_bottom = max_bottom.max(y + h);
            x += w + gap_x;
        }
        paragraph.push(text);
        y += advance_y;
        if spec.paragraph_breaks.contains(&line_idx) && line_idx + 1 < spec.lines {
            transcript.paragraphs.push(std::mem::take(&mut paragraph));
            y += PARAGRAPH_SKIP_FACTOR * h_mean;
        }
    }
    if !paragraph.is_empty() {
        transcript.paragraphs.push(paragraph);
    }

    let width = (max_right + PAGE_MARGIN).ceil() as i64;
    let height = (max_bottom + PAGE_MARGIN).ceil() as i64;
    ds.images
        .push(ImageRecord::new(1, format!("{doc_id}.png"), width, height));
    ds.validate().expect("generated dataset is valid");
    Ok((ds, transcript))
}

/// Simulate one detector's output over a ground-truth dataset.
pub fn perturb(gt: &Dataset, noise: &NoiseSpec) -> Result<PredictionSet, SynthError> {
    noise.validate()?;
    let mut rng = Pcg32::new(noise.seed, NOISE_STREAM);
    let mut out = PredictionSet::new();
    let by_image = gt.annotations_by_image();

    let mut images: Vec<&ImageRecord> = gt.images.iter().collect();
    images.sort_by_key(|img| img.id);

    for img in images {
        let anns = by_image.get(&img.id).map(Vec::as_slice).unwrap_or(&[]);
        let mut mean_w = 0.0;
        let mut mean_h = 0.0;
        for ann in anns {
            mean_w += ann.bbox.w;
            mean_h += ann.bbox.h;
        }
        let (base_w, base_h) = if anns.is_empty() {
            (20.0, 20.0)
        } else {
            (mean_w / anns.len() as f64, mean_h / anns.len() as f64)
        };

        for ann in anns {
            if u01(&mut rng) < noise.drop_prob {
                continue;
            }
            let dx = gauss(&mut rng) * noise.jitter_sigma;
            let dy = gauss(&mut rng) * noise.jitter_sigma;
            let dw = gauss(&mut rng) * noise.jitter_sigma;
            let dh = gauss(&mut rng) * noise.jitter_sigma;
            let bbox = BBox::new(
                ann.bbox.x + dx,
                ann.bbox.y + dy,
                (ann.bbox.w + dw).max(1.0),
                (ann.bbox.h + dh).max(1.0),
            );
            let label = noise.confusion.draw(ann.category_id, u01(&mut rng));
            let score = clamp01(noise.tp_score.0 + gauss(&mut rng) * noise.tp_score.1);
            out.push(img.id, ScoredBox::new(bbox, label, score));
        }

        let spurious = poisson(&mut rng, noise.spurious_rate);
        for _ in 0..spurious {
            let w = (base_w * (0.5 + u01(&mut rng))).max(1.0);
            let h = (base_h * (0.5 + u01(&mut rng))).max(1.0);
            let x = u01(&mut rng) * (img.width as f64 - w).max(1.0);
            let y = u01(&mut rng) * (img.height as f64 - h).max(1.0);
            let label = noise.confusion.categories
                [uniform_int(&mut rng, 0, noise.confusion.categories.len() as u64 - 1) as usize];
            let score = clamp01(noise.fp_score.0 + gauss(&mut rng) * noise.fp_score.1);
            out.push(
                img.id,
                ScoredBox::new(bbox_clamped(x, y, w, h), label, score),
            );
        }
    }
    Ok(out)
}

fn bbox_clamped(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::new(x.max(0.0), y.max(0.0), w, h)
}
