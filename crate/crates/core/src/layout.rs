//! Reading-structure recovery: feathered-overlap line clustering and
//! gap-based paragraph detection.
//!
//! Two boxes share a line when they are transitively connected under
//! "feathered boxes overlap with positive area AND their vertical intervals
//! overlap by at least half of the smaller feathered height". Connectivity
//! is computed as connected components of that relation, so growing the
//! feather can only merge lines, never split them.

use serde::{Deserialize, Serialize};

use crate::coco::ScoredBox;
use crate::geometry::feather;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    /// Horizontal feather as a fraction of box width.
    pub feather_x: f64,
    /// Vertical feather as a fraction of box height.
    pub feather_y: f64,
    /// A paragraph break opens where the vertical gap between consecutive
    /// lines exceeds this multiple of the page's median line height.
    pub paragraph_gap_factor: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            feather_x: 0.4,
            feather_y: 0.1,
            paragraph_gap_factor: 1.8,
        }
    }
}

/// One recovered text line: its boxes in left-to-right order plus the
/// unfeathered vertical extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub boxes: Vec<ScoredBox>,
    pub top: f64,
    pub bottom: f64,
}

impl Line {
    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    fn mean_center_y(&self) -> f64 {
        self.boxes.iter().map(|b| b.bbox.center().1).sum::<f64>() / self.boxes.len() as f64
    }

    fn mean_left(&self) -> f64 {
        self.boxes.iter().map(|b| b.bbox.x).sum::<f64>() / self.boxes.len() as f64
    }
}

/// Ordered paragraphs of ordered lines; the bridge from geometry to text.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PageLayout {
    pub paragraphs: Vec<Vec<Line>>,
    pub median_line_height: f64,
}

impl PageLayout {
    pub fn line_count(&self) -> usize {
        self.paragraphs.iter().map(Vec::len).sum()
    }

    pub fn box_count(&self) -> usize {
        self.paragraphs
            .iter()
            .flatten()
            .map(|l| l.boxes.len())
            .sum()
    }

    pub fn lines(&self) -> impl Iterator<Item = &Line> {
        self.paragraphs.iter().flatten()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Group boxes into lines via feathered-overlap connectivity.
///
/// Lines come back sorted top-to-bottom by mean vertical center; boxes
/// within a line left-to-right by left edge.
pub fn cluster_lines(boxes: &[ScoredBox], cfg: &LayoutConfig) -> Vec<Line> {
    if boxes.is_empty() {
        return Vec::new();
    }
    let feathered: Vec<_> = boxes
        .iter()
        .map(|sb| feather(&sb.bbox, cfg.feather_x, cfg.feather_y))
        .collect();

    let mut ds = DisjointSet::new(boxes.len());
    for i in 0..boxes.len() {
        for j in (i + 1)..boxes.len() {
            let (a, b) = (&feathered[i], &feathered[j]);
            if a.intersection_area(b) <= 0.0 {
                continue;
            }
            let v_overlap = a.bottom().min(b.bottom()) - a.y.max(b.y);
            if v_overlap >= 0.5 * a.h.min(b.h) {
                ds.union(i, j);
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_to_group: std::collections::HashMap<usize, usize> =
        std::collections::HashMap::new();
    for i in 0..boxes.len() {
        let root = ds.find(i);
        let slot = *root_to_group.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }

    let mut lines: Vec<Line> = groups
        .into_iter()
        .map(|mut idxs| {
            idxs.sort_by(|&a, &b| {
                boxes[a]
                    .bbox
                    .x
                    .partial_cmp(&boxes[b].bbox.x)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(
                        boxes[a]
                            .bbox
                            .y
                            .partial_cmp(&boxes[b].bbox.y)
                            .unwrap_or(std::cmp::Ordering::Equal),
                    )
                    .then(a.cmp(&b))
            });
            let members: Vec<ScoredBox> = idxs.iter().map(|&i| boxes[i].clone()).collect();
            let top = members
                .iter()
                .map(|b| b.bbox.y)
                .fold(f64::INFINITY, f64::min);
            let bottom = members
                .iter()
                .map(|b| b.bbox.bottom())
                .fold(f64::NEG_INFINITY, f64::max);
            Line {
                boxes: members,
                top,
                bottom,
            }
        })
        .collect();

    lines.sort_by(|a, b| {
        a.mean_center_y()
            .partial_cmp(&b.mean_center_y())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                a.mean_left()
                    .partial_cmp(&b.mean_left())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
    });
    lines
}

/// Median of line heights; 0 for an empty page.
fn median_height(lines: &[Line]) -> f64 {
    if lines.is_empty() {
        return 0.0;
    }
    let mut heights: Vec<f64> = lines.iter().map(Line::height).collect();
    heights.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mid = heights.len() / 2;
    if heights.len() % 2 == 1 {
        heights[mid]
    } else {
        (heights[mid - 1] + heights[mid]) / 2.0
    }
}

/// Insert paragraph breaks where the gap between consecutive lines exceeds
/// `paragraph_gap_factor` times the page's median line height.
pub fn cluster_paragraphs(lines: Vec<Line>, cfg: &LayoutConfig) -> PageLayout {
    let median = median_height(&lines);
    if lines.is_empty() {
        return PageLayout::default();
    }
    let mut paragraphs: Vec<Vec<Line>> = Vec::new();
    let mut current: Vec<Line> = Vec::new();
    for line in lines {
        if let Some(prev) = current.last() {
            let gap = line.top - prev.bottom;
            if gap > cfg.paragraph_gap_factor * median {
                paragraphs.push(std::mem::take(&mut current));
            }
        }
        current.push(line);
    }
    paragraphs.push(current);
    PageLayout {
        paragraphs,
        median_line_height: median,
    }
}

/// Full structure recovery: line clustering followed by paragraph breaks.
pub fn recover_layout(boxes: &[ScoredBox], cfg: &LayoutConfig) -> PageLayout {
    cluster_paragraphs(cluster_lines(boxes, cfg), cfg)
}
