//! Cross-family recognition ensembling: hard majority voting inside a
//! recognizer family, then vote-proportional confidence splitting across
//! the detector and the family verdicts.
//!
//! Each voter contributes exactly one vote: the detector's own label plus
//! one verdict per recognizer family. For every distinct voted label the
//! box is re-emitted at the same coordinates with its confidence scaled by
//! the label's share of the votes, so confidence mass is conserved.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{CategoryId, ImageId, PredictionSet, ScoredBox};
use crate::fusion::FusedBox;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("majority vote over an empty member list")]
    EmptyVote,
    #[error("{family} outputs hold {got} verdicts but {expected} fused boxes were supplied")]
    AlignmentMismatch {
        family: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Which voter produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoterFamily {
    Detector,
    FamilyA,
    FamilyB,
}

/// One classifier's verdict for one box crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizerOutput {
    pub label: CategoryId,
    pub confidence: f64,
    pub family: VoterFamily,
}

impl RecognizerOutput {
    pub fn new(label: CategoryId, confidence: f64, family: VoterFamily) -> Self {
        Self {
            label,
            confidence,
            family,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TallyEntry {
    pub votes: u32,
    pub mean_confidence: f64,
}

/// Per-box vote counts and mean voter confidence per label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VoteTally {
    entries: BTreeMap<CategoryId, TallyEntry>,
}

impl VoteTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, label: CategoryId, confidence: f64) {
        let entry = self.entries.entry(label).or_insert(TallyEntry {
            votes: 0,
            mean_confidence: 0.0,
        });
        let total = entry.mean_confidence * entry.votes as f64 + confidence;
        entry.votes += 1;
        entry.mean_confidence = total / entry.votes as f64;
    }

    pub fn total_votes(&self) -> u32 {
        self.entries.values().map(|e| e.votes).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CategoryId, &TallyEntry)> {
        self.entries.iter().map(|(id, e)| (*id, e))
    }

    pub fn get(&self, label: CategoryId) -> Option<&TallyEntry> {
        self.entries.get(&label)
    }

    /// Winning label: most votes, ties broken by higher mean confidence,
    /// then lower category id.
    pub fn winner(&self) -> Option<(CategoryId, &TallyEntry)> {
        self.iter().max_by(|(id_a, a), (id_b, b)| {
            a.votes
                .cmp(&b.votes)
                .then(
                    a.mean_confidence
                        .partial_cmp(&b.mean_confidence)
                        .unwrap_or(std::cmp::Ordering::Equal),
                )
                .then(id_b.cmp(id_a))
        })
    }
}

/// Collapse one family's member verdicts for one box into a single verdict.
///
/// The label with the most member votes wins; ties go to the label whose
/// members have the highest mean confidence, then to the lowest category id.
/// The output confidence is the mean confidence of the winning label's
/// members.
pub fn majority_vote(members: &[RecognizerOutput]) -> Result<RecognizerOutput, EnsembleError> {
    let first = members.first().ok_or(EnsembleError::EmptyVote)?;
    let mut tally = VoteTally::new();
    for m in members {
        tally.add(m.label, m.confidence);
    }
    let (label, entry) = tally.winner().expect("nonempty tally");
    Ok(RecognizerOutput::new(
        label,
        entry.mean_confidence,
        first.family,
    ))
}

/// Build the cross-voter tally for one fused box: the detector's label at
/// the fused score plus one vote per family verdict.
pub fn build_tally(fused: &FusedBox, family_votes: &[RecognizerOutput]) -> VoteTally {
    let mut tally = VoteTally::new();
    tally.add(fused.category_id, fused.score);
    for vote in family_votes {
        tally.add(vote.label, vote.confidence);
    }
    tally
}

/// Split one box by vote share: each distinct voted label `L` with `v` of
/// `V` total votes yields a box at the same coordinates scored
/// `fused.score * v / V`. Output is sorted by score descending (ties by
/// category id ascending).
pub fn vote_adjusted_boxes(fused: &FusedBox, family_votes: &[RecognizerOutput]) -> Vec<ScoredBox> {
    let tally = build_tally(fused, family_votes);
    let total = tally.total_votes() as f64;
    let mut out: Vec<ScoredBox> = tally
        .iter()
        .map(|(label, entry)| {
            ScoredBox::new(fused.bbox, label, fused.score * entry.votes as f64 / total)
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.category_id.cmp(&b.category_id))
    });
    out
}

/// Apply vote splitting across a whole page set.
///
/// `fused` pairs each fused box with its image; `family_a` / `family_b`
/// hold one already-collapsed verdict per box, index-aligned with `fused`.
pub fn ensemble_recognition(
    fused: &[(ImageId, FusedBox)],
    family_a: &[RecognizerOutput],
    family_b: &[RecognizerOutput],
) -> Result<PredictionSet, EnsembleError> {
    if family_a.len() != fused.len() {
        return Err(EnsembleError::AlignmentMismatch {
            family: "family-A",
            expected: fused.len(),
            got: family_a.len(),
        });
    }
    if family_b.len() != fused.len() {
        return Err(EnsembleError::AlignmentMismatch {
            family: "family-B",
            expected: fused.len(),
            got: family_b.len(),
        });
    }
    let mut out = PredictionSet::new();
    for (i, (image_id, fb)) in fused.iter().enumerate() {
        let votes = [family_a[i].clone(), family_b[i].clone()];
        for sb in vote_adjusted_boxes(fb, &votes) {
            out.push(*image_id, sb);
        }
    }
    Ok(out)
}
