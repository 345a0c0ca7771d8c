//! Binary-classification metrics with `fake` as the positive class.
//!
//! A sample is predicted fake iff `score >= threshold`. Rates that are
//! undefined for single-class inputs are returned as `None` rather than 0.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::Label;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("score set is empty")]
    Empty,
    #[error("no fake (positive) labels present")]
    NoPositives,
    #[error("both classes are required")]
    SingleClass,
    #[error("confusion counts total zero")]
    ZeroTotal,
    #[error("duplicate id `{0}` in score set")]
    DuplicateId(String),
    #[error("non-finite score for id {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub id: String,
    pub score: f64,
    pub label: Label,
}

/// Scores aligned with ground truth. Ids are unique and scores finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    entries: Vec<ScoredEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoredEntry>) -> Result<Self, MetricsError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.score.is_finite() {
                return Err(MetricsError::NonFinite(e.id.clone()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(MetricsError::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { entries })
    }

    /// Convenience constructor assigning ids `0..n`.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, Label)>) -> Result<Self, MetricsError> {
        Self::new(
            pairs
                .into_iter()
                .enumerate()
                .map(|(i, (score, label))| ScoredEntry {
                    id: i.to_string(),
                    score,
                    label,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScoredEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_fake(&self) -> usize {
        self.entries.iter().filter(|e| e.label.is_fake()).count()
    }

    pub fn n_real(&self) -> usize {
        self.len() - self.n_fake()
    }

    /// Entries satisfying `keep`, in order.
    pub fn filter(&self, mut keep: impl FnMut(&ScoredEntry) -> bool) -> ScoreSet {
        ScoreSet {
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    /// Groups of `(score, n_fake, n_real)` with equal scores, in descending
    /// score order.
    fn tie_groups_descending(&self) -> Vec<(f64, u64, u64)> {
        let mut sorted: Vec<(f64, bool)> = self.entries.iter().map(|e| (e.score, e.label.is_fake())).collect();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut groups: Vec<(f64, u64, u64)> = Vec::new();
        for (score, fake) in sorted {
            match groups.last_mut() {
                // -0.0 and 0.0 compare equal and so share a group.
                Some(last) if last.0 == score => {
                    if fake {
                        last.1 += 1
                    } else {
                        last.2 += 1
                    }
                }
                _ => groups.push((score, u64::from(fake), u64::from(!fake))),
            }
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        match self.total() {
            0 => Err(MetricsError::ZeroTotal),
            n => Ok((self.tp + self.tn) as f64 / n as f64),
        }
    }

    pub fn tpr(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }

    pub fn tnr(&self) -> Option<f64> {
        let neg = self.tn + self.fp;
        (neg > 0).then(|| self.tn as f64 / neg as f64)
    }
}

pub fn confusion_at(scores: &ScoreSet, threshold: f64) -> Result<ConfusionCounts, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for e in scores.entries() {
        match (e.score >= threshold, e.label) {
            (true, Label::Fake) => c.tp += 1,
            (true, Label::Real) => c.fp += 1,
            (false, Label::Real) => c.tn += 1,
            (false, Label::Fake) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    c.accuracy()
}

pub fn tpr_tnr(c: &ConfusionCounts) -> (Option<f64>, Option<f64>) {
    (c.tpr(), c.tnr())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// False-positive rate; 0 when the set has no real samples.
    pub fpr: f64,
    pub tp: u64,
    pub fp: u64,
}

/// Precision/recall/FPR at every distinct score, thresholds descending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoints {
    pub points: Vec<CurvePoint>,
    pub n_fake: u64,
    pub n_real: u64,
}

pub fn pr_curve(scores: &ScoreSet) -> Result<CurvePoints, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n_fake = scores.n_fake() as u64;
    let n_real = scores.n_real() as u64;
    if n_fake == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let points = scores
        .tie_groups_descending()
        .into_iter()
        .map(|(threshold, fakes, reals)| {
            tp += fakes;
            fp += reals;
            CurvePoint {
                threshold,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / n_fake as f64,
                fpr: if n_real == 0 { 0.0 } else { fp as f64 / n_real as f64 },
                tp,
                fp,
            }
        })
        .collect();
    Ok(CurvePoints { points, n_fake, n_real })
}

/// `Σ (R_n − R_{n−1}) · P_n` over the PR curve, `R_0 = 0`, no interpolation.
pub fn average_precision(scores: &ScoreSet) -> Result<f64, MetricsError> {
    let curve = pr_curve(scores)?;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for p in &curve.points {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    Ok(ap)
}

/// Trapezoidal area under the ROC points of the threshold sweep, from (0,0)
/// to (1,1). Accumulated in integer units of `1/(2·P·N)`, so it coincides
/// exactly with the Mann-Whitney statistic (ties count one half).
pub fn roc_auc(scores: &ScoreSet) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n_fake = scores.n_fake() as u128;
    let n_real = scores.n_real() as u128;
    if n_fake == 0 || n_real == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut tp = 0u128;
    let mut fp = 0u128;
    let mut twice_area = 0u128;
    for (_, fakes, reals) in scores.tie_groups_descending() {
        let next_tp = tp + u128::from(fakes);
        let next_fp = fp + u128::from(reals);
        twice_area += (next_fp - fp) * (next_tp + tp);
        tp = next_tp;
        fp = next_fp;
    }
    Ok(twice_area as f64 / (2 * n_fake * n_real) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleThreshold {
    pub threshold: f64,
    pub accuracy: f64,
}

fn below(v: f64) -> f64 {
    let t = v - 1.0;
    if t < v {
        t
    } else {
        v.next_down()
    }
}

fn above(v: f64) -> f64 {
    let t = v + 1.0;
    if t > v {
        t
    } else {
        v.next_up()
    }
}

/// A threshold strictly inside `(lo, hi]` that realizes the same partition as
/// the exact midpoint.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mut m = (lo + hi) / 2.0;
    if !m.is_finite() {
        m = lo / 2.0 + hi / 2.0;
    }
    if m <= lo {
        hi
    } else {
        m
    }
}

/// The accuracy-maximizing threshold. Candidates are one value below the
/// minimum score, the midpoints between consecutive distinct scores, and one
/// value above the maximum. Ties go to the smallest candidate.
pub fn oracle_threshold(scores: &ScoreSet) -> Result<OracleThreshold, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut groups = scores.tie_groups_descending();
    groups.reverse();
    let n = scores.len() as u64;
    let n_fake: u64 = groups.iter().map(|g| g.1).sum();

    // Candidate i (ascending) predicts fake for groups i.. ; below-min is i=0.
    let mut correct = n_fake;
    let mut best = (correct, below(groups[0].0));
    for i in 0..groups.len() {
        let (score, fakes, reals) = groups[i];
        correct = correct - fakes + reals;
        let candidate = match groups.get(i + 1) {
            Some(next) => midpoint(score, next.0),
            None => above(score),
        };
        if correct > best.0 {
            best = (correct, candidate);
        }
    }
    Ok(OracleThreshold {
        threshold: best.1,
        accuracy: best.0 as f64 / n as f64,
    })
}
