//! F-measure evaluation of beat and downbeat estimates.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tracker::BeatEvent;

/// Default tolerance windows, in seconds.
pub const TOLERANCES: [f64; 2] = [0.07, 0.2];
/// Default leading skips, in seconds.
pub const SKIPS: [f64; 2] = [0.0, 5.0];

// Absorbs float noise at the edge of a tolerance window.
const EDGE: f64 = 1e-9;

/// Reference beats and downbeats of a clip.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotation {
    pub beats: Vec<f64>,
    pub downbeats: Vec<f64>,
}

impl Annotation {
    /// Checks ordering, non-negativity and that every downbeat is a beat
    /// (within 1 ms).
    pub fn new(beats: Vec<f64>, downbeats: Vec<f64>) -> Result<Self> {
        check_sorted(&beats)?;
        check_sorted(&downbeats)?;
        if beats.first().is_some_and(|&b| b < 0.0) {
            return Err(Error::InvalidConfig(
                "annotation times must be non-negative",
            ));
        }
        let on_beat = |d: &f64| beats.iter().any(|b| (b - d).abs() <= 1e-3);
        if !downbeats.iter().all(on_beat) {
            return Err(Error::InvalidConfig("every downbeat must also be a beat"));
        }
        Ok(Annotation { beats, downbeats })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalResult {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl EvalResult {
    fn from_counts(tp: usize, n_est: usize, n_ref: usize) -> Self {
        let precision = if n_est > 0 {
            tp as f64 / n_est as f64
        } else {
            0.0
        };
        let recall = if n_ref > 0 {
            tp as f64 / n_ref as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalResult {
            f1,
            precision,
            recall,
            true_positives: tp,
            false_positives: n_est - tp,
            false_negatives: n_ref - tp,
        }
    }
}

fn check_sorted(times: &[f64]) -> Result<()> {
    if times.windows(2).all(|w| w[0] <= w[1]) && times.iter().all(|t| t.is_finite()) {
        Ok(())
    } else {
        Err(Error::Unsorted)
    }
}

/// One-to-one matching: each reference, in order, takes the earliest unmatched
/// estimate within `±tolerance`.
pub fn f_measure(est: &[f64], reference: &[f64], tolerance: f64) -> Result<EvalResult> {
    check_sorted(est)?;
    check_sorted(reference)?;
    let mut tp = 0;
    let mut j = 0;
    for &r in reference {
        // Estimates too early for this reference are too early for all later ones.
        while j < est.len() && est[j] < r - tolerance - EDGE {
            j += 1;
        }
        if j < est.len() && est[j] <= r + tolerance + EDGE {
            tp += 1;
            j += 1;
        }
    }
    Ok(EvalResult::from_counts(tp, est.len(), reference.len()))
}

/// Drops timestamps before `skip` seconds.
pub fn apply_skip(times: &[f64], skip: f64) -> Vec<f64> {
    times.iter().copied().filter(|&t| t >= skip).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Beat,
    Downbeat,
}

/// One cell of an evaluation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalCell {
    pub kind: EventKind,
    pub tolerance: f64,
    pub skip: f64,
    pub result: EvalResult,
}

impl EvalCell {
    fn same_key(&self, other: &EvalCell) -> bool {
        self.kind == other.kind && self.tolerance == other.tolerance && self.skip == other.skip
    }
}

/// Cells ordered by skip, then tolerance, then beat before downbeat.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalTable {
    pub cells: Vec<EvalCell>,
}

impl EvalTable {
    pub fn get(&self, kind: EventKind, tolerance: f64, skip: f64) -> Option<&EvalResult> {
        self.cells
            .iter()
            .find(|c| c.kind == kind && c.tolerance == tolerance && c.skip == skip)
            .map(|c| &c.result)
    }

    pub fn f1(&self, kind: EventKind, tolerance: f64, skip: f64) -> Option<f64> {
        self.get(kind, tolerance, skip).map(|r| r.f1)
    }
}

/// Scores a clip for every (kind, tolerance, skip) combination. Downbeats are
/// the downbeat-flagged events against the annotated downbeats.
pub fn evaluate_clip(
    events: &[BeatEvent],
    annotation: &Annotation,
    tolerances: &[f64],
    skips: &[f64],
) -> Result<EvalTable> {
    let beats: Vec<f64> = events.iter().map(|e| e.time).collect();
    let downbeats: Vec<f64> = events
        .iter()
        .filter(|e| e.is_downbeat)
        .map(|e| e.time)
        .collect();
    let mut cells = Vec::new();
    for &skip in skips {
        for &tolerance in tolerances {
            for (kind, est, reference) in [
                (EventKind::Beat, &beats, &annotation.beats),
                (EventKind::Downbeat, &downbeats, &annotation.downbeats),
            ] {
                let result = f_measure(
                    &apply_skip(est, skip),
                    &apply_skip(reference, skip),
                    tolerance,
                )?;
                cells.push(EvalCell {
                    kind,
                    tolerance,
                    skip,
                    result,
                });
            }
        }
    }
    Ok(EvalTable { cells })
}

/// [`evaluate_clip`] with the default tolerances and skips (8 cells).
pub fn evaluate_clip_default(events: &[BeatEvent], annotation: &Annotation) -> Result<EvalTable> {
    evaluate_clip(events, annotation, &TOLERANCES, &SKIPS)
}

/// Corpus means per cell, as percentages. Precision, recall and F1 are
/// averaged; counts are summed.
pub fn aggregate(tables: &[EvalTable]) -> Result<EvalTable> {
    let first = tables.first().ok_or(Error::EmptyInput)?;
    let n = tables.len() as f64;
    let mut cells = first.cells.clone();
    for cell in cells.iter_mut() {
        cell.result = EvalResult::default();
    }
    for table in tables {
        if table.cells.len() != cells.len() {
            return Err(Error::MismatchedTables);
        }
        for (acc, cell) in cells.iter_mut().zip(&table.cells) {
            if !acc.same_key(cell) {
                return Err(Error::MismatchedTables);
            }
            let (a, r) = (&mut acc.result, &cell.result);
            a.f1 += 100.0 * r.f1 / n;
            a.precision += 100.0 * r.precision / n;
            a.recall += 100.0 * r.recall / n;
            a.true_positives += r.true_positives;
            a.false_positives += r.false_positives;
            a.false_negatives += r.false_negatives;
        }
    }
    Ok(EvalTable { cells })
}
