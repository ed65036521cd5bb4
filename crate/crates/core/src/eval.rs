//! Keyshot-overlap metrics, multi-annotator aggregation and sweep statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame membership of a summary or an annotation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSet(Vec<bool>);

impl FrameSet {
    pub fn new(mask: Vec<bool>) -> Self {
        Self(mask)
    }

    pub fn empty(frames: usize) -> Self {
        Self(vec![false; frames])
    }

    pub fn from_indices(indices: &[usize], frames: usize) -> Result<Self> {
        let mut mask = vec![false; frames];
        for &i in indices {
            if i >= frames {
                return Err(Error::invalid(format!("frame {i} out of range for {frames} frames")));
            }
            mask[i] = true;
        }
        Ok(Self(mask))
    }

    pub fn frames(&self) -> usize {
        self.0.len()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn insert(&mut self, i: usize) {
        self.0[i] = true;
    }

    pub fn mask(&self) -> &[bool] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|b| !b).collect())
    }

    pub fn overlap(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| **a && **b).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    /// Harmonic mean, in percent.
    pub f_score: f64,
}

/// Precision/recall/F from set sizes. Empty summary gives P = 0, empty
/// reference gives R = 0, and P + R = 0 gives F = 0.
pub fn prf_counts(summary: usize, reference: usize, overlap: usize) -> Prf {
    let precision = if summary == 0 { 0.0 } else { overlap as f64 / summary as f64 };
    let recall = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall) * 100.0
    };
    Prf {
        precision,
        recall,
        f_score,
    }
}

/// Overlap metrics of a generated summary `a` against a reference `b`.
pub fn prf(a: &FrameSet, b: &FrameSet) -> Result<Prf> {
    if a.frames() != b.frames() {
        return Err(Error::ShapeMismatch {
            op: "prf",
            lhs: vec![a.frames()],
            rhs: vec![b.frames()],
        });
    }
    Ok(prf_counts(a.count(), b.count(), a.overlap(b)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

/// F-score of `summary` against every annotator, aggregated.
pub fn eval_against_users(summary: &FrameSet, users: &[FrameSet], agg: Aggregation) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::invalid("no user annotations to evaluate against"));
    }
    let scores = users
        .iter()
        .map(|u| prf(summary, u).map(|p| p.f_score))
        .collect::<Result<Vec<_>>>()?;
    Ok(match agg {
        Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Sums of F-scores that are equal in exact arithmetic can differ in the last
/// bits; such near-ties count as ties so the lowest-index rule applies.
fn clearly_greater(a: f64, b: f64) -> bool {
    a > b + 1e-9 * b.abs().max(1.0)
}

/// One greedy addition during ground-truth consolidation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsolidationStep {
    pub frame: usize,
    /// Summed F-score against all users after adding `frame`.
    pub objective: f64,
}

/// Greedy single ground truth from several annotations.
///
/// Starting from the empty set, repeatedly add the frame that maximises the
/// summed F-score against all users (lowest index on ties) until no frame
/// strictly increases it. Objectives within a relative 1e-9 are ties.
pub fn consolidate_gt(users: &[FrameSet]) -> Result<FrameSet> {
    consolidate_gt_trace(users).map(|(set, _)| set)
}

/// [`consolidate_gt`] plus the sequence of additions.
pub fn consolidate_gt_trace(users: &[FrameSet]) -> Result<(FrameSet, Vec<ConsolidationStep>)> {
    let frames = users
        .first()
        .ok_or_else(|| Error::invalid("no user annotations to consolidate"))?
        .frames();
    if let Some(u) = users.iter().find(|u| u.frames() != frames) {
        return Err(Error::ShapeMismatch {
            op: "consolidate_gt",
            lhs: vec![frames],
            rhs: vec![u.frames()],
        });
    }
    let sizes: Vec<usize> = users.iter().map(FrameSet::count).collect();
    let mut overlaps = vec![0usize; users.len()];
    let mut chosen = FrameSet::empty(frames);
    let mut size = 0;
    let mut current = 0.0;
    let mut steps = Vec::new();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for f in (0..frames).filter(|&f| !chosen.contains(f)) {
            let obj: f64 = users
                .iter()
                .enumerate()
                .map(|(j, u)| prf_counts(size + 1, sizes[j], overlaps[j] + usize::from(u.contains(f))).f_score)
                .sum();
            if best.is_none_or(|(_, b)| clearly_greater(obj, b)) {
                best = Some((f, obj));
            }
        }
        match best {
            Some((f, obj)) if clearly_greater(obj, current) => {
                chosen.insert(f);
                size += 1;
                for (j, u) in users.iter().enumerate() {
                    overlaps[j] += usize::from(u.contains(f));
                }
                current = obj;
                steps.push(ConsolidationStep { frame: f, objective: obj });
            }
            _ => break,
        }
    }
    Ok((chosen, steps))
}

/// F-scores of a hyperparameter sweep at fixed `n`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    cells: Vec<SweepCell>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub beta: f64,
    pub f_score: f64,
}

impl SweepGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, alpha: f64, beta: f64, f_score: f64) -> Result<()> {
        if !(0.0..=100.0).contains(&f_score) {
            return Err(Error::invalid(format!("F-score {f_score} outside [0, 100]")));
        }
        match self.cells.iter_mut().find(|c| c.alpha == alpha && c.beta == beta) {
            Some(c) => c.f_score = f_score,
            None => self.cells.push(SweepCell { alpha, beta, f_score }),
        }
        Ok(())
    }

    pub fn get(&self, alpha: f64, beta: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.alpha == alpha && c.beta == beta)
            .map(|c| c.f_score)
    }

    pub fn cells(&self) -> &[SweepCell] {
        &self.cells
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub two_avg: f64,
    pub two_max: f64,
}

/// Mean and maximum F-score over `betas` at `alpha`.
pub fn sweep_stats(grid: &SweepGrid, alpha: f64, betas: &[f64]) -> Result<SweepStats> {
    if betas.is_empty() {
        return Err(Error::invalid("no beta values"));
    }
    let scores = betas
        .iter()
        .map(|&b| {
            grid.get(alpha, b)
                .ok_or_else(|| Error::invalid(format!("sweep grid has no cell alpha={alpha}, beta={b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepStats {
        two_avg: scores.iter().sum::<f64>() / scores.len() as f64,
        two_max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
