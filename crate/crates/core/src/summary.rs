//! Keyshot summaries under a duration budget.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::Segmentation;

/// Default share of the video a summary may cover.
pub const DEFAULT_BUDGET: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectStrategy {
    /// Highest-scoring intervals first, skipping any that no longer fit.
    Rank,
    /// Exact 0/1 knapsack on `score * length`.
    Knapsack,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyshot {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl Keyshot {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub selected: Vec<bool>,
    /// Chosen intervals in temporal order.
    pub keyshots: Vec<Keyshot>,
}

impl Summary {
    pub fn selected_frames(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// Largest number of frames a summary of a `frames`-long video may hold.
pub fn capacity(frames: usize, budget: f64) -> usize {
    // The epsilon absorbs products like 0.15 * 60 = 8.999...
    (budget * frames as f64 + 1e-9).floor() as usize
}

/// Mean frame score of every interval.
pub fn interval_scores(frame_scores: &[f64], seg: &Segmentation) -> Result<Vec<f64>> {
    if frame_scores.len() != seg.frames() {
        return Err(Error::ShapeMismatch {
            op: "interval_scores",
            lhs: vec![frame_scores.len()],
            rhs: vec![seg.frames()],
        });
    }
    Ok(seg
        .intervals()
        .iter()
        .map(|&(s, e)| frame_scores[s..e].iter().sum::<f64>() / (e - s) as f64)
        .collect())
}

fn rank_select(lengths: &[usize], scores: &[f64], cap: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    // Stable sort keeps earlier intervals first among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut left = cap;
    let mut chosen = Vec::new();
    for i in order {
        if lengths[i] <= left {
            left -= lengths[i];
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    chosen
}

fn knapsack_select(lengths: &[usize], scores: &[f64], cap: usize) -> Vec<usize> {
    let n = lengths.len();
    let width = cap + 1;
    // best[i * width + c]: best value from items [0, i) with capacity c.
    let mut best = vec![0.0f64; (n + 1) * width];
    for i in 0..n {
        let (w, v) = (lengths[i], scores[i] * lengths[i] as f64);
        for c in 0..width {
            let skip = best[i * width + c];
            let take = if w <= c { best[i * width + c - w] + v } else { f64::NEG_INFINITY };
            best[(i + 1) * width + c] = if take > skip { take } else { skip };
        }
    }
    let mut chosen = Vec::new();
    let mut c = cap;
    for i in (0..n).rev() {
        if best[(i + 1) * width + c] != best[i * width + c] {
            chosen.push(i);
            c -= lengths[i];
        }
    }
    chosen.reverse();
    chosen
}

/// Choose keyshots from the intervals of `seg` so that at most
/// `floor(budget * frames)` frames are selected.
pub fn select_keyshots(
    seg: &Segmentation,
    scores: &[f64],
    budget: f64,
    strategy: SelectStrategy,
) -> Result<Summary> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(Error::invalid(format!("budget must be in (0, 1], got {budget}")));
    }
    let intervals = seg.intervals();
    if scores.len() != intervals.len() {
        return Err(Error::ShapeMismatch {
            op: "select_keyshots",
            lhs: vec![scores.len()],
            rhs: vec![intervals.len()],
        });
    }
    let lengths: Vec<usize> = intervals.iter().map(|&(s, e)| e - s).collect();
    let cap = capacity(seg.frames(), budget);
    let chosen = match strategy {
        SelectStrategy::Rank => rank_select(&lengths, scores, cap),
        SelectStrategy::Knapsack => knapsack_select(&lengths, scores, cap),
    };
    let mut selected = vec![false; seg.frames()];
    let keyshots = chosen
        .into_iter()
        .map(|i| {
            let (start, end) = intervals[i];
            selected[start..end].iter_mut().for_each(|s| *s = true);
            Keyshot {
                start,
                end,
                score: scores[i],
            }
        })
        .collect();
    Ok(Summary { selected, keyshots })
}

/// Frame scores -> interval scores -> keyshot summary.
pub fn summarize_scores(
    frame_scores: &[f64],
    seg: &Segmentation,
    budget: f64,
    strategy: SelectStrategy,
) -> Result<Summary> {
    let scores = interval_scores(frame_scores, seg)?;
    select_keyshots(seg, &scores, budget, strategy)
}

/// Per-frame timeline: `frame_index,gt_score,predicted_score,selected`.
pub fn timeline_csv(gt: &[f64], predicted: &[f64], summary: &Summary) -> Result<String> {
    if gt.len() != predicted.len() || gt.len() != summary.selected.len() {
        return Err(Error::ShapeMismatch {
            op: "timeline_csv",
            lhs: vec![gt.len(), predicted.len()],
            rhs: vec![summary.selected.len()],
        });
    }
    let mut out = String::from("frame_index,gt_score,predicted_score,selected\n");
    for (i, ((g, p), s)) in gt.iter().zip(predicted).zip(&summary.selected).enumerate() {
        writeln!(out, "{i},{g},{p},{}", u8::from(*s)).expect("write to string");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_scores() {
        let seg = Segmentation::new(vec![3, 7], 10).unwrap();
        assert_eq!(interval_scores(&[0.5; 10], &seg).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn interval_means_by_hand() {
        let seg = Segmentation::new(vec![2], 4).unwrap();
        assert_eq!(interval_scores(&[1.0, 1.0, 0.0, 0.0], &seg).unwrap(), vec![1.0, 0.0]);
        assert!(interval_scores(&[1.0; 3], &seg).is_err());
    }

    #[test]
    fn nothing_fits() {
        let seg = Segmentation::whole(100).unwrap();
        for strategy in [SelectStrategy::Rank, SelectStrategy::Knapsack] {
            let s = select_keyshots(&seg, &[1.0], 0.15, strategy).unwrap();
            assert!(s.keyshots.is_empty());
            assert_eq!(s.selected_frames(), 0);
        }
    }

    #[test]
    fn rank_hand_trace() {
        // three length-10 intervals then the 70-frame remainder
        let seg = Segmentation::new(vec![10, 20, 30], 100).unwrap();
        let s = select_keyshots(&seg, &[0.9, 0.5, 0.1, 0.0], 0.15, SelectStrategy::Rank).unwrap();
        assert_eq!(s.keyshots.len(), 1);
        assert_eq!((s.keyshots[0].start, s.keyshots[0].end), (0, 10));
    }

    #[test]
    fn rank_skips_and_continues() {
        let seg = Segmentation::new(vec![10, 12], 20).unwrap();
        // capacity 3: best interval (len 10) does not fit, the short one does
        let s = select_keyshots(&seg, &[0.9, 0.5, 0.1], 0.15, SelectStrategy::Rank).unwrap();
        assert_eq!(s.keyshots.len(), 1);
        assert_eq!(s.keyshots[0].start, 10);
    }

    #[test]
    fn budget_bounds() {
        let seg = Segmentation::whole(5).unwrap();
        assert!(select_keyshots(&seg, &[1.0], 0.0, SelectStrategy::Rank).is_err());
        assert!(select_keyshots(&seg, &[1.0], 1.5, SelectStrategy::Rank).is_err());
        assert_eq!(select_keyshots(&seg, &[1.0], 1.0, SelectStrategy::Rank).unwrap().selected_frames(), 5);
    }

    #[test]
    fn capacity_floors() {
        assert_eq!(capacity(100, 0.15), 15);
        assert_eq!(capacity(60, 0.15), 9);
        assert_eq!(capacity(6, 0.15), 0);
    }

    #[test]
    fn timeline_format() {
        let seg = Segmentation::new(vec![1], 2).unwrap();
        let s = select_keyshots(&seg, &[0.9, 0.1], 0.5, SelectStrategy::Rank).unwrap();
        let csv = timeline_csv(&[0.25, 0.5], &[0.75, 0.125], &s).unwrap();
        assert_eq!(csv, "frame_index,gt_score,predicted_score,selected\n0,0.25,0.75,1\n1,0.5,0.125,0\n");
    }

    fn instance() -> impl proptest::strategy::Strategy<Value = (Vec<usize>, Vec<f64>, f64)> {
        (1usize..200).prop_flat_map(|t| {
            (
                proptest::collection::btree_set(1..t.max(2), 0..t.clamp(1, 20)),
                0.05f64..1.0,
            )
                .prop_flat_map(move |(cps, budget)| {
                    let cps: Vec<usize> = cps.into_iter().filter(|&c| c < t).collect();
                    let n = cps.len() + 1;
                    (
                        Just(cps),
                        proptest::collection::vec(0.0f64..1.0, n),
                        Just(budget),
                        Just(t),
                    )
                })
                .prop_map(|(cps, scores, budget, t)| {
                    let mut v = cps;
                    v.push(t);
                    (v, scores, budget)
                })
        })
    }

    proptest! {
        #[test]
        fn budget_never_exceeded((mut cps, scores, budget) in instance()) {
            let t = cps.pop().unwrap();
            let seg = Segmentation::new(cps, t).unwrap();
            for strategy in [SelectStrategy::Rank, SelectStrategy::Knapsack] {
                let s = select_keyshots(&seg, &scores, budget, strategy).unwrap();
                prop_assert!(s.selected_frames() <= capacity(t, budget));
                let union: usize = s.keyshots.iter().map(Keyshot::len).sum();
                prop_assert_eq!(union, s.selected_frames());
            }
        }

        #[test]
        fn raising_a_chosen_score_keeps_it((mut cps, scores, budget) in instance(), bump in 0.0f64..2.0) {
            let t = cps.pop().unwrap();
            let seg = Segmentation::new(cps, t).unwrap();
            let s = select_keyshots(&seg, &scores, budget, SelectStrategy::Rank).unwrap();
            let intervals = seg.intervals();
            for k in &s.keyshots {
                let idx = intervals.iter().position(|&(a, _)| a == k.start).unwrap();
                let mut raised = scores.clone();
                raised[idx] += bump;
                let s2 = select_keyshots(&seg, &raised, budget, SelectStrategy::Rank).unwrap();
                prop_assert!(s2.keyshots.iter().any(|k2| k2.start == k.start));
            }
        }
    }
}
