//! Kernel temporal segmentation with a linear (dot-product) kernel.
//!
//! A segment's scatter is `sum_t k(x_t, x_t) - (1/len) sum_{t,t'} k(x_t, x_t')`,
//! which for the linear kernel is `sum_t |x_t|^2 - |sum_t x_t|^2 / len`.
//! [`kts`] minimises total scatter plus `w * m * (ln(T/m) + 1)` over the
//! number of segments `m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Change points splitting `[0, frames)` into consecutive intervals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    change_points: Vec<usize>,
    frames: usize,
}

impl Segmentation {
    pub fn new(change_points: Vec<usize>, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::invalid("segmentation of an empty sequence"));
        }
        let mut prev = 0;
        for &c in &change_points {
            if c <= prev || c >= frames {
                return Err(Error::invalid(format!(
                    "change points must be strictly increasing in (0, {frames}): {change_points:?}"
                )));
            }
            prev = c;
        }
        Ok(Self { change_points, frames })
    }

    /// A single interval covering everything.
    pub fn whole(frames: usize) -> Result<Self> {
        Self::new(Vec::new(), frames)
    }

    pub fn change_points(&self) -> &[usize] {
        &self.change_points
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_segments(&self) -> usize {
        self.change_points.len() + 1
    }

    /// Half-open `(start, end)` intervals in order.
    pub fn intervals(&self) -> Vec<(usize, usize)> {
        let mut bounds = Vec::with_capacity(self.change_points.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.change_points);
        bounds.push(self.frames);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Scatter of every segment `[start, end)`, precomputed in `O(T^2 D)` so that
/// lookups are `O(1)`.
#[derive(Clone, Debug)]
pub struct ScatterTable {
    frames: usize,
    /// Row-major `frames x (frames + 1)`: entry `(s, e)` for `e > s`.
    table: Vec<f64>,
}

fn rows_f64<T: Real>(features: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    let (t, d) = features.dims2("kts features")?;
    Ok((t, d, features.to_f64_vec()))
}

impl ScatterTable {
    pub fn new<T: Real>(features: &Tensor<T>) -> Result<Self> {
        let (frames, dim, x) = rows_f64(features)?;
        let norms: Vec<f64> = x.chunks(dim).map(|r| r.iter().map(|v| v * v).sum()).collect();
        let width = frames + 1;
        let mut table = vec![0.0; frames * width];
        let mut running = vec![0.0; dim];
        for s in 0..frames {
            running.iter_mut().for_each(|v| *v = 0.0);
            let mut sq = 0.0; // |running|^2
            let mut diag = 0.0;
            for e in s..frames {
                let row = &x[e * dim..(e + 1) * dim];
                let dot: f64 = running.iter().zip(row).map(|(a, b)| a * b).sum();
                sq += 2.0 * dot + norms[e];
                for (r, v) in running.iter_mut().zip(row) {
                    *r += v;
                }
                diag += norms[e];
                let len = (e - s + 1) as f64;
                table[s * width + e + 1] = (diag - sq / len).max(0.0);
            }
        }
        Ok(Self { frames, table })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn scatter(&self, start: usize, end: usize) -> f64 {
        debug_assert!(start < end && end <= self.frames);
        self.table[start * (self.frames + 1) + end]
    }

    pub fn total(&self, seg: &Segmentation) -> f64 {
        seg.intervals().iter().map(|&(s, e)| self.scatter(s, e)).sum()
    }
}

/// Scatter of the frames `[start, end)`.
pub fn segment_scatter<T: Real>(features: &Tensor<T>, start: usize, end: usize) -> Result<f64> {
    let (frames, dim, x) = rows_f64(features)?;
    if start >= end || end > frames {
        return Err(Error::invalid(format!(
            "segment [{start}, {end}) is empty or outside [0, {frames})"
        )));
    }
    let mut sum = vec![0.0; dim];
    let mut diag = 0.0;
    for row in x[start * dim..end * dim].chunks(dim) {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
        diag += row.iter().map(|v| v * v).sum::<f64>();
    }
    let sq: f64 = sum.iter().map(|v| v * v).sum();
    Ok((diag - sq / (end - start) as f64).max(0.0))
}

/// Model-selection penalty for `segments` segments over `frames` frames.
pub fn penalty(frames: usize, segments: usize, weight: f64) -> f64 {
    let m = segments as f64;
    weight * m * ((frames as f64 / m).ln() + 1.0)
}

/// Total scatter plus penalty.
pub fn penalized_objective(table: &ScatterTable, seg: &Segmentation, weight: f64) -> f64 {
    table.total(seg) + penalty(seg.frames(), seg.num_segments(), weight)
}

/// Default segment ceiling: one segment per 40 frames, at least one.
pub fn default_max_segments(frames: usize) -> usize {
    frames.div_ceil(40).max(1)
}

/// Minimal-scatter segmentations for every segment count `1..=max_segments`.
///
/// `cost[m][s]` is the best scatter of `[s, T)` split into `m` segments. The DP
/// runs right to left so that, among equal-cost choices, the earliest next
/// change point wins; the recovered change-point lists are therefore the
/// lexicographically smallest optimal ones.
struct SuffixDp {
    cost: Vec<Vec<f64>>,
    next: Vec<Vec<usize>>,
}

impl SuffixDp {
    fn solve(table: &ScatterTable, max_segments: usize) -> Self {
        let t = table.frames();
        let mut cost = vec![vec![f64::INFINITY; t + 1]; max_segments + 1];
        let mut next = vec![vec![usize::MAX; t + 1]; max_segments + 1];
        for s in 0..t {
            cost[1][s] = table.scatter(s, t);
            next[1][s] = t;
        }
        for m in 2..=max_segments {
            // [s, T) needs at least m frames.
            for s in 0..t.saturating_sub(m - 1) {
                let mut best = f64::INFINITY;
                let mut arg = usize::MAX;
                for e in s + 1..=t - (m - 1) {
                    let c = table.scatter(s, e) + cost[m - 1][e];
                    if c < best {
                        best = c;
                        arg = e;
                    }
                }
                cost[m][s] = best;
                next[m][s] = arg;
            }
        }
        Self { cost, next }
    }

    fn change_points(&self, segments: usize) -> Vec<usize> {
        let mut cps = Vec::with_capacity(segments - 1);
        let mut s = 0;
        for m in (2..=segments).rev() {
            s = self.next[m][s];
            cps.push(s);
        }
        cps
    }
}

/// Best segmentation with exactly `segments` segments.
pub fn segment_fixed(table: &ScatterTable, segments: usize) -> Result<Segmentation> {
    let t = table.frames();
    if segments == 0 || segments > t {
        return Err(Error::invalid(format!("cannot split {t} frames into {segments} segments")));
    }
    let dp = SuffixDp::solve(table, segments);
    Segmentation::new(dp.change_points(segments), t)
}

/// Kernel temporal segmentation with automatic choice of the segment count.
///
/// Ties in the penalised objective go to fewer segments, then to earlier
/// change points.
pub fn kts<T: Real>(features: &Tensor<T>, max_segments: usize, penalty_weight: f64) -> Result<Segmentation> {
    if max_segments == 0 {
        return Err(Error::invalid("max_segments must be >= 1"));
    }
    if !(penalty_weight >= 0.0 && penalty_weight.is_finite()) {
        return Err(Error::invalid(format!("penalty weight must be >= 0, got {penalty_weight}")));
    }
    let table = ScatterTable::new(features)?;
    kts_with_table(&table, max_segments, penalty_weight)
}

pub fn kts_with_table(table: &ScatterTable, max_segments: usize, penalty_weight: f64) -> Result<Segmentation> {
    let t = table.frames();
    let max_m = max_segments.min(t);
    let dp = SuffixDp::solve(table, max_m);
    let mut best_m = 1;
    let mut best = f64::INFINITY;
    for m in 1..=max_m {
        let obj = dp.cost[m][0] + penalty(t, m, penalty_weight);
        if obj < best {
            best = obj;
            best_m = m;
        }
    }
    Segmentation::new(dp.change_points(best_m), t)
}
