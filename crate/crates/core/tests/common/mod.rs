//! Brute-force references shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsmeta::graph::Graph;
use vsmeta::learner::{l1_loss, FrameScorer};
use vsmeta::meta::Task;
use vsmeta::params::ParamSet;
use vsmeta::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Within-segment scatter by the defining double sum.
pub fn naive_scatter(x: &Tensor<f64>, start: usize, end: usize) -> f64 {
    let dot = |a: usize, b: usize| -> f64 { x.row(a).iter().zip(x.row(b)).map(|(p, q)| p * q).sum() };
    let diag: f64 = (start..end).map(|t| dot(t, t)).sum();
    let mut all = 0.0;
    for a in start..end {
        for b in start..end {
            all += dot(a, b);
        }
    }
    diag - all / (end - start) as f64
}

pub fn naive_objective(x: &Tensor<f64>, cps: &[usize], weight: f64) -> f64 {
    let t = x.shape()[0];
    let mut bounds = vec![0];
    bounds.extend_from_slice(cps);
    bounds.push(t);
    let scatter: f64 = bounds.windows(2).map(|w| naive_scatter(x, w[0], w[1])).sum();
    let m = (cps.len() + 1) as f64;
    scatter + weight * m * ((t as f64 / m).ln() + 1.0)
}

/// Every change-point set with at most `max_segments - 1` points, in
/// increasing size and lexicographic order within a size.
pub fn all_segmentations(frames: usize, max_segments: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let inner: Vec<usize> = (1..frames).collect();
    for k in 0..max_segments.min(frames) {
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            out.push(combo.iter().map(|&i| inner[i]).collect());
            // next k-combination of inner indices
            let mut i = k;
            while i > 0 && combo[i - 1] == inner.len() - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..k {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    out
}

/// Exhaustive minimiser of the penalized objective; the first minimum in
/// [`all_segmentations`] order wins (fewer segments, then earlier points).
pub fn kts_oracle(x: &Tensor<f64>, max_segments: usize, weight: f64) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for cps in all_segmentations(x.shape()[0], max_segments) {
        let obj = naive_objective(x, &cps, weight);
        if best.as_ref().is_none_or(|(_, b)| obj < *b - 1e-9 * b.abs().max(1.0)) {
            best = Some((cps, obj));
        }
    }
    best.unwrap()
}

/// Best `sum(score * len)` over all subsets fitting `cap`.
pub fn knapsack_oracle(lengths: &[usize], scores: &[f64], cap: usize) -> f64 {
    let k = lengths.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << k) {
        let (mut len, mut val) = (0, 0.0);
        for i in 0..k {
            if mask & (1 << i) != 0 {
                len += lengths[i];
                val += scores[i] * lengths[i] as f64;
            }
        }
        if len <= cap {
            best = best.max(val);
        }
    }
    best
}

/// Precision, recall and F (percent) straight from the masks.
pub fn plain_prf(a: &[bool], b: &[bool]) -> (f64, f64, f64) {
    let na = a.iter().filter(|&&x| x).count() as f64;
    let nb = b.iter().filter(|&&x| x).count() as f64;
    let both = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let p = if na == 0.0 { 0.0 } else { both / na };
    let r = if nb == 0.0 { 0.0 } else { both / nb };
    let f = if p + r == 0.0 { 0.0 } else { 200.0 * p * r / (p + r) };
    (p, r, f)
}

/// Exact fraction `num / den` with `den > 0`.
#[derive(Clone, Copy, Debug)]
pub struct Frac {
    pub num: i128,
    pub den: i128,
}

impl Frac {
    fn add(self, o: Frac) -> Frac {
        Frac {
            num: self.num * o.den + o.num * self.den,
            den: self.den * o.den,
        }
    }

    fn gt(self, o: Frac) -> bool {
        self.num * o.den > o.num * self.den
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// F in percent as an exact fraction: `200 |A and B| / (|A| + |B|)`.
pub fn exact_f(a: &[bool], b: &[bool]) -> Frac {
    let na = a.iter().filter(|&&x| x).count() as i128;
    let nb = b.iter().filter(|&&x| x).count() as i128;
    let both = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as i128;
    if both == 0 {
        Frac { num: 0, den: 1 }
    } else {
        Frac {
            num: 200 * both,
            den: na + nb,
        }
    }
}

/// Greedy consolidation in exact arithmetic, recomputing every candidate's
/// objective from scratch; ties go to the lowest frame.
pub fn brute_consolidation(users: &[Vec<bool>]) -> Vec<(usize, f64)> {
    let t = users[0].len();
    let mut chosen = vec![false; t];
    let mut current = Frac { num: 0, den: 1 };
    let mut steps = Vec::new();
    loop {
        let mut best: Option<(usize, Frac)> = None;
        for f in 0..t {
            if chosen[f] {
                continue;
            }
            let mut trial = chosen.clone();
            trial[f] = true;
            let obj = users
                .iter()
                .map(|u| exact_f(&trial, u))
                .fold(Frac { num: 0, den: 1 }, Frac::add);
            if best.is_none_or(|(_, b)| obj.gt(b)) {
                best = Some((f, obj));
            }
        }
        match best {
            Some((f, obj)) if obj.gt(current) => {
                chosen[f] = true;
                current = obj;
                steps.push((f, obj.value()));
            }
            _ => return steps,
        }
    }
}

pub fn random_mask(rng: &mut ChaCha8Rng, t: usize, p: f64) -> Vec<bool> {
    (0..t).map(|_| rng.random_bool(p)).collect()
}

/// Plain gradient step on one task's L1 loss.
pub fn sgd<M: FrameScorer>(model: &M, theta: &ParamSet<f64>, task: &Task<f64>, rate: f64) -> ParamSet<f64> {
    let mut g = Graph::new();
    let leaves = theta.as_leaves(&mut g);
    let l = l1_loss(model, &mut g, &leaves, &task.features, &task.target).unwrap();
    let grads = theta.with_tensors(g.backward(l, &leaves).unwrap()).unwrap();
    theta.descend(&grads, rate).unwrap()
}

/// Random regression tasks with `3..8` frames.
pub fn random_tasks(seed: u64, count: usize, d: usize) -> Vec<Task<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let t = r.random_range(3..8);
            let x = random_matrix(&mut r, t, d, -1.0, 1.0);
            let y = Tensor::vector((0..t).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
            Task::new(format!("t{i}"), x, y).unwrap()
        })
        .collect()
}

pub fn bit_equal(a: &ParamSet<f64>, b: &ParamSet<f64>) -> bool {
    a.tensors().iter().zip(b.tensors()).all(|(x, y)| x.bit_eq(y))
}

pub type HandCase = (&'static [usize], &'static [usize], usize, f64, f64, f64);

/// (A, B, T, P, R, F) worked out by hand.
pub const HAND_CASES: &[HandCase] = &[
    (&[0, 1, 2, 3], &[0, 1, 2, 3], 10, 1.0, 1.0, 100.0),
    (&[0, 1], &[5, 6], 10, 0.0, 0.0, 0.0),
    (&[], &[1, 2], 10, 0.0, 0.0, 0.0),
    (&[1, 2], &[], 10, 0.0, 0.0, 0.0),
    (&[0, 1, 2, 3], &[2, 3], 10, 0.5, 1.0, 200.0 / 3.0),
    (&[2, 3], &[0, 1, 2, 3], 10, 1.0, 0.5, 200.0 / 3.0),
    (&[0, 1, 2], &[2, 3, 4], 10, 1.0 / 3.0, 1.0 / 3.0, 100.0 / 3.0),
    (&[0, 1, 2, 3, 4], &[4], 10, 0.2, 1.0, 100.0 / 3.0),
    (&[0, 1, 2, 3], &[0, 1, 2, 3, 4, 5, 6, 7], 10, 1.0, 0.5, 200.0 / 3.0),
    (&[0, 1, 2, 3, 4, 5], &[3, 4, 5, 6, 7, 8, 9], 10, 0.5, 3.0 / 7.0, 600.0 / 13.0),
    (&[9], &[9], 10, 1.0, 1.0, 100.0),
];
