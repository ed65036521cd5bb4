//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use support::*;
use tempfile::tempdir;
use vsmeta::eval::{consolidate_gt_trace, prf, sweep_stats, FrameSet, SweepGrid};
use vsmeta::gradcheck::{
    first_order_step, learner_gradient_checks, library_step, meta_oracle_checks, op_gradient_checks,
    quadratic_oracle_check, CheckResult, FD_TOLERANCE,
};
use vsmeta::learner::{FrameScorer, LearnerConfig, VsLstm};
use vsmeta::meta::probe::{QuadTask, Quadratic};
use vsmeta::meta::{meta_step, sample_pair_indices, HyperParams, InnerGrad, L1Objective, Mode};
use vsmeta::params::ParamSet;
use vsmeta::segmentation::{kts, Segmentation};
use vsmeta::summary::{capacity, select_keyshots, SelectStrategy};
use vsmeta::tensor::Tensor;

/// Reference run of the end-to-end experiment (seed 0), recorded when the
/// thresholds were fixed. Reported next to the fresh numbers.
const REFERENCE: Reference = Reference {
    initial_val_loss: 0.1952,
    best_val_loss: 0.0374,
    baseline_f: 30.27,
    test_f: 43.96,
};
const MIN_VAL_IMPROVEMENT: f64 = 0.30;

struct Reference {
    initial_val_loss: f64,
    best_val_loss: f64,
    baseline_f: f64,
    test_f: f64,
}

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn worst(results: &[CheckResult]) -> (bool, f64, usize) {
    let ok = results.iter().all(|r| r.passed);
    let max = results.iter().map(|r| r.max_error).fold(0.0, f64::max);
    let min_instances = results.iter().map(|r| r.instances).min().unwrap_or(0);
    (ok, max, min_instances)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut results = op_gradient_checks(20, 2024).map_err(|e| e.to_string())?;
    results.extend(learner_gradient_checks(20, 2025).map_err(|e| e.to_string())?);
    let elapsed = start.elapsed();
    let (ok, max, n) = worst(&results);
    let failing: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    check(
        ok && n >= 20 && elapsed < Duration::from_secs(60),
        format!(
            "{} checks, >= {n} instances each, max rel err {max:.2e} (tol {FD_TOLERANCE:.0e}), {:.1}s{}",
            results.len(),
            elapsed.as_secs_f64(),
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }
        ),
    )
}

fn second_order_correctness() -> Outcome {
    let start = Instant::now();
    let results = meta_oracle_checks(20, 77).map_err(|e| e.to_string())?;
    let first = |t: &ParamSet<f64>, a: &QuadTask, b: &QuadTask, hp: &HyperParams| first_order_step(&Quadratic, t, a, b, hp);
    let fo = quadratic_oracle_check("first_order", &first, InnerGrad::Standard, 20, 77).map_err(|e| e.to_string())?;
    let lib = quadratic_oracle_check("library", &library_step, InnerGrad::Standard, 20, 77).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (ok, max, _) = worst(&results);
    check(
        ok && lib.passed && !fo.passed && elapsed < Duration::from_secs(5),
        format!(
            "meta step max rel err {max:.2e} (tol 1e-8) over alpha {{0.1, 0.5}} x n {{1, 2}}; first-order err {:.2e} rejected: {}; {:.2}s",
            fo.max_error,
            !fo.passed,
            elapsed.as_secs_f64()
        ),
    )
}

fn mode_identities() -> Outcome {
    let model = VsLstm::new(LearnerConfig {
        input_dim: 3,
        lstm_hidden: 3,
        mlp_hidden: 4,
    })
    .map_err(|e| e.to_string())?;
    let obj = L1Objective::new(&model);
    let tasks = random_tasks(300, 8, 3);
    let run = |mode: Mode, alpha: f64, beta: f64, seed: u64| -> Option<usize> {
        let hp = HyperParams {
            alpha,
            beta,
            n: 1,
            mode,
            ..HyperParams::default()
        };
        let mut r = rng(seed);
        let mut meta = model.init_params::<f64>(seed);
        let mut plain = meta.clone();
        for step in 0..100 {
            let (i, j) = sample_pair_indices(tasks.len(), &mut r).unwrap();
            meta = meta_step(&obj, &meta, &tasks[i], &tasks[j], &hp).unwrap().0;
            plain = match mode {
                Mode::OneStage => sgd(&model, &plain, &tasks[i], alpha),
                _ => sgd(&model, &plain, &tasks[j], beta),
            };
            if !bit_equal(&meta, &plain) {
                return Some(step);
            }
        }
        None
    };
    let two = run(Mode::TwoStageSuccessive, 0.0, 0.05, 1);
    let one = run(Mode::OneStage, 0.05, 0.0, 2);
    check(
        two.is_none() && one.is_none(),
        format!("100 steps each, bit-exact; two-stage(alpha=0) diverged at {two:?}, one-stage(n=1) at {one:?}"),
    )
}

fn kts_oracle_agreement() -> Outcome {
    let mut r = rng(400);
    let mut mismatches = 0;
    for case in 0..50 {
        let t = r.random_range(1..=15);
        let d = r.random_range(1..=4);
        let max_segments = r.random_range(1..=4);
        let weight = [0.05, 0.2, 1.0][case % 3];
        let x = random_matrix(&mut r, t, d, -1.0, 1.0);
        let seg = kts(&x, max_segments, weight).map_err(|e| e.to_string())?;
        if seg.change_points() != kts_oracle(&x, max_segments, weight).0.as_slice() {
            mismatches += 1;
        }
    }
    let u = [1.0, 0.0, 0.0, 0.0];
    let w = [0.0, 1.0, 0.0, 0.0];
    let x = Tensor::matrix(30, 4, (0..30).flat_map(|i| if i < 13 { u } else { w }).collect()).unwrap();
    let blocks = kts(&x, 4, 1.0).map_err(|e| e.to_string())?;
    check(
        mismatches == 0 && blocks.change_points() == [13],
        format!(
            "{mismatches}/50 mismatches vs exhaustive search; two-block change points {:?} (true [13])",
            blocks.change_points()
        ),
    )
}

fn random_intervals(r: &mut rand_chacha::ChaCha8Rng, max: usize) -> (Segmentation, Vec<usize>, Vec<f64>) {
    let k = r.random_range(1..=max);
    let lengths: Vec<usize> = (0..k).map(|_| r.random_range(1..=12)).collect();
    let cps: Vec<usize> = lengths[..k - 1]
        .iter()
        .scan(0, |acc, l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    let t = lengths.iter().sum();
    let scores = (0..k).map(|_| r.random_range(0.0..1.0)).collect();
    (Segmentation::new(cps, t).unwrap(), lengths, scores)
}

fn knapsack_and_budget() -> Outcome {
    let mut r = rng(500);
    let mut knap_bad = 0;
    for _ in 0..100 {
        let (seg, lengths, scores) = random_intervals(&mut r, 12);
        let budget = r.random_range(0.05..0.6);
        let s = select_keyshots(&seg, &scores, budget, SelectStrategy::Knapsack).map_err(|e| e.to_string())?;
        let got: f64 = s.keyshots.iter().map(|k| k.score * k.len() as f64).sum();
        let want = knapsack_oracle(&lengths, &scores, capacity(seg.frames(), budget));
        if (got - want).abs() > 1e-9 {
            knap_bad += 1;
        }
    }
    let mut over = 0;
    for _ in 0..1000 {
        let (seg, _, scores) = random_intervals(&mut r, 20);
        let budget = r.random_range(0.01..=1.0);
        for strategy in [SelectStrategy::Rank, SelectStrategy::Knapsack] {
            let s = select_keyshots(&seg, &scores, budget, strategy).map_err(|e| e.to_string())?;
            if s.selected_frames() > capacity(seg.frames(), budget) {
                over += 1;
            }
        }
    }
    check(
        knap_bad == 0 && over == 0,
        format!("knapsack {knap_bad}/100 off the enumeration optimum; budget exceeded {over}/2000"),
    )
}

fn metrics() -> Outcome {
    let mut bad = 0;
    let set = |idx: &[usize], t| FrameSet::from_indices(idx, t).unwrap();
    for &(a, b, t, p, r, f) in HAND_CASES {
        let got = prf(&set(a, t), &set(b, t)).map_err(|e| e.to_string())?;
        if (got.precision - p).abs() > 1e-12 || (got.recall - r).abs() > 1e-12 || (got.f_score - f).abs() > 1e-9 {
            bad += 1;
        }
    }
    let derived = prf(&set(&(0..20).collect::<Vec<_>>(), 40), &set(&(0..10).collect::<Vec<_>>(), 40)).unwrap();
    let derived_ok = derived.precision == 0.5 && derived.recall == 1.0 && (derived.f_score - 66.67).abs() < 0.01;
    let mut rng = rng(600);
    let mut cons_bad = 0;
    for _ in 0..50 {
        let t = rng.random_range(1..=8);
        let n = rng.random_range(1..=3);
        let users: Vec<Vec<bool>> = (0..n).map(|_| random_mask(&mut rng, t, 0.4)).collect();
        let fs: Vec<FrameSet> = users.iter().cloned().map(FrameSet::new).collect();
        let (_, steps) = consolidate_gt_trace(&fs).map_err(|e| e.to_string())?;
        let want = brute_consolidation(&users);
        let monotone = steps.windows(2).all(|w| w[1].objective >= w[0].objective);
        let same = steps.len() == want.len()
            && steps
                .iter()
                .zip(&want)
                .all(|(s, (f, o))| s.frame == *f && (s.objective - o).abs() < 1e-9);
        if !(monotone && same) {
            cons_bad += 1;
        }
    }
    check(
        bad == 0 && derived_ok && cons_bad == 0,
        format!(
            "{} hand cases, {bad} wrong; 20/10/10 case P={} R={} F={:.4}; consolidation {cons_bad}/50 off brute force",
            HAND_CASES.len() + 1,
            derived.precision,
            derived.recall,
            derived.f_score
        ),
    )
}

const REFERENCE_DATA: &[&str] = &["--num-videos", "12", "--min-frames", "40", "--max-frames", "80", "--dim", "16"];

const REFERENCE_TRAIN: &[&str] = &[
    "train",
    "--data",
    DATA,
    "--test-dataset",
    "c",
    "--val-fraction",
    "0.2",
    "--lstm-hidden",
    "16",
    "--mlp-hidden",
    "16",
    "--alpha",
    "0.01",
    "--beta",
    "0.5",
    "--n",
    "1",
    "--max-iters",
    "3000",
    "--patience",
    "800",
    "--eval-interval",
    "10",
    "--max-segments",
    "24",
    "--seed",
    "0",
];

fn end_to_end(dir: &Path) -> Outcome {
    let start = Instant::now();
    gen_three(dir, REFERENCE_DATA);
    ok(dir, REFERENCE_TRAIN);
    let elapsed = start.elapsed();
    let r = json(dir.join("train_report.json"));
    let num = |v: &serde_json::Value| v.as_f64().unwrap();
    let init = num(&r["training"]["initial_val_loss"]);
    let best = num(&r["training"]["best_val_loss"]);
    let base_f = num(&r["baseline"]["mean_f_score"]);
    let test_f = num(&r["test"]["mean_f_score"]);
    let improvement = 1.0 - best / init;
    check(
        improvement >= MIN_VAL_IMPROVEMENT && test_f > base_f && elapsed < Duration::from_secs(600),
        format!(
            "val loss {init:.4} -> {best:.4} ({:.1}% better, need {:.0}%); test F {test_f:.2} vs init {base_f:.2}; \
             reference {:.4} -> {:.4}, F {:.2} vs {:.2}; {} iterations, {:.0}s",
            100.0 * improvement,
            100.0 * MIN_VAL_IMPROVEMENT,
            REFERENCE.initial_val_loss,
            REFERENCE.best_val_loss,
            REFERENCE.test_f,
            REFERENCE.baseline_f,
            r["training"]["iterations_run"],
            elapsed.as_secs_f64()
        ),
    )
}

fn sweep_statistics() -> Outcome {
    let mut r = rng(700);
    let alphas = [1e-4, 1e-3];
    let betas = [0.1, 0.01, 0.001, 0.0001, 0.00001];
    let mut grid = SweepGrid::new();
    let mut sheet = [[0.0f64; 5]; 2];
    for (i, &a) in alphas.iter().enumerate() {
        for (j, &b) in betas.iter().enumerate() {
            sheet[i][j] = r.random_range(0.0..100.0);
            grid.insert(a, b, sheet[i][j]).map_err(|e| e.to_string())?;
        }
    }
    let mut exact = true;
    for (i, &a) in alphas.iter().enumerate() {
        let row = sheet[i];
        // Cell by cell, as a spreadsheet formula would.
        let avg = (row[0] + row[1] + row[2] + row[3] + row[4]) / 5.0;
        let max = row[0].max(row[1]).max(row[2]).max(row[3]).max(row[4]);
        let s = sweep_stats(&grid, a, &betas).map_err(|e| e.to_string())?;
        exact &= s.two_avg == avg && s.two_max == max;
    }
    check(exact, format!("2x5 grid, twoAvg/twoMax bit-equal to the recomputation: {exact}"))
}

/// Every command, twice from scratch in separate directories.
fn command_sequence(dir: &Path) -> Vec<(String, Vec<u8>)> {
    gen_three(dir, &["--num-videos", "5", "--min-frames", "30", "--max-frames", "40"]);
    let mut train = vec!["train"];
    train.extend_from_slice(TINY);
    train.extend_from_slice(RATES);
    let mut sweep = vec!["sweep"];
    sweep.extend_from_slice(TINY);
    sweep.extend_from_slice(&["--alphas", "0.01,0.001", "--betas", "0.1,0.01", "--repeats", "2"]);
    let eval = ["eval", "--ckpt", "model.ckpt", "--data", DATA, "--datasets", "c", "--max-segments", "24"];
    let summarize = ["summarize", "--ckpt", "model.ckpt", "--data", "c.mlvs", "--video-id", "c_001"];
    let commands: Vec<&[&str]> = vec![&train, &eval, &summarize, &sweep, &["gradcheck", "--instances", "2"]];
    let mut outputs = Vec::new();
    for args in commands {
        outputs.push((format!("stdout of {}", args[0]), ok(dir, args).into_bytes()));
    }
    for file in [
        "a.mlvs",
        "b.mlvs",
        "c.mlvs",
        "model.ckpt",
        "train_report.json",
        "eval_report.json",
        "timeline.csv",
        "sweep.csv",
        "sweep.json",
        "gradcheck.json",
    ] {
        outputs.push((file.to_string(), read(dir.join(file))));
    }
    outputs
}

fn determinism() -> Outcome {
    let (d1, d2) = (tempdir().unwrap(), tempdir().unwrap());
    let a = command_sequence(d1.path());
    let b = command_sequence(d2.path());
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        differing.is_empty(),
        format!(
            "gen, train, eval, summarize, sweep, gradcheck: {} outputs compared, differing {differing:?}",
            a.len()
        ),
    )
}

fn main() {
    let e2e_dir = tempdir().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", Box::new(gradient_correctness)),
        ("second-order correctness", Box::new(second_order_correctness)),
        ("mode identities", Box::new(mode_identities)),
        ("KTS", Box::new(kts_oracle_agreement)),
        ("knapsack and budget", Box::new(knapsack_and_budget)),
        ("metrics", Box::new(metrics)),
        ("end-to-end synthetic experiment", Box::new(|| end_to_end(e2e_dir.path()))),
        ("sweep statistics", Box::new(sweep_statistics)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(format!("panicked: {p:?}")));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
