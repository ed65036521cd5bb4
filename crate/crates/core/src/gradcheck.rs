//! Finite-difference and closed-form checks of the differentiation engine.
//!
//! Every check reports the worst error over its random instances, measured as
//! `|autodiff - reference| / max(1, |reference|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::learner::{l1_loss, FrameScorer, LearnerConfig, LinearProbe, VsLstm};
use crate::meta::probe::{closed_form_step, scalar_params, QuadTask, Quadratic};
use crate::meta::{inner_adapt, meta_step, HyperParams, InnerGrad, Mode, TaskObjective};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const FD_TOLERANCE: f64 = 1e-5;
pub const ORACLE_TOLERANCE: f64 = 1e-8;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, instances: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            instances,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    let e = (got - want).abs() / want.abs().max(1.0);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("valid shape")
}

/// A function of `inputs` reduced to a scalar loss.
type LossFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn loss_value(f: &LossFn, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let l = f(&mut g, &vars)?;
    Ok(g.value(l).item())
}

fn loss_grads(f: &LossFn, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let l = f(&mut g, &vars)?;
    g.backward(l, &vars)
}

fn perturbed(inputs: &[Tensor<f64>], i: usize, k: usize, delta: f64) -> Vec<Tensor<f64>> {
    let mut out = inputs.to_vec();
    out[i].data_mut()[k] += delta;
    out
}

/// Worst error of the gradient of `f` at `inputs` against central differences.
pub fn fd_gradient_error(f: &LossFn, inputs: &[Tensor<f64>]) -> Result<f64> {
    let ad = loss_grads(f, inputs)?;
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let hi = loss_value(f, &perturbed(inputs, i, k, FD_STEP))?;
            let lo = loss_value(f, &perturbed(inputs, i, k, -FD_STEP))?;
            let fd = (hi - lo) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(ad[i].data()[k], fd));
        }
    }
    Ok(worst)
}

fn dot(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| p * q))
        .sum()
}

fn shifted(inputs: &[Tensor<f64>], dir: &[Tensor<f64>], h: f64) -> Vec<Tensor<f64>> {
    inputs
        .iter()
        .zip(dir)
        .map(|(x, d)| {
            let data = x.data().iter().zip(d.data()).map(|(a, b)| a + h * b).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        })
        .collect()
}

/// Compares `v^T H u`, from differentiating the recorded gradient, with a
/// central difference of `u^T grad` along `v`.
pub fn fd_hvp_error(f: &LossFn, inputs: &[Tensor<f64>], u: &[Tensor<f64>], v: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let l = f(&mut g, &vars)?;
    let grads = g.grad(l, &vars)?;
    let mut s = None;
    for (gr, ut) in grads.iter().zip(u) {
        let uc = g.constant(ut.clone());
        let p = g.mul(*gr, uc)?;
        let p = g.sum(p)?;
        s = Some(match s {
            None => p,
            Some(acc) => g.add(acc, p)?,
        });
    }
    let hv = g.backward(s.expect("at least one input"), &vars)?;
    let ad = dot(&hv, v);
    let hi = dot(&loss_grads(f, &shifted(inputs, v, FD_STEP))?, u);
    let lo = dot(&loss_grads(f, &shifted(inputs, v, -FD_STEP))?, u);
    Ok(rel_err(ad, (hi - lo) / (2.0 * FD_STEP)))
}

type Build = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// One graph op applied to random inputs of fixed shapes.
struct OpCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    build: Build,
}

fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase { name: "add", shapes: &[&[3, 4], &[3, 4]], build: |g, x| g.add(x[0], x[1]) },
        OpCase { name: "add_scalar", shapes: &[&[3, 4], &[]], build: |g, x| g.add(x[0], x[1]) },
        OpCase { name: "sub", shapes: &[&[3, 4], &[3, 4]], build: |g, x| g.sub(x[0], x[1]) },
        OpCase { name: "sub_scalar", shapes: &[&[], &[5]], build: |g, x| g.sub(x[0], x[1]) },
        OpCase { name: "mul", shapes: &[&[3, 4], &[3, 4]], build: |g, x| g.mul(x[0], x[1]) },
        OpCase { name: "mul_scalar", shapes: &[&[2, 3], &[1]], build: |g, x| g.mul(x[0], x[1]) },
        OpCase { name: "neg", shapes: &[&[4]], build: |g, x| g.neg(x[0]) },
        OpCase { name: "scale", shapes: &[&[2, 3]], build: |g, x| g.scale(x[0], -1.7) },
        OpCase { name: "sigmoid", shapes: &[&[3, 3]], build: |g, x| g.sigmoid(x[0]) },
        OpCase { name: "tanh", shapes: &[&[3, 3]], build: |g, x| g.tanh(x[0]) },
        OpCase { name: "abs", shapes: &[&[6]], build: |g, x| g.abs(x[0]) },
        OpCase {
            name: "sign",
            shapes: &[&[6]],
            build: |g, x| {
                let s = g.sign(x[0])?;
                g.mul(s, x[0])
            },
        },
        OpCase { name: "matmul", shapes: &[&[5, 4], &[4, 3]], build: |g, x| g.matmul(x[0], x[1]) },
        OpCase { name: "transpose", shapes: &[&[2, 5]], build: |g, x| g.transpose(x[0]) },
        OpCase { name: "sum", shapes: &[&[3, 4]], build: |g, x| g.sum(x[0]) },
        OpCase { name: "mean", shapes: &[&[7]], build: |g, x| g.mean(x[0]) },
        OpCase { name: "expand", shapes: &[&[]], build: |g, x| g.expand(x[0], &[3, 2]) },
        OpCase { name: "reshape", shapes: &[&[2, 6]], build: |g, x| g.reshape(x[0], &[4, 3]) },
        OpCase { name: "slice", shapes: &[&[5, 4]], build: |g, x| g.slice(x[0], 1, 3, 1, 2) },
        OpCase { name: "embed", shapes: &[&[2, 3]], build: |g, x| g.embed(x[0], 1, 2, 4, 6) },
        OpCase {
            name: "concat_rows",
            shapes: &[&[2, 3], &[1, 3], &[3, 3]],
            build: |g, x| g.concat_rows(x),
        },
        OpCase {
            name: "concat_cols",
            shapes: &[&[3, 2], &[3, 1], &[3, 4]],
            build: |g, x| g.concat_cols(x),
        },
        OpCase { name: "add_row_bias", shapes: &[&[4, 3], &[3]], build: |g, x| g.add_row_bias(x[0], x[1]) },
        OpCase { name: "sum_rows", shapes: &[&[4, 3]], build: |g, x| g.sum_rows(x[0]) },
        OpCase { name: "broadcast_rows", shapes: &[&[3]], build: |g, x| g.broadcast_rows(x[0], 4) },
        OpCase { name: "mean_abs_error", shapes: &[&[6], &[6]], build: |g, x| g.mean_abs_error(x[0], x[1]) },
        // Composite that exercises nonlinear ops inside a product.
        OpCase {
            name: "composite",
            shapes: &[&[3, 4], &[4, 2], &[2]],
            build: |g, x| {
                let h = g.matmul(x[0], x[1])?;
                let h = g.add_row_bias(h, x[2])?;
                let a = g.tanh(h)?;
                let b = g.sigmoid(h)?;
                g.mul(a, b)
            },
        },
    ]
}

/// Random inputs plus a random weighting that reduces the op output to a scalar.
fn case_instance(case: &OpCase, rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor<f64>>, Tensor<f64>)> {
    let inputs: Vec<Tensor<f64>> = case.shapes.iter().map(|s| random_tensor(rng, s, -2.0, 2.0)).collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let weights = random_tensor(rng, g.value(out).shape(), -2.0, 2.0);
    Ok((inputs, weights))
}

fn weighted(build: Build, weights: &Tensor<f64>) -> impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + '_ {
    move |g, x| {
        let out = build(g, x)?;
        let w = g.constant(weights.clone());
        let p = g.mul(out, w)?;
        g.sum(p)
    }
}

/// First derivatives of every graph op.
pub fn op_gradient_checks(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    op_cases()
        .iter()
        .map(|case| {
            let mut worst = 0.0f64;
            for _ in 0..instances {
                let (inputs, w) = case_instance(case, &mut rng)?;
                worst = worst.max(fd_gradient_error(&weighted(case.build, &w), &inputs)?);
            }
            Ok(CheckResult::new(format!("grad/{}", case.name), instances, worst, FD_TOLERANCE))
        })
        .collect()
}

/// Hessian-vector products of every graph op.
pub fn op_second_order_checks(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    op_cases()
        .iter()
        .map(|case| {
            let mut worst = 0.0f64;
            for _ in 0..instances {
                let (inputs, w) = case_instance(case, &mut rng)?;
                let u: Vec<_> = inputs.iter().map(|t| random_tensor(&mut rng, t.shape(), -1.0, 1.0)).collect();
                let v: Vec<_> = inputs.iter().map(|t| random_tensor(&mut rng, t.shape(), -1.0, 1.0)).collect();
                worst = worst.max(fd_hvp_error(&weighted(case.build, &w), &inputs, &u, &v)?);
            }
            Ok(CheckResult::new(format!("hvp/{}", case.name), instances, worst, FD_TOLERANCE))
        })
        .collect()
}

/// Second derivative of a random cubic against its closed form.
pub fn polynomial_check(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x0 = rng.random_range(-2.0..2.0);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(x0));
        let x2 = g.mul(x, x)?;
        let x3 = g.mul(x2, x)?;
        let t1 = g.scale(x, c[1])?;
        let t2 = g.scale(x2, c[2])?;
        let t3 = g.scale(x3, c[3])?;
        let p = g.add(t1, t2)?;
        let p = g.add(p, t3)?;
        let k = g.constant(Tensor::scalar(c[0]));
        let p = g.add(p, k)?;
        let dp = g.grad(p, &[x])?[0];
        let d1 = g.value(dp).item();
        let d2 = g.backward(dp, &[x])?[0].item();
        worst = worst
            .max(rel_err(d1, c[1] + 2.0 * c[2] * x0 + 3.0 * c[3] * x0 * x0))
            .max(rel_err(d2, 2.0 * c[2] + 6.0 * c[3] * x0));
    }
    Ok(CheckResult::new("second_order/cubic", instances, worst, ORACLE_TOLERANCE))
}

/// Small learner and task used by the learner checks.
fn learner_instance<M: FrameScorer>(
    model: &M,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Tensor<f64>>, Tensor<f64>, Tensor<f64>) {
    let params = model
        .param_specs()
        .iter()
        .map(|s| random_tensor(rng, &s.shape, -2.0, 2.0))
        .collect();
    let x = random_tensor(rng, &[frames, model.input_dim()], -2.0, 2.0);
    let y = random_tensor(rng, &[frames], 0.0, 1.0);
    (params, x, y)
}

fn learner_loss<'a, M: FrameScorer>(
    model: &'a M,
    x: &'a Tensor<f64>,
    y: &'a Tensor<f64>,
) -> impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a {
    move |g, p| l1_loss(model, g, p, x, y)
}

fn learner_checks<M: FrameScorer>(
    name: &str,
    model: &M,
    frames: usize,
    instances: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CheckResult>> {
    let (mut grad_worst, mut hvp_worst) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (params, x, y) = learner_instance(model, frames, rng);
        let f = learner_loss(model, &x, &y);
        grad_worst = grad_worst.max(fd_gradient_error(&f, &params)?);
        let u: Vec<_> = params.iter().map(|t| random_tensor(rng, t.shape(), -1.0, 1.0)).collect();
        let v: Vec<_> = params.iter().map(|t| random_tensor(rng, t.shape(), -1.0, 1.0)).collect();
        hvp_worst = hvp_worst.max(fd_hvp_error(&f, &params, &u, &v)?);
    }
    Ok(vec![
        CheckResult::new(format!("grad/{name}_loss"), instances, grad_worst, FD_TOLERANCE),
        CheckResult::new(format!("hvp/{name}_loss"), instances, hvp_worst, FD_TOLERANCE),
    ])
}

/// Gradient and Hessian-vector checks of the full L1 loss of both learners.
pub fn learner_gradient_checks(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lstm = VsLstm::new(LearnerConfig {
        input_dim: 4,
        lstm_hidden: 3,
        mlp_hidden: 3,
    })?;
    let mut out = learner_checks("vslstm", &lstm, 5, instances, &mut rng)?;
    out.extend(learner_checks("linear_probe", &LinearProbe { input_dim: 4 }, 6, instances, &mut rng)?);
    Ok(out)
}

/// Update rule under test by [`quadratic_oracle_check`].
pub type StepFn<'a> =
    dyn Fn(&ParamSet<f64>, &QuadTask, &QuadTask, &HyperParams) -> Result<ParamSet<f64>> + 'a;

/// The two-stage step on the scalar quadratic family against its closed form,
/// for `alpha` in {0.1, 0.5} and `n` in {1, 2}.
pub fn quadratic_oracle_check(
    name: &str,
    step: &StepFn,
    inner_grad: InnerGrad,
    instances: usize,
    seed: u64,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut count = 0;
    for alpha in [0.1, 0.5] {
        for n in [1, 2] {
            for _ in 0..instances {
                let theta = rng.random_range(-2.0..2.0);
                let a = rng.random_range(-2.0..2.0);
                let b = rng.random_range(-2.0..2.0);
                let hp = HyperParams {
                    alpha,
                    beta: 0.3,
                    n,
                    mode: Mode::TwoStageSuccessive,
                    inner_grad,
                    ..HyperParams::default()
                };
                let next = step(&scalar_params(theta), &QuadTask { target: a }, &QuadTask { target: b }, &hp)?;
                let want = closed_form_step(theta, a, b, alpha, hp.beta, n, inner_grad);
                worst = worst.max(rel_err(next.tensors()[0].item(), want));
                count += 1;
            }
        }
    }
    Ok(CheckResult::new(name, count, worst, ORACLE_TOLERANCE))
}

/// The library's two-stage update, as a [`StepFn`].
pub fn library_step(
    theta: &ParamSet<f64>,
    tau1: &QuadTask,
    tau2: &QuadTask,
    hp: &HyperParams,
) -> Result<ParamSet<f64>> {
    meta_step(&Quadratic, theta, tau1, tau2, hp).map(|(p, _)| p)
}

/// First-order approximation: the task-two gradient taken at the adapted
/// point and applied to `theta`, ignoring the inner steps' Jacobian.
pub fn first_order_step<O: TaskObjective<f64>>(
    obj: &O,
    theta: &ParamSet<f64>,
    tau1: &O::Task,
    tau2: &O::Task,
    hp: &HyperParams,
) -> Result<ParamSet<f64>> {
    let adapted = inner_adapt(obj, theta, tau1, hp.alpha, hp.n, hp.inner_grad)?;
    let mut g = Graph::new();
    let leaves = adapted.as_leaves(&mut g);
    let l = obj.loss(&mut g, &leaves, tau2)?;
    let grads = theta.with_tensors(g.backward(l, &leaves)?)?;
    theta.descend(&grads, hp.beta)
}

/// Closed-form checks of the meta step in both inner-gradient modes.
pub fn meta_oracle_checks(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        quadratic_oracle_check("meta/quadratic_standard", &library_step, InnerGrad::Standard, instances, seed)?,
        quadratic_oracle_check(
            "meta/quadratic_literal",
            &library_step,
            InnerGrad::LiteralPaper,
            instances,
            seed.wrapping_add(1),
        )?,
    ])
}

/// The whole suite.
pub fn run_all(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = op_gradient_checks(instances, seed)?;
    out.extend(op_second_order_checks(instances, seed.wrapping_add(1))?);
    out.push(polynomial_check(instances, seed.wrapping_add(2))?);
    out.extend(learner_gradient_checks(instances, seed.wrapping_add(3))?);
    out.extend(meta_oracle_checks(instances, seed.wrapping_add(4))?);
    Ok(out)
}
