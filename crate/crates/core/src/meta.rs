//! Two-stage meta-training over pairs of per-video tasks.
//!
//! Each iteration draws two distinct training tasks. The first stage adapts
//! the current parameters to task one with `n` plain gradient steps (rate
//! `alpha`); the second stage evaluates the adapted parameters on task two
//! and takes one gradient step (rate `beta`) on the *original* parameters,
//! differentiating through the whole first stage. Training keeps the
//! parameters with the lowest validation loss and stops early once that loss
//! has not improved for `patience` iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::learner::{l1_loss, FrameScorer};
use crate::params::ParamSet;
use crate::tensor::{lit, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Inner adaptation on task one, meta update through it on task two.
    TwoStageSuccessive,
    /// Inner adaptation only; no second stage.
    OneStage,
    /// One step on the sum of both task losses at rate `alpha`.
    Simultaneous,
}

/// Which parameters the gradient of inner step `j >= 2` is taken against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerGrad {
    /// Gradient at the current inner iterate (ordinary SGD).
    Standard,
    /// Gradient with respect to the iteration's starting parameters, taken
    /// through the inner trajectory.
    LiteralPaper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub max_iters: usize,
    pub patience: usize,
    pub eval_interval: usize,
    pub mode: Mode,
    pub inner_grad: InnerGrad,
    /// Ceiling on `n`; every inner step keeps its whole graph alive.
    pub max_inner_steps: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta: 1e-3,
            n: 1,
            max_iters: 30_000,
            patience: 800,
            eval_interval: 10,
            mode: Mode::TwoStageSuccessive,
            inner_grad: InnerGrad::Standard,
            max_inner_steps: 2,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        // alpha = 0 is admitted: it is the collapse case used to check the meta update.
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be >= 1"));
        }
        if self.n > self.max_inner_steps {
            return Err(Error::invalid(format!(
                "n = {} exceeds the inner-step ceiling {}",
                self.n, self.max_inner_steps
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid("eval_interval must be >= 1"));
        }
        if self.patience > self.max_iters {
            return Err(Error::invalid(format!(
                "patience {} exceeds max_iters {}",
                self.patience, self.max_iters
            )));
        }
        Ok(())
    }
}

/// Summarising one video: its features and ground-truth frame scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Task<T: Real = f64> {
    pub id: String,
    pub features: Tensor<T>,
    pub target: Tensor<T>,
}

impl<T: Real> Task<T> {
    pub fn new(id: impl Into<String>, features: Tensor<T>, target: Tensor<T>) -> Result<Self> {
        let id = id.into();
        let (frames, _) = features.dims2("task features")?;
        if target.shape() != [frames] {
            return Err(Error::ShapeMismatch {
                op: "task target",
                lhs: vec![frames],
                rhs: target.shape().to_vec(),
            });
        }
        if target.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::invalid(format!("task {id}: target scores outside [0, 1]")));
        }
        Ok(Self { id, features, target })
    }
}

/// A loss over tasks that can be recorded on a graph.
pub trait TaskObjective<T: Real>: Sync {
    type Task: Sync;

    fn loss(&self, g: &mut Graph<T>, params: &[Var], task: &Self::Task) -> Result<Var>;

    /// Loss value without gradient tracking.
    fn eval_loss(&self, params: &ParamSet<T>, task: &Self::Task) -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.tensors().iter().map(|t| g.constant(t.clone())).collect();
        let l = self.loss(&mut g, &vars, task)?;
        Ok(g.value(l).item().to_f64().unwrap_or(f64::NAN))
    }
}

/// Mean absolute error of a frame scorer against the task's target scores.
#[derive(Clone, Copy, Debug)]
pub struct L1Objective<'m, M> {
    pub model: &'m M,
}

impl<'m, M> L1Objective<'m, M> {
    pub fn new(model: &'m M) -> Self {
        Self { model }
    }
}

impl<T: Real, M: FrameScorer + Sync> TaskObjective<T> for L1Objective<'_, M> {
    type Task = Task<T>;

    fn loss(&self, g: &mut Graph<T>, params: &[Var], task: &Task<T>) -> Result<Var> {
        l1_loss(self.model, g, params, &task.features, &task.target)
    }
}

fn descend_vars<T: Real>(g: &mut Graph<T>, cur: &[Var], grads: &[Var], rate: T) -> Result<Vec<Var>> {
    cur.iter()
        .zip(grads)
        .map(|(&p, &d)| {
            let step = g.scale(d, rate)?;
            g.sub(p, step)
        })
        .collect()
}

/// Record `n` inner adaptation steps on `task`, starting from `theta`.
///
/// Every step is recorded with its gradient graph, so any loss computed from
/// the returned variables differentiates back to `theta` exactly. Returns the
/// adapted parameters and the task loss at `theta`.
pub fn inner_adapt_graph<T: Real, O: TaskObjective<T>>(
    obj: &O,
    g: &mut Graph<T>,
    theta: &[Var],
    task: &O::Task,
    alpha: f64,
    n: usize,
    inner_grad: InnerGrad,
) -> Result<(Vec<Var>, f64)> {
    let rate = lit::<T>(alpha);
    let mut cur = theta.to_vec();
    let mut first_loss = f64::NAN;
    for j in 1..=n {
        let loss = obj.loss(g, &cur, task)?;
        if j == 1 {
            first_loss = g.value(loss).item().to_f64().unwrap_or(f64::NAN);
        }
        let grads = match inner_grad {
            InnerGrad::Standard => g.grad(loss, &cur)?,
            InnerGrad::LiteralPaper => g.grad(loss, theta)?,
        };
        cur = descend_vars(g, &cur, &grads, rate)?;
    }
    Ok((cur, first_loss))
}

/// Parameter values after `n` inner adaptation steps.
pub fn inner_adapt<T: Real, O: TaskObjective<T>>(
    obj: &O,
    theta: &ParamSet<T>,
    task: &O::Task,
    alpha: f64,
    n: usize,
    inner_grad: InnerGrad,
) -> Result<ParamSet<T>> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let mut g = Graph::new();
    let leaves = theta.as_leaves(&mut g);
    let (adapted, _) = inner_adapt_graph(obj, &mut g, &leaves, task, alpha, n, inner_grad)?;
    let values = adapted.iter().map(|&v| g.value(v).clone()).collect();
    theta.with_tensors(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Loss on task one at the starting parameters.
    pub first_stage_loss: f64,
    /// Loss on task two: at the adapted parameters for the two-stage mode, at
    /// the starting parameters for the simultaneous mode, absent otherwise.
    pub second_stage_loss: Option<f64>,
}

/// One outer iteration.
pub fn meta_step<T: Real, O: TaskObjective<T>>(
    obj: &O,
    theta: &ParamSet<T>,
    tau1: &O::Task,
    tau2: &O::Task,
    hp: &HyperParams,
) -> Result<(ParamSet<T>, StepDiagnostics)> {
    let mut g = Graph::new();
    let leaves = theta.as_leaves(&mut g);
    let value = |g: &Graph<T>, v: Var| g.value(v).item().to_f64().unwrap_or(f64::NAN);
    match hp.mode {
        Mode::TwoStageSuccessive => {
            let (adapted, first) =
                inner_adapt_graph(obj, &mut g, &leaves, tau1, hp.alpha, hp.n, hp.inner_grad)?;
            let outer = obj.loss(&mut g, &adapted, tau2)?;
            let second = value(&g, outer);
            let grads = g.backward(outer, &leaves)?;
            let grads = theta.with_tensors(grads)?;
            let next = theta.descend(&grads, lit(hp.beta))?;
            Ok((
                next,
                StepDiagnostics {
                    first_stage_loss: first,
                    second_stage_loss: Some(second),
                },
            ))
        }
        Mode::OneStage => {
            let (adapted, first) =
                inner_adapt_graph(obj, &mut g, &leaves, tau1, hp.alpha, hp.n, hp.inner_grad)?;
            let values = adapted.iter().map(|&v| g.value(v).clone()).collect();
            Ok((
                theta.with_tensors(values)?,
                StepDiagnostics {
                    first_stage_loss: first,
                    second_stage_loss: None,
                },
            ))
        }
        Mode::Simultaneous => {
            let l1 = obj.loss(&mut g, &leaves, tau1)?;
            let l2 = obj.loss(&mut g, &leaves, tau2)?;
            let diag = StepDiagnostics {
                first_stage_loss: value(&g, l1),
                second_stage_loss: Some(value(&g, l2)),
            };
            let total = g.add(l1, l2)?;
            let grads = g.backward(total, &leaves)?;
            let grads = theta.with_tensors(grads)?;
            Ok((theta.descend(&grads, lit(hp.alpha))?, diag))
        }
    }
}

/// Two distinct task indices, uniform without replacement.
pub fn sample_pair_indices<R: Rng>(count: usize, rng: &mut R) -> Result<(usize, usize)> {
    if count < 2 {
        return Err(Error::invalid(format!("need at least 2 training tasks, got {count}")));
    }
    let first = rng.random_range(0..count);
    let mut second = rng.random_range(0..count - 1);
    if second >= first {
        second += 1;
    }
    Ok((first, second))
}

pub fn sample_pair<'t, K, R: Rng>(tasks: &'t [K], rng: &mut R) -> Result<(&'t K, &'t K)> {
    let (a, b) = sample_pair_indices(tasks.len(), rng)?;
    Ok((&tasks[a], &tasks[b]))
}

/// Mean task loss over the validation set.
pub fn validate<T: Real, O: TaskObjective<T>>(
    obj: &O,
    theta: &ParamSet<T>,
    tasks: &[O::Task],
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let losses = tasks
        .par_iter()
        .map(|t| obj.eval_loss(theta, t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainReport<T: Real = f64> {
    pub best_params: ParamSet<T>,
    pub best_val_loss: f64,
    pub best_iteration: usize,
    pub initial_val_loss: f64,
    pub iterations_run: usize,
    pub val_loss_history: Vec<(usize, f64)>,
}

/// Stream used for task sampling, kept apart from parameter initialisation.
const SAMPLING_STREAM: u64 = 1;

pub fn train_from<T: Real, O: TaskObjective<T>>(
    obj: &O,
    theta0: ParamSet<T>,
    train_tasks: &[O::Task],
    val_tasks: &[O::Task],
    hp: &HyperParams,
    seed: u64,
) -> Result<TrainReport<T>> {
    hp.validate()?;
    if train_tasks.len() < 2 {
        return Err(Error::invalid("training needs at least 2 tasks"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLING_STREAM);

    let initial = validate(obj, &theta0, val_tasks)?;
    let mut history = vec![(0, initial)];
    let mut best_loss = initial;
    let mut best_iter = 0;
    let mut best_params = theta0.clone();
    let mut theta = theta0;
    let mut iterations = 0;

    for it in 1..=hp.max_iters {
        let (t1, t2) = sample_pair(train_tasks, &mut rng)?;
        theta = meta_step(obj, &theta, t1, t2, hp)?.0;
        iterations = it;
        if it % hp.eval_interval == 0 || it == hp.max_iters {
            let v = validate(obj, &theta, val_tasks)?;
            history.push((it, v));
            if v < best_loss {
                best_loss = v;
                best_iter = it;
                best_params = theta.clone();
            }
        }
        if it - best_iter >= hp.patience {
            break;
        }
    }

    Ok(TrainReport {
        best_params,
        best_val_loss: best_loss,
        best_iteration: best_iter,
        initial_val_loss: initial,
        iterations_run: iterations,
        val_loss_history: history,
    })
}

/// Initialise a learner from `seed` and meta-train it.
pub fn train<T: Real, M: FrameScorer + Sync>(
    model: &M,
    train_tasks: &[Task<T>],
    val_tasks: &[Task<T>],
    hp: &HyperParams,
    seed: u64,
) -> Result<TrainReport<T>> {
    let theta0 = model.init_params(seed);
    train_from(&L1Objective::new(model), theta0, train_tasks, val_tasks, hp, seed)
}

/// Scalar quadratic task family `L(theta) = (theta - target)^2 / 2`, whose
/// meta-gradient has a closed form. Used to verify the two-stage update.
pub mod probe {
    use super::*;

    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct QuadTask {
        pub target: f64,
    }

    #[derive(Clone, Copy, Debug, Default)]
    pub struct Quadratic;

    impl<T: Real> TaskObjective<T> for Quadratic {
        type Task = QuadTask;

        fn loss(&self, g: &mut Graph<T>, params: &[Var], task: &QuadTask) -> Result<Var> {
            let shape = g.value(params[0]).shape().to_vec();
            let a = g.constant(Tensor::full(&shape, lit(task.target)));
            let d = g.sub(params[0], a)?;
            let sq = g.mul(d, d)?;
            let s = g.sum(sq)?;
            g.scale(s, lit(0.5))
        }
    }

    pub fn scalar_params(theta: f64) -> ParamSet<f64> {
        ParamSet::new(vec![("theta".into(), Tensor::scalar(theta))]).expect("single name")
    }

    /// Closed-form two-stage update of a scalar `theta`.
    pub fn closed_form_step(
        theta: f64,
        a: f64,
        b: f64,
        alpha: f64,
        beta: f64,
        n: usize,
        inner_grad: InnerGrad,
    ) -> f64 {
        // Track the adapted value and its derivative w.r.t. theta.
        let (mut x, mut dx) = (theta, 1.0);
        for j in 1..=n {
            let (g, dg) = match inner_grad {
                InnerGrad::Standard => (x - a, dx),
                // d/dtheta of (x - a)^2/2 is (x - a) * dx; its derivative is dx^2 + (x - a) * ddx,
                // and ddx = 0 for the first step, the only one feeding a literal-mode step at n <= 2.
                InnerGrad::LiteralPaper if j >= 2 => ((x - a) * dx, dx * dx),
                InnerGrad::LiteralPaper => (x - a, dx),
            };
            x -= alpha * g;
            dx -= alpha * dg;
        }
        theta - beta * dx * (x - b)
    }
}
