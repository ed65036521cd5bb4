//! Frame-scoring learners.
//!
//! [`VsLstm`] is the summarization model: a bidirectional LSTM whose two
//! directions run independently, followed by a per-frame MLP over
//! `[h_forward(t); h_backward(t); x(t)]` with one sigmoid hidden layer and a
//! sigmoid output. [`LinearProbe`] is a one-layer logistic scorer used for
//! sanity experiments and analytic tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamSet, ParamSpec};
use crate::tensor::{lit, Real, Tensor};

/// A differentiable map from a `T x D` feature matrix to `T` scores in (0, 1).
pub trait FrameScorer {
    fn input_dim(&self) -> usize;

    /// Parameter names and shapes, in storage order.
    fn param_specs(&self) -> Vec<ParamSpec>;

    fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T>;

    /// Record the forward pass. `params` are aligned with [`Self::param_specs`];
    /// `features` is a `T x D` matrix. Returns a length-`T` vector.
    fn score<T: Real>(&self, g: &mut Graph<T>, params: &[Var], features: Var) -> Result<Var>;

    /// Forward pass on detached values, no gradient tracking.
    fn predict<T: Real>(&self, params: &ParamSet<T>, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.tensors().iter().map(|t| g.constant(t.clone())).collect();
        let x = g.constant(features.clone());
        let out = self.score(&mut g, &vars, x)?;
        Ok(g.value(out).clone())
    }

    fn check_features<T: Real>(&self, g: &Graph<T>, features: Var) -> Result<usize> {
        let (t, d) = g.value(features).dims2("features")?;
        if d != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "features",
                lhs: vec![t, d],
                rhs: vec![t, self.input_dim()],
            });
        }
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub input_dim: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
}

impl LearnerConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            lstm_hidden: 256,
            mlp_hidden: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.lstm_hidden == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid(format!("learner dims must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

const INIT_RANGE: f64 = 0.05;
const FORGET_BIAS: f64 = 1.0;
const GATES: [&str; 4] = ["input", "forget", "cell", "output"];
const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

/// Bidirectional LSTM + per-frame MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VsLstm {
    pub config: LearnerConfig,
}

/// Offsets into the flat parameter list.
const PER_GATE: usize = 3;
const PER_DIRECTION: usize = PER_GATE * GATES.len();
const MLP_OFFSET: usize = PER_DIRECTION * DIRECTIONS.len();

impl VsLstm {
    pub fn new(config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn run_direction<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        dir: usize,
        x: Var,
        frames: usize,
    ) -> Result<Var> {
        let h = self.config.lstm_hidden;
        let base = dir * PER_DIRECTION;
        // Input projections for all frames at once: X W^T + b, one per gate.
        let mut proj = [x; 4];
        let mut rec = [x; 4];
        for k in 0..GATES.len() {
            let (w_x, w_h, b) = (
                params[base + k * PER_GATE],
                params[base + k * PER_GATE + 1],
                params[base + k * PER_GATE + 2],
            );
            let wt = g.transpose(w_x)?;
            let xw = g.matmul(x, wt)?;
            proj[k] = g.add_row_bias(xw, b)?;
            rec[k] = g.transpose(w_h)?;
        }
        let mut hidden = g.constant(Tensor::zeros(&[1, h]));
        let mut cell = g.constant(Tensor::zeros(&[1, h]));
        let mut states = vec![hidden; frames];
        let order: Box<dyn Iterator<Item = usize>> = if dir == 0 {
            Box::new(0..frames)
        } else {
            Box::new((0..frames).rev())
        };
        for t in order {
            let mut pre = [x; 4];
            for k in 0..GATES.len() {
                let xt = g.slice(proj[k], t, 1, 0, h)?;
                let hw = g.matmul(hidden, rec[k])?;
                pre[k] = g.add(xt, hw)?;
            }
            let i = g.sigmoid(pre[0])?;
            let f = g.sigmoid(pre[1])?;
            let cand = g.tanh(pre[2])?;
            let o = g.sigmoid(pre[3])?;
            let keep = g.mul(f, cell)?;
            let write = g.mul(i, cand)?;
            cell = g.add(keep, write)?;
            let squashed = g.tanh(cell)?;
            hidden = g.mul(o, squashed)?;
            states[t] = hidden;
        }
        g.concat_rows(&states)
    }
}

impl FrameScorer for VsLstm {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        let LearnerConfig {
            input_dim: d,
            lstm_hidden: h,
            mlp_hidden: m,
        } = self.config;
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| specs.push(ParamSpec { name, shape });
        for dir in DIRECTIONS {
            for gate in GATES {
                push(format!("lstm.{dir}.{gate}.w_x"), vec![h, d]);
                push(format!("lstm.{dir}.{gate}.w_h"), vec![h, h]);
                push(format!("lstm.{dir}.{gate}.b"), vec![h]);
            }
        }
        push("mlp.w1".into(), vec![m, 2 * h + d]);
        push("mlp.b1".into(), vec![m]);
        push("mlp.w2".into(), vec![1, m]);
        push("mlp.b2".into(), vec![1]);
        specs
    }

    /// Weights uniform in [-0.05, 0.05], biases zero except forget gates (1.0).
    fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = self
            .param_specs()
            .into_iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data: Vec<T> = if spec.name.ends_with(".forget.b") {
                    vec![lit(FORGET_BIAS); n]
                } else if spec.name.ends_with(".b") || spec.name.starts_with("mlp.b") {
                    vec![T::zero(); n]
                } else {
                    (0..n)
                        .map(|_| lit(rng.random_range(-INIT_RANGE..=INIT_RANGE)))
                        .collect()
                };
                let t = Tensor::new(spec.shape, data).expect("spec shape");
                (spec.name, t)
            })
            .collect();
        ParamSet::new(entries).expect("unique names")
    }

    fn score<T: Real>(&self, g: &mut Graph<T>, params: &[Var], features: Var) -> Result<Var> {
        let frames = self.check_features(g, features)?;
        if params.len() != MLP_OFFSET + 4 {
            return Err(Error::invalid(format!(
                "vsLSTM expects {} parameter tensors, got {}",
                MLP_OFFSET + 4,
                params.len()
            )));
        }
        let fwd = self.run_direction(g, params, 0, features, frames)?;
        let bwd = self.run_direction(g, params, 1, features, frames)?;
        let z = g.concat_cols(&[fwd, bwd, features])?;
        let (w1, b1, w2, b2) = (
            params[MLP_OFFSET],
            params[MLP_OFFSET + 1],
            params[MLP_OFFSET + 2],
            params[MLP_OFFSET + 3],
        );
        let w1t = g.transpose(w1)?;
        let a1 = g.matmul(z, w1t)?;
        let a1 = g.add_row_bias(a1, b1)?;
        let a1 = g.sigmoid(a1)?;
        let w2t = g.transpose(w2)?;
        let out = g.matmul(a1, w2t)?;
        let out = g.add_row_bias(out, b2)?;
        let out = g.sigmoid(out)?;
        g.reshape(out, &[frames])
    }
}

/// `score_t = sigmoid(w . x_t + b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearProbe {
    pub input_dim: usize,
}

impl FrameScorer for LinearProbe {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec {
                name: "w".into(),
                shape: vec![self.input_dim],
            },
            ParamSpec {
                name: "b".into(),
                shape: vec![],
            },
        ]
    }

    fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..self.input_dim)
            .map(|_| lit(rng.random_range(-INIT_RANGE..=INIT_RANGE)))
            .collect();
        ParamSet::new(vec![
            ("w".into(), Tensor::vector(w).expect("non-empty")),
            ("b".into(), Tensor::scalar(T::zero())),
        ])
        .expect("unique names")
    }

    fn score<T: Real>(&self, g: &mut Graph<T>, params: &[Var], features: Var) -> Result<Var> {
        let frames = self.check_features(g, features)?;
        let w = g.reshape(params[0], &[self.input_dim, 1])?;
        let xw = g.matmul(features, w)?;
        let z = g.add(xw, params[1])?;
        let s = g.sigmoid(z)?;
        g.reshape(s, &[frames])
    }
}

/// Mean absolute error between the learner's scores and a target vector.
pub fn l1_loss<T: Real, M: FrameScorer>(
    model: &M,
    g: &mut Graph<T>,
    params: &[Var],
    features: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<Var> {
    let x = g.constant(features.clone());
    let y = g.constant(target.clone());
    let pred = model.score(g, params, x)?;
    g.mean_abs_error(pred, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VsLstm {
        VsLstm::new(LearnerConfig {
            input_dim: 8,
            lstm_hidden: 4,
            mlp_hidden: 4,
        })
        .unwrap()
    }

    fn features(t: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(t, d, (0..t * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let m = small();
        let a: ParamSet<f64> = m.init_params(7);
        let b: ParamSet<f64> = m.init_params(7);
        let c: ParamSet<f64> = m.init_params(8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_ranges_and_forget_bias() {
        let p: ParamSet<f64> = small().init_params(3);
        for (name, t) in p.iter() {
            if name.ends_with(".forget.b") {
                assert!(t.data().iter().all(|&v| v == 1.0));
            } else if name.ends_with(".b") || name.starts_with("mlp.b") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                assert!(t.data().iter().all(|v| v.abs() <= 0.05), "{name}");
            }
        }
    }

    #[test]
    fn mlp_input_width_is_two_hidden_plus_features() {
        let p: ParamSet<f64> = small().init_params(0);
        assert_eq!(p.get("mlp.w1").unwrap().shape(), &[4, 16]);
        assert_eq!(p.get("mlp.w2").unwrap().shape(), &[1, 4]);
    }

    #[test]
    fn scores_in_open_unit_interval() {
        let m = small();
        let p: ParamSet<f64> = m.init_params(1);
        for t in [1, 2, 9] {
            let s = m.predict(&p, &features(t, 8, t as u64)).unwrap();
            assert_eq!(s.shape(), &[t]);
            assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn wrong_feature_dim_rejected() {
        let m = small();
        let p: ParamSet<f64> = m.init_params(1);
        assert!(m.predict(&p, &features(3, 5, 0)).is_err());
    }

    #[test]
    fn frame_order_matters() {
        let m = small();
        let mut p: ParamSet<f64> = m.init_params(11);
        // Make the recurrent path strong enough to be visible.
        for (name, t) in p.clone().iter() {
            if name.contains("w_") || name.starts_with("mlp.w") {
                let scaled = t.map(|v| v * 20.0);
                *p.get_mut(name).unwrap() = scaled;
            }
        }
        let x = features(6, 8, 5);
        let mut shuffled = Vec::new();
        for r in [3, 0, 5, 1, 4, 2] {
            shuffled.extend_from_slice(x.row(r));
        }
        let xs = Tensor::matrix(6, 8, shuffled).unwrap();
        let a = m.predict(&p, &x).unwrap();
        let b = m.predict(&p, &xs).unwrap();
        let permuted: Vec<f64> = [3, 0, 5, 1, 4, 2].iter().map(|&r| a.data()[r]).collect();
        assert!(permuted.iter().zip(b.data()).any(|(u, v)| (u - v).abs() > 1e-9));
    }

    #[test]
    fn probe_zero_weights_give_half() {
        let m = LinearProbe { input_dim: 3 };
        let p = ParamSet::new(vec![
            ("w".into(), Tensor::vector(vec![0.0; 3]).unwrap()),
            ("b".into(), Tensor::scalar(0.0)),
        ])
        .unwrap();
        let s = m.predict(&p, &features(4, 3, 0)).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn probe_monotone_in_bias() {
        let m = LinearProbe { input_dim: 3 };
        let p: ParamSet<f64> = m.init_params(2);
        let x = features(5, 3, 9);
        let lo = m.predict(&p, &x).unwrap();
        let mut q = p.clone();
        *q.get_mut("b").unwrap() = Tensor::scalar(0.3);
        let hi = m.predict(&q, &x).unwrap();
        assert!(lo.data().iter().zip(hi.data()).all(|(a, b)| b > a));
    }
}
