//! One transfer-setting run: split, meta-train, evaluate on the held-out dataset.

use serde::{Deserialize, Serialize};

use crate::data::split::SplitVideo;
use crate::data::{split_transfer, Dataset, VideoRecord, VideoSplit};
use crate::error::{Error, Result};
use crate::learner::{FrameScorer, LearnerConfig, VsLstm};
use crate::meta::{train, HyperParams};
use crate::params::ParamSet;
use crate::pipeline::{evaluate_model, EvalReport, PipelineConfig};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub test_dataset: String,
    pub val_fraction: f64,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub hyper: HyperParams,
    pub pipeline: PipelineConfig,
    pub precision: Precision,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub val_loss_history: Vec<(usize, f64)>,
}

/// Everything a run produces. `baseline` evaluates the initial parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub learner: LearnerConfig,
    pub split: SplitIds,
    pub training: TrainSummary,
    pub baseline: EvalReport,
    pub test: EvalReport,
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub params: ParamSet<f64>,
}

struct Trained {
    params: ParamSet<f64>,
    training: TrainSummary,
    baseline: EvalReport,
    test: EvalReport,
}

fn train_in<T: Real>(model: &VsLstm, split: &VideoSplit, cfg: &ExperimentConfig) -> Result<Trained> {
    let r = train::<T, _>(model, &split.train_tasks()?, &split.val_tasks()?, &cfg.hyper, cfg.seed)?;
    let test_videos: Vec<&VideoRecord> = split.test.iter().map(|v| &v.video).collect();
    let theta0 = model.init_params::<T>(cfg.seed);
    Ok(Trained {
        baseline: evaluate_model(model, &theta0, &test_videos, &cfg.pipeline)?,
        test: evaluate_model(model, &r.best_params, &test_videos, &cfg.pipeline)?,
        params: r.best_params.cast(),
        training: TrainSummary {
            initial_val_loss: r.initial_val_loss,
            best_val_loss: r.best_val_loss,
            best_iteration: r.best_iteration,
            iterations_run: r.iterations_run,
            val_loss_history: r.val_loss_history,
        },
    })
}

pub fn run_experiment(datasets: &[Dataset], cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.pipeline.validate()?;
    let dim = datasets
        .iter()
        .find_map(Dataset::dim)
        .ok_or_else(|| Error::invalid("no videos in the given datasets"))?;
    if let Some(d) = datasets.iter().filter_map(Dataset::dim).find(|&d| d != dim) {
        return Err(Error::ShapeInconsistent(format!(
            "datasets disagree on feature dimension: {dim} vs {d}"
        )));
    }
    let learner = LearnerConfig {
        input_dim: dim,
        lstm_hidden: cfg.lstm_hidden,
        mlp_hidden: cfg.mlp_hidden,
    };
    let model = VsLstm::new(learner)?;
    let split = split_transfer(datasets, &cfg.test_dataset, cfg.val_fraction, cfg.seed)?;
    let t = match cfg.precision {
        Precision::F32 => train_in::<f32>(&model, &split, cfg)?,
        Precision::F64 => train_in::<f64>(&model, &split, cfg)?,
    };
    let keys = |vs: &[SplitVideo]| vs.iter().map(|v| v.key()).collect();
    Ok(ExperimentOutcome {
        report: ExperimentReport {
            config: cfg.clone(),
            learner,
            split: SplitIds {
                train: keys(&split.train),
                val: keys(&split.val),
                test: keys(&split.test),
            },
            training: t.training,
            baseline: t.baseline,
            test: t.test,
        },
        params: t.params,
    })
}
