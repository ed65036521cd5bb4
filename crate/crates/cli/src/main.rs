//! `vsmeta`: generate data, meta-train, evaluate, summarize, sweep and self-check.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use vsmeta::checkpoint::Checkpoint;
use vsmeta::data::{self, atomic_write, subsample, Dataset, SyntheticSpec, VideoRecord};
use vsmeta::eval::{sweep_stats, Aggregation, SweepGrid};
use vsmeta::experiment::{run_experiment, ExperimentConfig, ExperimentReport, Precision};
use vsmeta::gradcheck;
use vsmeta::learner::FrameScorer;
use vsmeta::meta::{HyperParams, InnerGrad, Mode};
use vsmeta::pipeline::{evaluate_model, evaluate_scores, EvalReport, PipelineConfig};
use vsmeta::summary::{timeline_csv, SelectStrategy, DEFAULT_BUDGET};
use vsmeta::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "vsmeta", version, about = "Meta-learned video summarization", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Meta-train a learner in the transfer setting.
    Train(TrainArgs),
    /// Evaluate a checkpoint on datasets.
    Eval(EvalArgs),
    /// Export one video's score and selection timeline as CSV.
    Summarize(SummarizeArgs),
    /// Grid search over alpha and beta.
    Sweep(SweepArgs),
    /// Run the finite-difference and closed-form gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone, Debug, Serialize)]
struct Global {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    precision: PrecisionArg,
    /// Relative output paths are resolved against this directory.
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    /// File of `key = value` lines, applied before the command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    TwoStage,
    OneStage,
    Simu,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum InnerGradArg {
    Standard,
    Literal,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StrategyArg {
    Rank,
    Knapsack,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AggArg {
    Mean,
    Max,
}

#[derive(Args, Clone, Debug)]
struct PipelineArgs {
    /// Summary length as a fraction of the video.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Rank)]
    strategy: StrategyArg,
    /// How per-user F-scores are combined.
    #[arg(long, value_enum, default_value_t = AggArg::Mean)]
    agg: AggArg,
    /// Segment ceiling for KTS; defaults to ceil(T / 40).
    #[arg(long)]
    max_segments: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    penalty_weight: f64,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            budget: self.budget,
            strategy: match self.strategy {
                StrategyArg::Rank => SelectStrategy::Rank,
                StrategyArg::Knapsack => SelectStrategy::Knapsack,
            },
            aggregation: match self.agg {
                AggArg::Mean => Aggregation::Mean,
                AggArg::Max => Aggregation::Max,
            },
            max_segments: self.max_segments,
            penalty_weight: self.penalty_weight,
        }
    }
}

#[derive(Args, Clone, Debug)]
struct DataArgs {
    /// Comma-separated MLVS dataset files.
    #[arg(long, required = true)]
    data: String,
    /// Subsample every video to this frame rate first.
    #[arg(long)]
    target_fps: Option<f64>,
}

impl DataArgs {
    fn paths(&self) -> Vec<&str> {
        self.data.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
    }

    fn load(&self) -> Result<Vec<Dataset>, Failure> {
        let paths = self.paths();
        if paths.is_empty() {
            return Err(usage("--data names no files"));
        }
        paths
            .iter()
            .map(|p| {
                let mut ds = data::load(p).map_err(|e| at_path(p, e))?;
                if let Some(fps) = self.target_fps {
                    ds.videos = ds.videos.iter().map(|v| subsample(v, fps)).collect::<Result<_, _>>()?;
                }
                Ok(ds)
            })
            .collect()
    }
}

#[derive(Args, Clone, Debug)]
struct TrainingArgs {
    #[arg(long)]
    test_dataset: String,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::TwoStage)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = InnerGradArg::Standard)]
    inner_grad: InnerGradArg,
    #[arg(long, default_value_t = 30_000)]
    max_iters: usize,
    /// Iterations without validation improvement before stopping (capped at --max-iters).
    #[arg(long, default_value_t = 800)]
    patience: usize,
    #[arg(long, default_value_t = 10)]
    eval_interval: usize,
    #[arg(long, default_value_t = 256)]
    lstm_hidden: usize,
    #[arg(long, default_value_t = 256)]
    mlp_hidden: usize,
}

impl TrainingArgs {
    fn experiment(&self, alpha: f64, beta: f64, pipeline: PipelineConfig, g: &Global, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            test_dataset: self.test_dataset.clone(),
            val_fraction: self.val_fraction,
            lstm_hidden: self.lstm_hidden,
            mlp_hidden: self.mlp_hidden,
            hyper: HyperParams {
                alpha,
                beta,
                n: self.n,
                max_iters: self.max_iters,
                patience: self.patience.min(self.max_iters),
                eval_interval: self.eval_interval,
                mode: match self.mode {
                    ModeArg::TwoStage => Mode::TwoStageSuccessive,
                    ModeArg::OneStage => Mode::OneStage,
                    ModeArg::Simu => Mode::Simultaneous,
                },
                inner_grad: match self.inner_grad {
                    InnerGradArg::Standard => InnerGrad::Standard,
                    InnerGradArg::Literal => InnerGrad::LiteralPaper,
                },
                ..HyperParams::default()
            },
            pipeline,
            precision: g.precision.into(),
            seed,
        }
    }
}

#[derive(Args, Clone, Debug)]
#[command(args_override_self = true)]
struct GenArgs {
    #[command(flatten)]
    global: Global,
    #[arg(long, default_value = "synthetic.mlvs")]
    out: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    num_videos: Option<usize>,
    #[arg(long)]
    min_frames: Option<usize>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    min_change_points: Option<usize>,
    #[arg(long)]
    max_change_points: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    num_prototypes: Option<usize>,
    #[arg(long)]
    num_users: Option<usize>,
    #[arg(long)]
    user_noise: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    /// Seed of the hidden scorer; datasets sharing it share one mechanism.
    #[arg(long)]
    mechanism_seed: Option<u64>,
}

#[derive(Args, Clone, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[command(flatten)]
    global: Global,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long, default_value_t = 1e-4)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    beta: f64,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Checkpoint path.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    #[arg(long, default_value = "train_report.json")]
    report: PathBuf,
}

#[derive(Args, Clone, Debug)]
#[command(args_override_self = true)]
struct EvalArgs {
    #[command(flatten)]
    global: Global,
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated dataset names to evaluate; all when omitted.
    #[arg(long)]
    datasets: Option<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value = "eval_report.json")]
    out: PathBuf,
}

#[derive(Args, Clone, Debug)]
#[command(args_override_self = true)]
struct SummarizeArgs {
    #[command(flatten)]
    global: Global,
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// `id` or `dataset/id`.
    #[arg(long)]
    video_id: String,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value = "timeline.csv")]
    out: PathBuf,
}

#[derive(Args, Clone, Debug)]
#[command(args_override_self = true)]
struct SweepArgs {
    #[command(flatten)]
    global: Global,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    training: TrainingArgs,
    /// Comma-separated learning rates.
    #[arg(long, default_value = "0.0001")]
    alphas: String,
    /// Comma-separated meta learning rates.
    #[arg(long, default_value = "0.1,0.01,0.001,0.0001,0.00001")]
    betas: String,
    /// Runs per cell, with seeds `seed + cell * repeats + r`.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// CSV grid; a JSON file with the same stem records the configuration and every run.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args, Clone, Debug)]
#[command(args_override_self = true)]
struct GradcheckArgs {
    #[command(flatten)]
    global: Global,
    /// Random instances per check.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value = "gradcheck.json")]
    out: PathBuf,
}

/// Failure of a command, carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn at_path(path: impl AsRef<Path>, e: Error) -> Failure {
    let f = Failure::from(e);
    Failure {
        message: format!("{}: {}", path.as_ref().display(), f.message),
        ..f
    }
}

fn load_ckpt(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| at_path(path, e))
}

type CmdResult = Result<(), Failure>;

fn resolve(g: &Global, path: &Path) -> Result<PathBuf, Failure> {
    let p = if path.is_absolute() {
        path.to_path_buf()
    } else {
        g.output_dir.join(path)
    };
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    Ok(p)
}

fn write_json<S: Serialize>(g: &Global, path: &Path, value: &S) -> Result<PathBuf, Failure> {
    let p = resolve(g, path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    atomic_write(&p, text.as_bytes())?;
    Ok(p)
}

fn parse_list(flag: &str, text: &str) -> Result<Vec<f64>, Failure> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| usage(format!("--{flag}: bad number {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(usage(format!("--{flag} is empty")));
    }
    Ok(values)
}

fn cmd_gen(a: &GenArgs) -> CmdResult {
    let mut spec = SyntheticSpec {
        seed: a.global.seed,
        ..SyntheticSpec::default()
    };
    macro_rules! apply {
        ($($field:ident),*) => { $( if let Some(v) = &a.$field { spec.$field = v.clone(); } )* };
    }
    apply!(
        name,
        num_videos,
        min_frames,
        max_frames,
        dim,
        min_change_points,
        max_change_points,
        noise,
        num_prototypes,
        num_users,
        user_noise,
        fps,
        mechanism_seed
    );
    let ds = data::gen_synthetic(&spec)?;
    let out = resolve(&a.global, &a.out)?;
    data::save(&ds, &out)?;
    println!("wrote {} videos of dataset {:?} to {}", ds.videos.len(), ds.name, out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    command: &'static str,
    data: Vec<&'a str>,
    #[serde(flatten)]
    report: &'a ExperimentReport,
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let datasets = a.data.load()?;
    let cfg = a
        .training
        .experiment(a.alpha, a.beta, a.pipeline.config(), &a.global, a.global.seed);
    let outcome = run_experiment(&datasets, &cfg)?;
    let report = &outcome.report;
    let info = serde_json::to_value(&report.config).map_err(Error::from)?;
    let ckpt = Checkpoint {
        config: report.learner,
        params: outcome.params,
        info,
    };
    let ckpt_path = resolve(&a.global, &a.out)?;
    ckpt.save(&ckpt_path)?;
    let report_path = write_json(
        &a.global,
        &a.report,
        &TrainOutput {
            command: "train",
            data: a.data.paths(),
            report,
        },
    )?;
    let t = &report.training;
    println!(
        "iterations {} | val loss {:.6} -> {:.6} (best at {}) | test F {:.2} (init {:.2})",
        t.iterations_run, t.initial_val_loss, t.best_val_loss, t.best_iteration, report.test.mean_f_score, report.baseline.mean_f_score
    );
    println!("checkpoint {} | report {}", ckpt_path.display(), report_path.display());
    Ok(())
}

/// Videos of the selected datasets, in file order.
fn select_videos<'d>(datasets: &'d [Dataset], names: Option<&str>) -> Result<Vec<&'d VideoRecord>, Failure> {
    let wanted: Option<Vec<&str>> = names.map(|n| n.split(',').map(str::trim).collect());
    if let Some(w) = &wanted {
        for n in w {
            if !datasets.iter().any(|d| d.name == *n) {
                return Err(Error::UnknownDataset(n.to_string()).into());
            }
        }
    }
    Ok(datasets
        .iter()
        .filter(|d| wanted.as_ref().is_none_or(|w| w.contains(&d.name.as_str())))
        .flat_map(|d| d.videos.iter())
        .collect())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    command: &'static str,
    ckpt: String,
    data: Vec<&'a str>,
    datasets: Option<&'a str>,
    precision: PrecisionArg,
    seed: u64,
    #[serde(flatten)]
    report: EvalReport,
}

fn evaluate_ckpt(ckpt: &Checkpoint, videos: &[&VideoRecord], cfg: &PipelineConfig, p: PrecisionArg) -> Result<EvalReport, Error> {
    let model = ckpt.model()?;
    match p {
        PrecisionArg::F32 => evaluate_model(&model, &ckpt.params.cast::<f32>(), videos, cfg),
        PrecisionArg::F64 => evaluate_model(&model, &ckpt.params, videos, cfg),
    }
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let ckpt = load_ckpt(&a.ckpt)?;
    let datasets = a.data.load()?;
    let videos = select_videos(&datasets, a.datasets.as_deref())?;
    let report = evaluate_ckpt(&ckpt, &videos, &a.pipeline.config(), a.global.precision)?;
    for v in &report.videos {
        println!("{}\tP {:.4}\tR {:.4}\tF {:.2}", v.id, v.precision, v.recall, v.f_score);
    }
    println!("mean F {:.2} over {} videos", report.mean_f_score, report.videos.len());
    let out = EvalOutput {
        command: "eval",
        ckpt: a.ckpt.display().to_string(),
        data: a.data.paths(),
        datasets: a.datasets.as_deref(),
        precision: a.global.precision,
        seed: a.global.seed,
        report,
    };
    let path = write_json(&a.global, &a.out, &out)?;
    println!("report {}", path.display());
    Ok(())
}

fn cmd_summarize(a: &SummarizeArgs) -> CmdResult {
    let ckpt = load_ckpt(&a.ckpt)?;
    let datasets = a.data.load()?;
    let (ds_name, vid) = match a.video_id.split_once('/') {
        Some((d, v)) => (Some(d), v),
        None => (None, a.video_id.as_str()),
    };
    let matches: Vec<&VideoRecord> = datasets
        .iter()
        .filter(|d| ds_name.is_none_or(|n| n == d.name))
        .flat_map(|d| d.videos.iter().filter(|v| v.id == vid))
        .collect();
    let video = match matches.as_slice() {
        [v] => *v,
        [] => return Err(Error::UnknownVideo(a.video_id.clone()).into()),
        _ => return Err(usage(format!("video id {vid:?} is ambiguous; use dataset/id"))),
    };
    let model = ckpt.model()?;
    let scores = match a.global.precision {
        PrecisionArg::F32 => model
            .predict(&ckpt.params.cast::<f32>(), &video.features.cast())?
            .to_f64_vec(),
        PrecisionArg::F64 => model.predict(&ckpt.params, &video.features)?.into_data(),
    };
    let cfg = a.pipeline.config();
    cfg.validate()?;
    let (summary, result) = evaluate_scores(video, &scores, &cfg)?;
    let csv = timeline_csv(&video.gt_scores, &scores, &summary)?;
    let out = resolve(&a.global, &a.out)?;
    atomic_write(&out, csv.as_bytes())?;
    println!(
        "{}: {} of {} frames in {} keyshots, F {:.2} | {}",
        video.id,
        summary.selected_frames(),
        video.frames(),
        summary.keyshots.len(),
        result.f_score,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepRun {
    alpha: f64,
    beta: f64,
    repeat: usize,
    seed: u64,
    f_score: f64,
    initial_val_loss: f64,
    best_val_loss: f64,
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    command: &'static str,
    data: Vec<&'a str>,
    repeats: usize,
    base_config: ExperimentConfig,
    runs: Vec<SweepRun>,
    grid: SweepGrid,
}

fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let alphas = parse_list("alphas", &a.alphas)?;
    let betas = parse_list("betas", &a.betas)?;
    if a.repeats == 0 {
        return Err(usage("--repeats must be >= 1"));
    }
    let datasets = a.data.load()?;
    let pipeline = a.pipeline.config();
    let jobs: Vec<(f64, f64, usize, u64)> = alphas
        .iter()
        .flat_map(|&al| betas.iter().map(move |&be| (al, be)))
        .enumerate()
        .flat_map(|(cell, (al, be))| {
            (0..a.repeats).map(move |r| (al, be, r, a.global.seed + (cell * a.repeats + r) as u64))
        })
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(alpha, beta, repeat, seed)| {
            let cfg = a.training.experiment(alpha, beta, pipeline, &a.global, seed);
            let r = run_experiment(&datasets, &cfg)?.report;
            Ok(SweepRun {
                alpha,
                beta,
                repeat,
                seed,
                f_score: r.test.mean_f_score,
                initial_val_loss: r.training.initial_val_loss,
                best_val_loss: r.training.best_val_loss,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let mut grid = SweepGrid::new();
    for chunk in runs.chunks(a.repeats) {
        let mean = chunk.iter().map(|r| r.f_score).sum::<f64>() / a.repeats as f64;
        grid.insert(chunk[0].alpha, chunk[0].beta, mean)?;
    }
    let mut csv = String::from("alpha,beta,F,twoAvg,twoMax\n");
    for &alpha in &alphas {
        let stats = sweep_stats(&grid, alpha, &betas)?;
        for &beta in &betas {
            let f = grid.get(alpha, beta).expect("cell was inserted");
            csv.push_str(&format!("{alpha},{beta},{f},{},{}\n", stats.two_avg, stats.two_max));
        }
        println!("alpha {alpha}: twoAvg {:.2} twoMax {:.2}", stats.two_avg, stats.two_max);
    }
    let out = resolve(&a.global, &a.out)?;
    atomic_write(&out, csv.as_bytes())?;
    let json = SweepOutput {
        command: "sweep",
        data: a.data.paths(),
        repeats: a.repeats,
        base_config: a.training.experiment(alphas[0], betas[0], pipeline, &a.global, a.global.seed),
        runs,
        grid,
    };
    let json_path = write_json(&a.global, &a.out.with_extension("json"), &json)?;
    println!("grid {} | runs {}", out.display(), json_path.display());
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CmdResult {
    if a.instances == 0 {
        return Err(usage("--instances must be >= 1"));
    }
    let results = gradcheck::run_all(a.instances, a.global.seed)?;
    for r in &results {
        println!(
            "{} {:<28} max err {:.3e} (tol {:.0e}, {} instances)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_error,
            r.tolerance,
            r.instances
        );
    }
    write_json(&a.global, &a.out, &results)?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: 3,
            message: format!("{failed} of {} checks failed", results.len()),
        });
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

/// Turn the `--config` file (if any) into flags placed right after the
/// subcommand, so flags given on the command line override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = strs.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(args) };
    if args.len() < 2 {
        return Ok(args);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read config {path}: {e}")))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{path}:{}: expected key = value", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if key == "config" {
            return Err(usage(format!("{path}:{}: config files cannot nest", n + 1)));
        }
        extra.push(OsString::from(format!("--{key}")));
        extra.push(OsString::from(v.trim()));
    }
    let mut out = args[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

fn run(args: Vec<OsString>) -> CmdResult {
    let args = expand_config(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(Failure {
                    code,
                    message: String::new(),
                })
            };
        }
    };
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
