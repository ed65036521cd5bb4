//! Frame scores to keyshot summaries to F-scores, per video.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Annotations, VideoRecord};
use crate::error::{Error, Result};
use crate::eval::{prf, Aggregation, FrameSet, Prf};
use crate::learner::FrameScorer;
use crate::params::ParamSet;
use crate::segmentation::{default_max_segments, kts, Segmentation};
use crate::summary::{summarize_scores, SelectStrategy, Summary, DEFAULT_BUDGET};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub budget: f64,
    pub strategy: SelectStrategy,
    pub aggregation: Aggregation,
    /// `None` means `ceil(T / 40)`.
    pub max_segments: Option<usize>,
    pub penalty_weight: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            strategy: SelectStrategy::Rank,
            aggregation: Aggregation::Mean,
            max_segments: None,
            penalty_weight: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return Err(Error::invalid(format!("budget must be in (0, 1], got {}", self.budget)));
        }
        if self.max_segments == Some(0) {
            return Err(Error::invalid("max_segments must be >= 1"));
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(Error::invalid("penalty_weight must be finite and >= 0"));
        }
        Ok(())
    }
}

pub fn segment_video(video: &VideoRecord, cfg: &PipelineConfig) -> Result<Segmentation> {
    let m = cfg.max_segments.unwrap_or_else(|| default_max_segments(video.frames()));
    kts(&video.features, m, cfg.penalty_weight)
}

/// Reference keyshot sets for a video. Score annotations (or, without any
/// annotations, the ground-truth scores as a single user) go through the same
/// segmentation and selection as the predictions.
pub fn user_keyshots(video: &VideoRecord, seg: &Segmentation, cfg: &PipelineConfig) -> Result<Vec<FrameSet>> {
    let from_scores = |s: &[f64]| -> Result<FrameSet> {
        Ok(FrameSet::new(summarize_scores(s, seg, cfg.budget, cfg.strategy)?.selected))
    };
    match &video.user_annotations {
        Some(Annotations::Keyshots(sets)) => Ok(sets.clone()),
        Some(Annotations::Scores(scores)) => scores.iter().map(|s| from_scores(s)).collect(),
        None => Ok(vec![from_scores(&video.gt_scores)?]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub id: String,
    pub frames: usize,
    pub change_points: Vec<usize>,
    pub selected_frames: usize,
    /// Aggregated over users: mean of each quantity, or the user with the highest F.
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

fn aggregate(per_user: &[Prf], agg: Aggregation) -> Result<Prf> {
    if per_user.is_empty() {
        return Err(Error::invalid("no user annotations to evaluate against"));
    }
    Ok(match agg {
        Aggregation::Mean => {
            let n = per_user.len() as f64;
            Prf {
                precision: per_user.iter().map(|p| p.precision).sum::<f64>() / n,
                recall: per_user.iter().map(|p| p.recall).sum::<f64>() / n,
                f_score: per_user.iter().map(|p| p.f_score).sum::<f64>() / n,
            }
        }
        // First user wins ties.
        Aggregation::Max => *per_user
            .iter()
            .reduce(|a, b| if b.f_score > a.f_score { b } else { a })
            .expect("non-empty"),
    })
}

/// Summarize `scores` and evaluate against the video's users.
pub fn evaluate_scores(video: &VideoRecord, scores: &[f64], cfg: &PipelineConfig) -> Result<(Summary, VideoResult)> {
    if scores.len() != video.frames() {
        return Err(Error::ShapeMismatch {
            op: "evaluate_scores",
            lhs: vec![scores.len()],
            rhs: vec![video.frames()],
        });
    }
    let seg = segment_video(video, cfg)?;
    let summary = summarize_scores(scores, &seg, cfg.budget, cfg.strategy)?;
    let picked = FrameSet::new(summary.selected.clone());
    let users = user_keyshots(video, &seg, cfg)?;
    let per_user = users.iter().map(|u| prf(&picked, u)).collect::<Result<Vec<_>>>()?;
    let agg = aggregate(&per_user, cfg.aggregation)?;
    let result = VideoResult {
        id: video.id.clone(),
        frames: video.frames(),
        change_points: seg.change_points().to_vec(),
        selected_frames: summary.selected_frames(),
        precision: agg.precision,
        recall: agg.recall,
        f_score: agg.f_score,
    };
    Ok((summary, result))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: PipelineConfig,
    pub videos: Vec<VideoResult>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f_score: f64,
}

impl EvalReport {
    pub fn from_results(config: PipelineConfig, videos: Vec<VideoResult>) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::invalid("no videos to evaluate"));
        }
        let n = videos.len() as f64;
        let mean = |f: fn(&VideoResult) -> f64| videos.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            mean_precision: mean(|v| v.precision),
            mean_recall: mean(|v| v.recall),
            mean_f_score: mean(|v| v.f_score),
            config,
            videos,
        })
    }
}

/// Score every video with the model at precision `T` and evaluate. Videos run
/// in parallel; results keep input order.
pub fn evaluate_model<T: Real, M: FrameScorer + Sync>(
    model: &M,
    params: &ParamSet<T>,
    videos: &[&VideoRecord],
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let results = videos
        .par_iter()
        .map(|v| {
            let scores = model.predict(params, &v.features.cast())?;
            evaluate_scores(v, &scores.to_f64_vec(), cfg).map(|(_, r)| r)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_results(*cfg, results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn two_block_video(users: Option<Annotations>) -> VideoRecord {
        let t = 40;
        let feats = (0..t)
            .flat_map(|i| if i < 20 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        VideoRecord {
            id: "v".into(),
            features: Tensor::matrix(t, 2, feats).unwrap(),
            gt_scores: (0..t).map(|i| if i < 20 { 0.9 } else { 0.1 }).collect(),
            user_annotations: users,
            fps: 2.0,
            picks: None,
        }
    }

    #[test]
    fn perfect_scores_on_ground_truth() {
        let v = two_block_video(None);
        let cfg = PipelineConfig {
            budget: 0.5,
            max_segments: Some(2),
            ..Default::default()
        };
        let (summary, r) = evaluate_scores(&v, &v.gt_scores, &cfg).unwrap();
        assert_eq!(r.change_points, vec![20]);
        assert_eq!(summary.selected_frames(), 20);
        assert_eq!(r.f_score, 100.0);
    }

    #[test]
    fn inverted_scores_miss_entirely() {
        let v = two_block_video(None);
        let cfg = PipelineConfig {
            budget: 0.5,
            max_segments: Some(2),
            ..Default::default()
        };
        let inv: Vec<f64> = v.gt_scores.iter().map(|s| 1.0 - s).collect();
        let (_, r) = evaluate_scores(&v, &inv, &cfg).unwrap();
        assert_eq!(r.f_score, 0.0);
    }

    #[test]
    fn keyshot_users_used_directly() {
        let first = FrameSet::from_indices(&(0..20).collect::<Vec<_>>(), 40).unwrap();
        let v = two_block_video(Some(Annotations::Keyshots(vec![first.clone(), first.complement()])));
        let cfg = PipelineConfig {
            budget: 0.5,
            max_segments: Some(2),
            aggregation: Aggregation::Max,
            ..Default::default()
        };
        let (_, r) = evaluate_scores(&v, &v.gt_scores, &cfg).unwrap();
        assert_eq!(r.f_score, 100.0);
        let cfg = PipelineConfig {
            aggregation: Aggregation::Mean,
            ..cfg
        };
        let (_, r) = evaluate_scores(&v, &v.gt_scores, &cfg).unwrap();
        assert_eq!(r.f_score, 50.0);
        assert_eq!((r.precision, r.recall), (0.5, 0.5));
    }

    #[test]
    fn length_mismatch() {
        let v = two_block_video(None);
        assert!(evaluate_scores(&v, &[0.5; 3], &PipelineConfig::default()).is_err());
    }
}
