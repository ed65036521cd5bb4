//! Synthetic task family for desk-scale experiments.
//!
//! Each video is a sequence of piecewise-constant segments, every segment a
//! prototype vector from a per-dataset pool, plus Gaussian noise. Frame
//! importance comes from one hidden logistic scorer shared by every dataset
//! generated with the same `mechanism_seed`, smoothed by a 3-frame moving
//! average. All videos therefore share one learnable scoring mechanism while
//! differing in content.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Annotations, Dataset, FeatureKind, VideoRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub num_videos: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub dim: usize,
    pub min_change_points: usize,
    pub max_change_points: usize,
    /// Standard deviation of per-frame feature noise.
    pub noise: f64,
    pub num_prototypes: usize,
    /// Number of simulated annotators (score vectors); 0 for none.
    pub num_users: usize,
    pub user_noise: f64,
    pub fps: f64,
    pub seed: u64,
    /// Seed of the hidden scoring weights shared across datasets.
    pub mechanism_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            num_videos: 12,
            min_frames: 40,
            max_frames: 80,
            dim: 16,
            min_change_points: 8,
            max_change_points: 16,
            noise: 0.1,
            num_prototypes: 8,
            num_users: 3,
            user_noise: 0.1,
            fps: 2.0,
            seed: 0,
            mechanism_seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 || self.dim == 0 || self.num_prototypes < 2 {
            return Err(Error::invalid("synthetic spec needs videos >= 1, dim >= 1, prototypes >= 2"));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::invalid(format!(
                "bad frame range [{}, {}]",
                self.min_frames, self.max_frames
            )));
        }
        if self.min_change_points > self.max_change_points {
            return Err(Error::invalid("min_change_points > max_change_points"));
        }
        if !(self.noise >= 0.0 && self.user_noise >= 0.0) {
            return Err(Error::invalid("noise levels must be >= 0"));
        }
        if self.fps.is_nan() || self.fps <= 0.0 {
            return Err(Error::invalid("fps must be positive"));
        }
        Ok(())
    }

    /// Apply `key=value` overrides (config file lines or CLI pairs).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
        }
        match key {
            "name" => self.name = value.to_string(),
            "num_videos" => self.num_videos = parse(key, value)?,
            "min_frames" => self.min_frames = parse(key, value)?,
            "max_frames" => self.max_frames = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "min_change_points" => self.min_change_points = parse(key, value)?,
            "max_change_points" => self.max_change_points = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "num_prototypes" => self.num_prototypes = parse(key, value)?,
            "num_users" => self.num_users = parse(key, value)?,
            "user_noise" => self.user_noise = parse(key, value)?,
            "fps" => self.fps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mechanism_seed" => self.mechanism_seed = parse(key, value)?,
            _ => return Err(Error::invalid(format!("unknown synthetic spec key {key:?}"))),
        }
        Ok(())
    }
}

/// Gain of the hidden scorer: logits have standard deviation ~2.5 on unit prototypes.
const MECHANISM_GAIN: f64 = 2.5;

/// Hidden scoring weights `(w, b)` for a mechanism seed.
pub fn mechanism(dim: usize, mechanism_seed: u64) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(mechanism_seed);
    let scale = MECHANISM_GAIN / (dim as f64).sqrt();
    let w = (0..dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .map(|z: f64| z * scale)
        .collect();
    (w, 0.0)
}

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim;
    let (w, b) = mechanism(d, spec.mechanism_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<Vec<f64>> = (0..spec.num_prototypes)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    let mut videos = Vec::with_capacity(spec.num_videos);
    for i in 0..spec.num_videos {
        let frames = rng.random_range(spec.min_frames..=spec.max_frames);
        let max_cp = spec.max_change_points.min(frames - 1);
        let min_cp = spec.min_change_points.min(max_cp);
        let cps = rng.random_range(min_cp..=max_cp);
        let mut bounds: Vec<usize> = if cps > 0 {
            sample(&mut rng, frames - 1, cps).into_iter().map(|c| c + 1).collect()
        } else {
            Vec::new()
        };
        bounds.sort_unstable();
        bounds.push(frames);

        let mut feats = Vec::with_capacity(frames * d);
        let mut start = 0;
        let mut prev_proto = usize::MAX;
        for &end in &bounds {
            let mut p = rng.random_range(0..spec.num_prototypes);
            while p == prev_proto {
                p = rng.random_range(0..spec.num_prototypes);
            }
            prev_proto = p;
            for _ in start..end {
                for &base in &prototypes[p] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    feats.push(round32(base + spec.noise * z));
                }
            }
            start = end;
        }

        let raw: Vec<f64> = feats
            .chunks(d)
            .map(|x| sigmoid(x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b))
            .collect();
        let gt_scores: Vec<f64> = (0..frames)
            .map(|t| {
                let lo = t.saturating_sub(1);
                let hi = (t + 1).min(frames - 1);
                round32(raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64)
            })
            .collect();

        let user_annotations = (spec.num_users > 0).then(|| {
            Annotations::Scores(
                (0..spec.num_users)
                    .map(|_| {
                        gt_scores
                            .iter()
                            .map(|&s| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                round32((s + spec.user_noise * z).clamp(0.0, 1.0))
                            })
                            .collect()
                    })
                    .collect(),
            )
        });

        videos.push(VideoRecord {
            id: format!("{}_{i:03}", spec.name),
            features: Tensor::matrix(frames, d, feats)?,
            gt_scores,
            user_annotations,
            fps: spec.fps,
            picks: None,
        });
    }
    let ds = Dataset {
        name: spec.name.clone(),
        feature_kind: FeatureKind::Synthetic,
        videos,
    };
    ds.validate()?;
    Ok(ds)
}
