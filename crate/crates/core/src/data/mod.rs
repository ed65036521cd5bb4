//! Videos, datasets and the operations that feed them into training.

pub mod container;
pub mod split;
pub mod synthetic;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::FrameSet;
use crate::meta::Task;
use crate::tensor::{Real, Tensor};

pub use container::{load, save};
pub use split::{split_transfer, subsample, subsample_capped, VideoSplit, DEFAULT_MAX_FRAMES};
pub use synthetic::{gen_synthetic, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Deep,
    Shallow,
    Synthetic,
}

/// Per-user annotations: either keyshot selections or frame-score vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Annotations {
    Keyshots(Vec<FrameSet>),
    Scores(Vec<Vec<f64>>),
}

impl Annotations {
    pub fn users(&self) -> usize {
        match self {
            Annotations::Keyshots(v) => v.len(),
            Annotations::Scores(v) => v.len(),
        }
    }

    fn frames_ok(&self, frames: usize) -> bool {
        match self {
            Annotations::Keyshots(v) => v.iter().all(|s| s.frames() == frames),
            Annotations::Scores(v) => v.iter().all(|s| s.len() == frames),
        }
    }

    /// Keep only the frames at `picks`.
    pub fn select(&self, picks: &[usize]) -> Self {
        match self {
            Annotations::Keyshots(v) => Annotations::Keyshots(
                v.iter()
                    .map(|s| FrameSet::new(picks.iter().map(|&p| s.contains(p)).collect()))
                    .collect(),
            ),
            Annotations::Scores(v) => {
                Annotations::Scores(v.iter().map(|s| picks.iter().map(|&p| s[p]).collect()).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    /// `T x D`.
    pub features: Tensor<f64>,
    /// Ground-truth frame scores in [0, 1], length `T`.
    pub gt_scores: Vec<f64>,
    pub user_annotations: Option<Annotations>,
    pub fps: f64,
    /// Original frame indices when the video has been subsampled.
    pub picks: Option<Vec<usize>>,
}

impl VideoRecord {
    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (t, _) = self.features.dims2("video features")?;
        if self.gt_scores.len() != t {
            return Err(Error::ShapeInconsistent(format!(
                "video {}: {} frames but {} gt scores",
                self.id,
                t,
                self.gt_scores.len()
            )));
        }
        if self.gt_scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid(format!("video {}: gt scores outside [0, 1]", self.id)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid(format!("video {}: fps must be positive", self.id)));
        }
        if let Some(a) = &self.user_annotations {
            if !a.frames_ok(t) {
                return Err(Error::ShapeInconsistent(format!(
                    "video {}: annotation length differs from {t} frames",
                    self.id
                )));
            }
            if let Annotations::Scores(v) = a {
                if v.iter().flatten().any(|s| !(0.0..=1.0).contains(s)) {
                    return Err(Error::invalid(format!("video {}: user scores outside [0, 1]", self.id)));
                }
            }
        }
        if let Some(p) = &self.picks {
            if p.len() != t {
                return Err(Error::ShapeInconsistent(format!(
                    "video {}: {} picks for {t} frames",
                    self.id,
                    p.len()
                )));
            }
        }
        Ok(())
    }

    /// Training task with the given qualified id, converted to precision `T`.
    pub fn task<T: Real>(&self, id: impl Into<String>) -> Result<Task<T>> {
        let target = Tensor::vector(self.gt_scores.clone())?;
        Task::new(id, self.features.cast(), target.cast())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub feature_kind: FeatureKind,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut dim = None;
        for v in &self.videos {
            v.validate()?;
            if !ids.insert(v.id.as_str()) {
                return Err(Error::invalid(format!("dataset {}: duplicate video id {:?}", self.name, v.id)));
            }
            match dim {
                None => dim = Some(v.dim()),
                Some(d) if d != v.dim() => {
                    return Err(Error::ShapeInconsistent(format!(
                        "dataset {}: video {} has D={} but others have D={d}",
                        self.name,
                        v.id,
                        v.dim()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.videos.first().map(VideoRecord::dim)
    }

    pub fn video(&self, id: &str) -> Result<&VideoRecord> {
        self.videos
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| Error::UnknownVideo(id.to_string()))
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory and
/// a rename, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
