//! Transfer-setting splits and temporal subsampling.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::meta::Task;
use crate::tensor::{Real, Tensor};

/// Frame cap applied by [`subsample`] for very long videos.
pub const DEFAULT_MAX_FRAMES: usize = 1500;

/// A video together with the dataset it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitVideo {
    pub dataset: String,
    pub video: VideoRecord,
}

impl SplitVideo {
    /// `dataset/id`, unique across a split.
    pub fn key(&self) -> String {
        format!("{}/{}", self.dataset, self.video.id)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VideoSplit {
    pub train: Vec<SplitVideo>,
    pub val: Vec<SplitVideo>,
    pub test: Vec<SplitVideo>,
}

fn tasks<T: Real>(videos: &[SplitVideo]) -> Result<Vec<Task<T>>> {
    videos.iter().map(|v| v.video.task(v.key())).collect()
}

impl VideoSplit {
    pub fn train_tasks<T: Real>(&self) -> Result<Vec<Task<T>>> {
        tasks(&self.train)
    }

    pub fn val_tasks<T: Real>(&self) -> Result<Vec<Task<T>>> {
        tasks(&self.val)
    }

    pub fn test_tasks<T: Real>(&self) -> Result<Vec<Task<T>>> {
        tasks(&self.test)
    }

    /// Checks that no video appears in two subsets.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for v in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(v.key()) {
                return Err(Error::invalid(format!("video {} appears twice in the split", v.key())));
            }
        }
        Ok(())
    }
}

/// Hold out `test_name` entirely for testing; shuffle the videos of every
/// other dataset and send `round(val_fraction * count)` of them to validation,
/// the rest to training.
pub fn split_transfer(datasets: &[Dataset], test_name: &str, val_fraction: f64, seed: u64) -> Result<VideoSplit> {
    if datasets.len() < 2 {
        return Err(Error::invalid("a transfer split needs at least 2 datasets"));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid(format!("val_fraction must be in [0, 1), got {val_fraction}")));
    }
    let mut names = HashSet::new();
    for ds in datasets {
        if !names.insert(ds.name.as_str()) {
            return Err(Error::invalid(format!("dataset name {:?} given twice", ds.name)));
        }
    }
    let wrap = |ds: &Dataset| -> Vec<SplitVideo> {
        ds.videos
            .iter()
            .map(|v| SplitVideo {
                dataset: ds.name.clone(),
                video: v.clone(),
            })
            .collect()
    };
    let test_ds = datasets
        .iter()
        .find(|d| d.name == test_name)
        .ok_or_else(|| Error::UnknownDataset(test_name.to_string()))?;
    let test = wrap(test_ds);
    let mut pool: Vec<SplitVideo> = datasets.iter().filter(|d| d.name != test_name).flat_map(wrap).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let n_val = (val_fraction * pool.len() as f64).round() as usize;
    let train = pool.split_off(n_val);
    let split = VideoSplit { train, val: pool, test };
    split.check_disjoint()?;
    if split.train.len() < 2 {
        return Err(Error::invalid(format!(
            "transfer split leaves {} training videos, need at least 2",
            split.train.len()
        )));
    }
    Ok(split)
}

fn select_rows(x: &Tensor<f64>, rows: &[usize]) -> Result<Tensor<f64>> {
    let (_, d) = x.dims2("subsample")?;
    let data = rows.iter().flat_map(|&r| x.row(r).iter().copied()).collect();
    Tensor::matrix(rows.len(), d, data)
}

/// Uniform-stride subsampling to about `target_fps`, capped at
/// [`DEFAULT_MAX_FRAMES`] frames.
pub fn subsample(video: &VideoRecord, target_fps: f64) -> Result<VideoRecord> {
    subsample_capped(video, target_fps, DEFAULT_MAX_FRAMES)
}

/// Keep every `stride`-th frame with `stride = round(fps / target_fps)`; if
/// that still leaves more than `max_frames`, grow the stride until it fits.
pub fn subsample_capped(video: &VideoRecord, target_fps: f64, max_frames: usize) -> Result<VideoRecord> {
    if !(target_fps > 0.0 && target_fps <= video.fps) {
        return Err(Error::invalid(format!(
            "target fps {target_fps} must be in (0, {}]",
            video.fps
        )));
    }
    if max_frames == 0 {
        return Err(Error::invalid("max_frames must be >= 1"));
    }
    let frames = video.frames();
    let mut stride = ((video.fps / target_fps).round() as usize).max(1);
    if frames.div_ceil(stride) > max_frames {
        stride = frames.div_ceil(max_frames);
    }
    if stride == 1 {
        return Ok(video.clone());
    }
    let rows: Vec<usize> = (0..frames).step_by(stride).collect();
    let picks = match &video.picks {
        Some(p) => rows.iter().map(|&r| p[r]).collect(),
        None => rows.clone(),
    };
    Ok(VideoRecord {
        id: video.id.clone(),
        features: select_rows(&video.features, &rows)?,
        gt_scores: rows.iter().map(|&r| video.gt_scores[r]).collect(),
        user_annotations: video.user_annotations.as_ref().map(|a| a.select(&rows)),
        fps: video.fps / stride as f64,
        picks: Some(picks),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{gen_synthetic, SyntheticSpec};
    use crate::data::FeatureKind;
    use proptest::prelude::*;

    fn ds(name: &str, n: usize, seed: u64) -> Dataset {
        gen_synthetic(&SyntheticSpec {
            name: name.into(),
            num_videos: n,
            min_frames: 5,
            max_frames: 8,
            dim: 3,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn flat_video(frames: usize, fps: f64) -> VideoRecord {
        VideoRecord {
            id: "long".into(),
            features: Tensor::matrix(frames, 1, (0..frames).map(|i| i as f64).collect()).unwrap(),
            gt_scores: vec![0.5; frames],
            user_annotations: None,
            fps,
            picks: None,
        }
    }

    #[test]
    fn two_datasets_no_validation() {
        let a = ds("a", 4, 1);
        let b = ds("b", 3, 2);
        let s = split_transfer(&[a, b.clone()], "a", 0.0, 0).unwrap();
        assert_eq!(s.test.len(), 4);
        assert!(s.val.is_empty());
        let mut ids: Vec<_> = s.train.iter().map(|v| v.video.id.clone()).collect();
        ids.sort();
        assert_eq!(ids, b.videos.iter().map(|v| v.id.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn split_sizes() {
        let sets = [ds("a", 10, 1), ds("b", 10, 2), ds("c", 10, 3)];
        let s = split_transfer(&sets, "b", 0.2, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (16, 4, 10));
        assert!(s.test.iter().all(|v| v.dataset == "b"));
    }

    #[test]
    fn unknown_test_dataset() {
        let sets = [ds("a", 3, 1), ds("b", 3, 2)];
        assert!(matches!(split_transfer(&sets, "zz", 0.2, 0), Err(Error::UnknownDataset(_))));
    }

    #[test]
    fn identity_subsample() {
        let v = flat_video(10, 2.0);
        assert_eq!(subsample(&v, 2.0).unwrap(), v);
        assert!(subsample(&v, 4.0).is_err());
    }

    #[test]
    fn thirty_to_two_fps() {
        let v = flat_video(100, 30.0);
        let s = subsample(&v, 2.0).unwrap();
        assert_eq!(s.picks.as_ref().unwrap(), &(0..100).step_by(15).collect::<Vec<_>>());
        assert_eq!(s.features.row(1), &[15.0]);
        assert_eq!(s.fps, 2.0);
    }

    #[test]
    fn three_hour_video_is_capped() {
        let v = flat_video(324_000, 30.0);
        let s = subsample(&v, 2.0).unwrap();
        // 2 fps would give 21,600 frames; the cap forces stride 216.
        assert!(s.frames() <= DEFAULT_MAX_FRAMES);
        assert_eq!(s.frames(), 1500);
        assert_eq!(s.picks.as_ref().unwrap()[1], 216);
    }

    #[test]
    fn picks_compose() {
        let v = flat_video(120, 30.0);
        let once = subsample_capped(&v, 10.0, 1000).unwrap();
        let twice = subsample_capped(&once, 2.0, 1000).unwrap();
        assert_eq!(twice.picks.unwrap()[1], 15);
    }

    #[test]
    fn split_rejects_single_dataset() {
        let d = Dataset {
            name: "x".into(),
            feature_kind: FeatureKind::Deep,
            videos: vec![],
        };
        assert!(split_transfer(&[d], "x", 0.2, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_exhaustive(sizes in proptest::collection::vec(1usize..6, 2..4), frac in 0.0f64..0.5, seed in any::<u64>()) {
            let sets: Vec<Dataset> = sizes.iter().enumerate().map(|(i, &n)| ds(&format!("d{i}"), n, i as u64)).collect();
            let total: usize = sizes.iter().sum();
            match split_transfer(&sets, "d0", frac, seed) {
                Ok(s) => {
                    prop_assert!(s.check_disjoint().is_ok());
                    prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), total);
                    prop_assert_eq!(s.test.len(), sizes[0]);
                }
                Err(_) => prop_assert!(total - sizes[0] - ((frac * (total - sizes[0]) as f64).round() as usize) < 2),
            }
        }
    }
}
