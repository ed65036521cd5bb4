//! MLVS container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes          | content                                   |
//! |----------------|-------------------------------------------|
//! | 4              | magic `MLVS`                              |
//! | 4              | format version (`u32`)                    |
//! | 8              | metadata length `L` (`u64`)               |
//! | `L`            | UTF-8 JSON metadata                       |
//! | rest           | blob section: raw row-major floats        |
//!
//! Blob references in the metadata are `{offset, length}` in bytes, relative
//! to the start of the blob section. Blobs are 32-bit floats unless the
//! metadata's `dtype` says `f64` (used for full-precision checkpoints).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, Annotations, Dataset, FeatureKind, VideoRecord};
use crate::error::{Error, Result};
use crate::eval::FrameSet;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MLVS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub offset: u64,
    pub length: u64,
}

/// Accumulates the blob section.
#[derive(Debug, Default)]
pub struct BlobWriter {
    bytes: Vec<u8>,
    dtype: Dtype,
}

impl BlobWriter {
    pub fn new(dtype: Dtype) -> Self {
        Self { bytes: Vec::new(), dtype }
    }

    pub fn push(&mut self, values: &[f64]) -> BlobRef {
        let offset = self.bytes.len() as u64;
        for &v in values {
            match self.dtype {
                Dtype::F32 => self.bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => self.bytes.extend_from_slice(&v.to_le_bytes()),
            }
        }
        BlobRef {
            offset,
            length: self.bytes.len() as u64 - offset,
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Read access to a decoded blob section.
#[derive(Debug)]
pub struct Blobs<'a> {
    bytes: &'a [u8],
    dtype: Dtype,
}

impl<'a> Blobs<'a> {
    pub fn new(bytes: &'a [u8], dtype: Dtype) -> Self {
        Self { bytes, dtype }
    }

    /// Decode a blob expected to hold exactly `count` values.
    pub fn read(&self, blob: &BlobRef, count: usize, what: &str) -> Result<Vec<f64>> {
        let end = blob.offset.checked_add(blob.length);
        match end {
            Some(end) if end <= self.bytes.len() as u64 => {}
            _ => {
                return Err(Error::Truncated(format!(
                    "{what}: blob [{}, +{}) extends past the {}-byte blob section",
                    blob.offset,
                    blob.length,
                    self.bytes.len()
                )))
            }
        }
        let w = self.dtype.width();
        if blob.length != (count * w) as u64 {
            return Err(Error::ShapeInconsistent(format!(
                "{what}: metadata implies {count} values ({} bytes) but blob holds {} bytes",
                count * w,
                blob.length
            )));
        }
        let raw = &self.bytes[blob.offset as usize..(blob.offset + blob.length) as usize];
        Ok(match self.dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        })
    }
}

pub fn encode<M: Serialize>(meta: &M, blobs: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blobs.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(blobs);
    Ok(out)
}

/// Split a container into its parsed metadata and blob section.
pub fn decode<M: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<(M, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let meta_end = (HEADER_LEN as u64).checked_add(meta_len).filter(|&e| e <= bytes.len() as u64);
    let Some(meta_end) = meta_end else {
        return Err(Error::Truncated(format!(
            "metadata length {meta_len} exceeds the {}-byte file",
            bytes.len()
        )));
    };
    let meta_end = meta_end as usize;
    let meta = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| Error::Metadata(e.to_string()))?;
    Ok((meta, &bytes[meta_end..]))
}

pub const KIND_DATASET: &str = "dataset";
pub const KIND_CHECKPOINT: &str = "checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    kind: String,
    name: String,
    feature_kind: FeatureKind,
    #[serde(default)]
    dtype: Dtype,
    videos: Vec<VideoMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoMeta {
    id: String,
    frames: usize,
    dim: usize,
    fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    picks: Option<Vec<usize>>,
    features: BlobRef,
    gt_scores: BlobRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<AnnotationMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AnnotationLayout {
    /// `users x T` values in {0, 1}.
    Keyshots,
    /// `users x T` scores in [0, 1].
    Scores,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationMeta {
    layout: AnnotationLayout,
    users: usize,
    blob: BlobRef,
}

/// Serialize a dataset. Values are stored as 32-bit floats.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut blobs = BlobWriter::new(Dtype::F32);
    let videos = ds
        .videos
        .iter()
        .map(|v| {
            let features = blobs.push(&v.features.to_f64_vec());
            let gt_scores = blobs.push(&v.gt_scores);
            let annotations = v.user_annotations.as_ref().map(|a| {
                let (layout, flat): (_, Vec<f64>) = match a {
                    Annotations::Keyshots(sets) => (
                        AnnotationLayout::Keyshots,
                        sets.iter()
                            .flat_map(|s| s.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }))
                            .collect(),
                    ),
                    Annotations::Scores(s) => (AnnotationLayout::Scores, s.concat()),
                };
                AnnotationMeta {
                    layout,
                    users: a.users(),
                    blob: blobs.push(&flat),
                }
            });
            VideoMeta {
                id: v.id.clone(),
                frames: v.frames(),
                dim: v.dim(),
                fps: v.fps,
                picks: v.picks.clone(),
                features,
                gt_scores,
                annotations,
            }
        })
        .collect();
    let meta = DatasetMeta {
        kind: KIND_DATASET.into(),
        name: ds.name.clone(),
        feature_kind: ds.feature_kind,
        dtype: Dtype::F32,
        videos,
    };
    encode(&meta, &blobs.into_bytes())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (meta, blob_bytes): (DatasetMeta, _) = decode(bytes)?;
    if meta.kind != KIND_DATASET {
        return Err(Error::Metadata(format!("expected kind \"dataset\", found {:?}", meta.kind)));
    }
    let blobs = Blobs::new(blob_bytes, meta.dtype);
    let mut videos = Vec::with_capacity(meta.videos.len());
    for vm in meta.videos {
        if vm.frames == 0 || vm.dim == 0 {
            return Err(Error::ShapeInconsistent(format!("video {}: zero-sized features", vm.id)));
        }
        let what = format!("video {} features", vm.id);
        let feats = blobs.read(&vm.features, vm.frames * vm.dim, &what)?;
        let what = format!("video {} gt scores", vm.id);
        let gt_scores = blobs.read(&vm.gt_scores, vm.frames, &what)?;
        let user_annotations = match vm.annotations {
            None => None,
            Some(am) => {
                let what = format!("video {} annotations", vm.id);
                let flat = blobs.read(&am.blob, am.users * vm.frames, &what)?;
                let rows = flat.chunks(vm.frames);
                Some(match am.layout {
                    AnnotationLayout::Keyshots => {
                        Annotations::Keyshots(rows.map(|r| FrameSet::new(r.iter().map(|&x| x != 0.0).collect())).collect())
                    }
                    AnnotationLayout::Scores => Annotations::Scores(rows.map(<[f64]>::to_vec).collect()),
                })
            }
        };
        let video = VideoRecord {
            id: vm.id,
            features: Tensor::matrix(vm.frames, vm.dim, feats)?,
            gt_scores,
            user_annotations,
            fps: vm.fps,
            picks: vm.picks,
        };
        videos.push(video);
    }
    let ds = Dataset {
        name: meta.name,
        feature_kind: meta.feature_kind,
        videos,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_dataset(ds)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}
