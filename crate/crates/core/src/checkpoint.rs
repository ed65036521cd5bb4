//! Learner checkpoints, stored in the MLVS container with `kind = "checkpoint"`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::atomic_write;
use crate::data::container::{decode, encode, BlobRef, BlobWriter, Blobs, Dtype, KIND_CHECKPOINT};
use crate::error::{Error, Result};
use crate::learner::{FrameScorer, LearnerConfig, VsLstm};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: LearnerConfig,
    pub params: ParamSet<f64>,
    /// Free-form provenance (hyperparameters, seed, ...).
    pub info: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    blob: BlobRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    learner: String,
    config: LearnerConfig,
    dtype: Dtype,
    tensors: Vec<TensorMeta>,
    #[serde(default)]
    info: serde_json::Value,
}

const LEARNER_NAME: &str = "vslstm";

impl Checkpoint {
    pub fn model(&self) -> Result<VsLstm> {
        VsLstm::new(self.config)
    }

    /// Parameters are written as 64-bit floats, so the round trip is exact.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut blobs = BlobWriter::new(Dtype::F64);
        let tensors = self
            .params
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                blob: blobs.push(t.data()),
            })
            .collect();
        let meta = CheckpointMeta {
            kind: KIND_CHECKPOINT.into(),
            learner: LEARNER_NAME.into(),
            config: self.config,
            dtype: Dtype::F64,
            tensors,
            info: self.info.clone(),
        };
        encode(&meta, &blobs.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (meta, blob_bytes): (CheckpointMeta, _) = decode(bytes)?;
        if meta.kind != KIND_CHECKPOINT {
            return Err(Error::Metadata(format!("expected kind \"checkpoint\", found {:?}", meta.kind)));
        }
        if meta.learner != LEARNER_NAME {
            return Err(Error::Metadata(format!("unsupported learner {:?}", meta.learner)));
        }
        let blobs = Blobs::new(blob_bytes, meta.dtype);
        let entries = meta
            .tensors
            .into_iter()
            .map(|tm| {
                let n = tm.shape.iter().product();
                let data = blobs.read(&tm.blob, n, &tm.name)?;
                Ok((tm.name, Tensor::new(tm.shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ParamSet::new(entries)?;
        let model = VsLstm::new(meta.config)?;
        if params.specs() != model.param_specs() {
            return Err(Error::ShapeInconsistent(
                "checkpoint tensors do not match the learner configuration".into(),
            ));
        }
        Ok(Self {
            config: meta.config,
            params,
            info: meta.info,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
