//! Model checkpoints: one JSON document holding a format tag, the model
//! and training configs, the vocabulary and the flat parameter vector.
//! Floats are written with round-trip precision, so a reload is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crsim_core::io::atomic_write;
use crsim_core::protocol::Role;

use crate::model::{ModelConfig, ModelError, TinyLm};
use crate::train::TrainConfig;
use crate::vocab::{Vocab, VocabError};

pub const FORMAT: &str = "crsim-toylm";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: unsupported checkpoint format {format} v{version}")]
    Unsupported { path: String, format: String, version: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Role whose turns the model was trained to produce.
    pub trained_role: Role,
    /// Role whose view supplied the loss mask; differs from `trained_role`
    /// only for the view-swap ablation.
    pub view_role: Role,
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub vocab: Vocab,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &TinyLm, vocab: &Vocab, trained_role: Role, view_role: Role, train: Option<TrainConfig>) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            trained_role,
            view_role,
            config: *model.config(),
            train,
            vocab: vocab.clone(),
            params: model.params().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let json = serde_json::to_vec(self).map_err(|source| CheckpointError::Json {
            path: path.display().to_string(),
            source,
        })?;
        atomic_write(path, &json).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let shown = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut ck: Checkpoint = serde_json::from_slice(&bytes).map_err(|source| CheckpointError::Json {
            path: shown.clone(),
            source,
        })?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(CheckpointError::Unsupported {
                path: shown,
                format: ck.format,
                version: ck.version,
            });
        }
        ck.vocab = ck.vocab.rebuild()?;
        Ok(ck)
    }

    pub fn model(&self) -> Result<TinyLm, CheckpointError> {
        Ok(TinyLm::from_params(self.config, self.params.clone())?)
    }
}
