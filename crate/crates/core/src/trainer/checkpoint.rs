use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::corpus::Corpus;
use crate::diffcore::{StoredParams, Tensor};
use crate::embed::{EmbeddingTable, Vocab};
use crate::models::{ExtractorKind, Model};
use crate::scalar::Scalar;

/// Everything needed to rebuild a trained model: configuration, label names,
/// vocabulary and parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub label_set: Vec<String>,
    pub vocab: Option<Vocab>,
    pub params: StoredParams,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        config: &TrainConfig,
        model: &Model<T>,
        label_set: &[String],
    ) -> Self {
        Self {
            config: config.clone(),
            label_set: label_set.to_vec(),
            vocab: model.vocab.clone(),
            params: StoredParams::capture(&model.params),
        }
    }

    /// Rebuilds the model; fails when `corpus` carries a different label set.
    pub fn model<T: Scalar>(&self, corpus: &Corpus) -> Result<Model<T>, TrainError> {
        if corpus.label_set != self.label_set {
            return Err(TrainError::Incompatible(format!(
                "labels {:?} vs corpus {:?}",
                self.label_set, corpus.label_set
            )));
        }
        self.rebuild()
    }

    pub fn rebuild<T: Scalar>(&self) -> Result<Model<T>, TrainError> {
        let cfg = &self.config.model;
        // The embedding table is a parameter, so a zero placeholder is overwritten on restore.
        let table = match (cfg.extractor, &self.vocab) {
            (ExtractorKind::Cnn, Some(v)) => Some(EmbeddingTable {
                dim: cfg.embed_dim,
                matrix: Tensor::zeros(v.len(), cfg.embed_dim),
                trainable: cfg.trainable_embeddings,
            }),
            _ => None,
        };
        let mut model = Model::new(
            cfg.clone(),
            self.label_set.len(),
            self.vocab.clone(),
            table,
            self.params.rng_seed,
        )?;
        self.params
            .restore_into(&mut model.params)
            .map_err(|e| TrainError::Incompatible(e.to_string()))?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}
