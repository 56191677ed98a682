//! Probing how emotion-recognition-in-conversation models use dialogue context.
//!
//! Numeric code is generic over [`scalar::Scalar`]; the aliases below fix it to `f64`.

pub mod analysis;
pub mod corpus;
pub mod crf;
pub mod diffcore;
pub mod embed;
pub mod models;
pub mod perturb;
pub mod rng;
pub mod scalar;
pub mod trainer;

use thiserror::Error;

pub type Tensor = diffcore::Tensor<f64>;
pub type Param = diffcore::Param<f64>;
pub type ParamSet = diffcore::ParamSet<f64>;
pub type Gradients = diffcore::Gradients<f64>;
pub type AdamState = diffcore::AdamState<f64>;
pub type CrfParams = crf::CrfParams<f64>;
pub type CrfMarginals = crf::CrfMarginals<f64>;
pub type EmbeddingTable = embed::EmbeddingTable<f64>;
pub type Model = models::Model<f64>;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Embed(#[from] embed::EmbedError),
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
    #[error(transparent)]
    Crf(#[from] crf::CrfError),
    #[error(transparent)]
    Model(#[from] models::ModelError),
    #[error(transparent)]
    Features(#[from] models::FeatureError),
    #[error(transparent)]
    Perturb(#[from] perturb::PerturbError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Train(#[from] trainer::TrainError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
