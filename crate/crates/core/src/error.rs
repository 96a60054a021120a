use thiserror::Error;

use crate::dataset::DatasetError;
use crate::explain::ExplainError;
use crate::metrics::MetricError;
use crate::models::ModelError;
use crate::sampler::SamplerError;
use crate::store::StoreError;

/// Umbrella error for operations that cross module boundaries (sweeps,
/// remedies, the service layer).
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
