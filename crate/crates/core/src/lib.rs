//! Pipeline recommendation for new datasets from historical pipeline-by-dataset
//! performance.
//!
//! A feed-forward network over `[meta-features; pipeline embedding]` is trained
//! on the meta-data with squared loss; its last hidden layer is then used as the
//! basis of a conjugate Bayesian linear regression whose precisions are set by
//! maximizing the marginal likelihood. Expected improvement over the resulting
//! predictive distribution drives a sequential search over the fixed pipeline
//! set, which is replayed against recorded scores to measure regret.
//!
//! The numeric core ([`linalg`], [`basis_net`], [`blr`], [`acquisition`],
//! [`search::AblrModel`]) is generic over [`Scalar`]; the aliases below fix the
//! scalar to `f64` or `f32`.

pub mod acquisition;
pub mod basis_net;
pub mod blr;
pub mod cli;
pub mod linalg;
pub mod meta_features;
pub mod meta_store;
mod scalar;
pub mod search;

pub use scalar::Scalar;

pub use acquisition::{AcquisitionConfig, AcquisitionKind};
pub use basis_net::NetworkConfig;
pub use meta_store::{DatasetId, MetaDataset, PipelineId};
pub use search::{PolicyKind, SearchPolicy, SearchTrace};

pub type BasisNetwork64 = basis_net::BasisNetwork<f64>;
pub type BasisNetwork32 = basis_net::BasisNetwork<f32>;
pub type BlrPosterior64 = blr::BlrPosterior<f64>;
pub type BlrPosterior32 = blr::BlrPosterior<f32>;
pub type BlrHyperparams64 = blr::BlrHyperparams<f64>;
pub type BlrHyperparams32 = blr::BlrHyperparams<f32>;
pub type AblrModel64 = search::AblrModel<f64>;
pub type AblrModel32 = search::AblrModel<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
