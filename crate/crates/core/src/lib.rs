//! Clustering-based forecasters for sparse multivariate time series.
//!
//! Two model families share one data model and evaluation toolkit:
//!
//! * [`magma`]: static clustering with a mixture of Gaussian processes,
//!   fitted by variational EM, with GP predictive intervals.
//! * [`dgm2`]: dynamic (per-timestep) clustering with a recurrent deep
//!   generative model whose emission mixture is blended with static mixing
//!   weights.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix `f64`, which all documented tolerances assume.

pub mod data;
pub mod dgm2;
pub mod error;
pub mod forecast;
pub mod gp;
pub mod kmeans;
pub mod linalg;
pub mod magma;
pub mod metrics;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TimeSeriesSet64 = data::TimeSeriesSet<f64>;
pub type StandardizationParams64 = data::StandardizationParams<f64>;
pub type Kernel64 = gp::Kernel<f64>;
pub type GaussianState64 = gp::GaussianState<f64>;
pub type Mat64 = linalg::Mat<f64>;
pub type MagmaClustModel64 = magma::MagmaClustModel<f64>;
pub type Dgm2Model64 = dgm2::Dgm2Model<f64>;
pub type Forecast64 = forecast::Forecast<f64>;
pub type ClusterTrajectory64 = forecast::ClusterTrajectory<f64>;
