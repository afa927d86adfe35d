//! DeepKriging: spatial prediction with neural networks fed by
//! multi-resolution radial-basis embeddings of the coordinates.
//!
//! The crate bundles everything needed to compare the network against
//! classical predictors on the same data:
//!
//! * [`spatial`]: datasets, CSV ingestion, scaling, cross-validation splits,
//!   station-to-grid matching and error metrics.
//! * [`basis`]: Wendland / Gaussian multi-resolution basis systems.
//! * [`covariance`]: exponential and Matérn-1.5 covariances, Gram
//!   factorization with adaptive jitter, maximum likelihood fitting.
//! * [`kriging`]: universal Kriging and fixed rank Kriging.
//! * [`simulate`]: seeded generators for the benchmark designs.
//! * [`nn`]: a small dense network library (dropout, batch normalization,
//!   MSE / cross-entropy / joint binary cross-entropy, Adam).
//! * [`model`]: the DeepKriging model, baselines and the nonlinearity probe.
//! * [`ddsp`]: histogram-ensemble predictive densities and quantile loss.
//! * [`nngp`]: covariance kernels induced by infinitely wide networks.

pub mod basis;
pub mod covariance;
pub mod ddsp;
pub mod error;
pub mod kriging;
pub(crate) mod linalg;
pub mod model;
pub mod nn;
pub mod nngp;
pub mod rng;
pub mod simulate;
pub mod spatial;

pub use basis::{BasisSystem, DomainBox, EmbeddingMatrix, Kernel};
pub use covariance::{CovFamily, CovarianceModel, GramFactor};
pub use ddsp::{BinPartition, DensityEstimate};
pub use error::{Error, Result};
pub use kriging::KrigingPrediction;
pub use model::{DeepKrigingModel, NetworkOptions, Task};
pub use nn::{LayerSpec, Loss, NetworkState, TrainConfig};
pub use nngp::{Activation, NngpConfig};
pub use spatial::{FoldAssignment, Scaler, SpatialDataset};
