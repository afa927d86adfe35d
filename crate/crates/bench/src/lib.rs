//! Shared inputs for the criterion benchmarks.

use deepkriging::covariance::{CovFamily, CovarianceModel};
use deepkriging::simulate::{nonstat_2d, sample_gp_1d, GpConfig};
use deepkriging::SpatialDataset;

/// 1-D Gaussian process sample of size `n` with the default parameters.
pub fn gp_1d(n: usize) -> SpatialDataset {
    sample_gp_1d(&GpConfig { n, seed: 7, ..GpConfig::default() }).expect("valid config")
}

/// Noiseless 2-D surface on a `side` x `side` grid.
pub fn surface_2d(side: usize) -> SpatialDataset {
    nonstat_2d(side).expect("valid side")
}

pub fn exponential() -> CovarianceModel {
    CovarianceModel::new(CovFamily::Exponential, 1.0, 0.1, 0.01).expect("valid parameters")
}
