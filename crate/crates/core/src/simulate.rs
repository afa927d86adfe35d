//! Seeded generators for the benchmark designs.
//!
//! Every generator is a pure function of its configuration: the same config
//! and seed always produce the same dataset, bit for bit.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::basis::linspace_column;
use crate::covariance::{self, CovFamily, CovarianceModel};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::spatial::SpatialDataset;

/// Stationary Gaussian process on an equally spaced 1-D grid over `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub n: usize,
    pub mu: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub tau2: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { n: 1000, mu: 1.0, sigma2: 1.0, rho: 0.1, tau2: 0.01, seed: 0 }
    }
}

impl GpConfig {
    pub fn model(&self) -> Result<CovarianceModel> {
        CovarianceModel::new(CovFamily::Exponential, self.sigma2, self.rho, self.tau2)
    }
}

/// `z = mu + L xi + sqrt(tau2) eps` with `L` the Cholesky factor of the
/// nugget-free exponential Gram matrix.
pub fn sample_gp_1d(config: &GpConfig) -> Result<SpatialDataset> {
    if config.n < 2 {
        return Err(Error::invalid(format!("need n >= 2, got {}", config.n)));
    }
    let model = config.model()?;
    let locations = linspace_column(0.0, 1.0, config.n);
    let factor = covariance::gram(&locations, &model.without_nugget())?;
    let mut field_rng = rng::stream(config.seed, Stream::GaussianField);
    let xi: Array1<f64> = (0..config.n).map(|_| rng::standard_normal(&mut field_rng)).collect();
    let mut noise_rng = rng::stream(config.seed, Stream::Noise);
    let sd = config.tau2.sqrt();
    let field = factor.lower.dot(&xi);
    let z = field.mapv(|v| v + config.mu) + (0..config.n).map(|_| sd * rng::standard_normal(&mut noise_rng)).collect::<Array1<f64>>();
    SpatialDataset::from_locations(locations, z)
}

/// The deterministic non-stationary surface as a function of `(x, y)`.
pub fn nonstat_surface(x: f64, y: f64) -> f64 {
    let t = 0.5 * (x + y) - 0.9;
    (30.0 * t.powi(4)).sin() * (2.0 * t).cos() + t / 2.0
}

/// The surface on a `side x side` lattice spanning `[0, 1]^2`, noiseless.
/// Rows run with the second coordinate fastest.
pub fn nonstat_2d(side: usize) -> Result<SpatialDataset> {
    if side < 2 {
        return Err(Error::invalid(format!("grid side must be >= 2, got {side}")));
    }
    let n = side * side;
    let step = 1.0 / (side - 1) as f64;
    let mut locations = Array2::zeros((n, 2));
    let mut z = Array1::zeros(n);
    for i in 0..side {
        for j in 0..side {
            let r = i * side + j;
            let (x, y) = (i as f64 * step, j as f64 * step);
            locations[[r, 0]] = x;
            locations[[r, 1]] = y;
            z[r] = nonstat_surface(x, y);
        }
    }
    SpatialDataset::from_locations(locations, z)
}

/// Two-branch heteroscedastic mixture on an equally spaced grid over `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub n: usize,
    /// Noise sd of the first branch.
    pub tau1: f64,
    /// Noise sd of the second branch.
    pub tau2: f64,
    /// Probability of the first branch.
    pub p: f64,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig { n: 2500, tau1: 0.2, tau2: 0.3, p: 0.5, seed: 0 }
    }
}

impl MixtureConfig {
    pub fn branch_means(s: f64) -> (f64, f64) {
        ((5.0 * s).sin() + 0.7, 2.0 * (8.0 * s).sin())
    }

    /// Conditional mean of the response at `s`.
    pub fn mean(&self, s: f64) -> f64 {
        let (a, b) = Self::branch_means(s);
        self.p * a + (1.0 - self.p) * b
    }

    /// Conditional distribution function of the response at `s`.
    pub fn cdf(&self, s: f64, y: f64) -> f64 {
        let (a, b) = Self::branch_means(s);
        let phi = |x: f64| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
        self.p * phi((y - a) / self.tau1) + (1.0 - self.p) * phi((y - b) / self.tau2)
    }

    /// Conditional quantile at `s`, by bisection on [`Self::cdf`].
    pub fn quantile(&self, s: f64, t: f64) -> f64 {
        let (a, b) = Self::branch_means(s);
        let spread = 10.0 * self.tau1.max(self.tau2);
        let (mut lo, mut hi) = (a.min(b) - spread, a.max(b) + spread);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(s, mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Mixture draw together with the branch taken at each site.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub dataset: SpatialDataset,
    /// `true` where the first branch was drawn.
    pub first_branch: Vec<bool>,
}

pub fn gaussian_mixture_1d(config: &MixtureConfig) -> Result<MixtureSample> {
    if config.n < 2 {
        return Err(Error::invalid(format!("need n >= 2, got {}", config.n)));
    }
    if !(config.tau1 > 0.0 && config.tau2 > 0.0 && (0.0..=1.0).contains(&config.p)) {
        return Err(Error::invalid("mixture needs positive noise scales and p in [0, 1]"));
    }
    let locations = linspace_column(0.0, 1.0, config.n);
    let mut flags = rng::stream(config.seed, Stream::MixtureFlags);
    let mut noise = rng::stream(config.seed, Stream::Noise);
    let mut first_branch = Vec::with_capacity(config.n);
    let mut z = Array1::zeros(config.n);
    for i in 0..config.n {
        let s = locations[[i, 0]];
        let pick = rng::open_unit(&mut flags) < config.p;
        // both noise terms are drawn so the noise stream does not depend on the flags
        let e1 = config.tau1 * rng::standard_normal(&mut noise);
        let e2 = config.tau2 * rng::standard_normal(&mut noise);
        let (a, b) = MixtureConfig::branch_means(s);
        z[i] = if pick { a + e1 } else { b + e2 };
        first_branch.push(pick);
    }
    Ok(MixtureSample { dataset: SpatialDataset::from_locations(locations, z)?, first_branch })
}

/// Thresholded cosine design: `z = Y 1{Y > 0} + eps` with `Y(s) = 10 cos(20 s)`
/// on `n` equally spaced sites in `[0, 1]` and standard normal noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineConfig {
    pub n: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for CosineConfig {
    fn default() -> Self {
        CosineConfig { n: 100, noise_sd: 1.0, seed: 0 }
    }
}

pub fn cosine_signal(s: f64) -> f64 {
    (10.0 * (20.0 * s).cos()).max(0.0)
}

pub fn thresholded_cosine_1d(config: &CosineConfig) -> Result<SpatialDataset> {
    if config.n < 2 {
        return Err(Error::invalid(format!("need n >= 2, got {}", config.n)));
    }
    let locations = linspace_column(0.0, 1.0, config.n);
    let mut noise = rng::stream(config.seed, Stream::Noise);
    let z: Array1<f64> = locations.column(0).iter().map(|&s| cosine_signal(s) + config.noise_sd * rng::standard_normal(&mut noise)).collect();
    SpatialDataset::from_locations(locations, z)
}
