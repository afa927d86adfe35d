//! Covariance kernels induced by infinitely wide networks over the
//! embedded features.
//!
//! The base case is `C0(a, b) = sigma_b2 + sigma_w2 * <x_a, x_b> / (P + K)`.
//! Each further layer maps the previous kernel through the activation:
//!
//! * ReLU (arc-cosine kernel):
//!   `sigma_b2 + sigma_w2 / (2 pi) * sqrt(c_aa c_bb) * (sin t + (pi - t) cos t)`,
//!   `t = arccos(c_ab / sqrt(c_aa c_bb))`
//! * identity: `sigma_b2 + sigma_w2 * c_ab`
//!
//! The width normalization of the inner layers is absorbed into `sigma_w2`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NngpConfig {
    pub sigma_b2: f64,
    pub sigma_w2: f64,
    /// Number of kernel maps: the base case counts as the first.
    pub depth: usize,
    pub activation: Activation,
}

impl NngpConfig {
    pub fn new(sigma_b2: f64, sigma_w2: f64, depth: usize, activation: Activation) -> Result<Self> {
        if !(sigma_b2 >= 0.0) || !(sigma_w2 > 0.0) || !sigma_b2.is_finite() || !sigma_w2.is_finite() {
            return Err(Error::invalid(format!("need sigma_b2 >= 0 and sigma_w2 > 0, got {sigma_b2}, {sigma_w2}")));
        }
        if depth == 0 {
            return Err(Error::invalid("depth must be >= 1"));
        }
        Ok(NngpConfig { sigma_b2, sigma_w2, depth, activation })
    }
}

/// Base-case kernel between two feature vectors.
pub fn c0(a: &[f64], b: &[f64], cfg: &NngpConfig) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch { what: "feature vector length", expected: a.len(), found: b.len() });
    }
    Ok(cfg.sigma_b2 + cfg.sigma_w2 * linalg::dot(a, b) / a.len() as f64)
}

/// One ReLU layer of the recursion.
pub fn arc_cosine_step(c_ab: f64, c_aa: f64, c_bb: f64, cfg: &NngpConfig) -> Result<f64> {
    if !(c_aa > 0.0 && c_bb > 0.0) {
        return Err(Error::invalid(format!("arc-cosine step needs positive variances, got {c_aa}, {c_bb}")));
    }
    Ok(arc_cosine_unchecked(c_ab, c_aa, c_bb, cfg))
}

fn arc_cosine_unchecked(c_ab: f64, c_aa: f64, c_bb: f64, cfg: &NngpConfig) -> f64 {
    let norm = (c_aa * c_bb).sqrt();
    let cos_t = (c_ab / norm).clamp(-1.0, 1.0);
    let t = cos_t.acos();
    cfg.sigma_b2 + cfg.sigma_w2 / (2.0 * PI) * norm * (t.sin() + (PI - t) * cos_t)
}

/// One identity-activation layer of the recursion.
pub fn identity_step(c_ab: f64, cfg: &NngpConfig) -> f64 {
    cfg.sigma_b2 + cfg.sigma_w2 * c_ab
}

/// Induced Gram matrix of the rows of `features` (covariates and basis
/// values per location).
pub fn induced_cov(features: &Array2<f64>, cfg: &NngpConfig) -> Result<Array2<f64>> {
    let n = features.nrows();
    let width = features.ncols();
    if n == 0 || width == 0 {
        return Err(Error::invalid("induced covariance needs a nonempty feature matrix"));
    }
    let mut k = features.dot(&features.t());
    k.mapv_inplace(|v| cfg.sigma_b2 + cfg.sigma_w2 * v / width as f64);
    symmetrize(&mut k);
    for _ in 1..cfg.depth {
        k = match cfg.activation {
            Activation::Identity => k.mapv(|v| identity_step(v, cfg)),
            Activation::Relu => {
                let diag: Array1<f64> = k.diag().to_owned();
                if let Some(i) = diag.iter().position(|&v| !(v > 0.0)) {
                    return Err(Error::invalid(format!("kernel variance at row {i} is not positive")));
                }
                let mut next = Array2::zeros((n, n));
                for i in 0..n {
                    for j in 0..=i {
                        let v = arc_cosine_unchecked(k[[i, j]], diag[i], diag[j], cfg);
                        next[[i, j]] = v;
                        next[[j, i]] = v;
                    }
                }
                next
            }
        };
    }
    Ok(k)
}

fn symmetrize(k: &mut Array2<f64>) {
    let n = k.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (k[[i, j]] + k[[j, i]]);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
}

/// Outcome of fitting `C(s, s') ~ v(s) + v(s') - c * |phi(s) - phi(s')|^2`
/// over nearby pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearfieldReport {
    pub v: Vec<f64>,
    pub c: f64,
    /// `|residual| / |kernel values|` over the fitted pairs.
    pub relative_residual: f64,
    pub pairs: usize,
}

impl NearfieldReport {
    pub fn passes(&self) -> bool {
        self.relative_residual < 0.05
    }
}

/// Least-squares fit of the near-field form on a 1-D grid. Pairs closer than
/// two grid steps (including each site with itself) enter the fit.
pub fn nearfield_form_check(locations: &Array2<f64>, features: &Array2<f64>, cfg: &NngpConfig) -> Result<NearfieldReport> {
    let n = locations.nrows();
    if locations.ncols() != 1 {
        return Err(Error::invalid("near-field check expects 1-D locations"));
    }
    if features.nrows() != n {
        return Err(Error::ShapeMismatch { what: "feature rows", expected: n, found: features.nrows() });
    }
    let s: Vec<f64> = locations.column(0).to_vec();
    let mut sorted = s.clone();
    sorted.sort_by(f64::total_cmp);
    let step = sorted.windows(2).map(|w| w[1] - w[0]).filter(|&g| g > 0.0).fold(f64::INFINITY, f64::min);
    if !step.is_finite() {
        return Err(Error::invalid("near-field check needs at least two distinct locations"));
    }
    let kernel = induced_cov(features, cfg)?;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i..n {
            if (s[i] - s[j]).abs() < 2.0 * step * (1.0 - 1e-9) {
                pairs.push((i, j));
            }
        }
    }
    let unknowns = n + 1;
    if pairs.len() <= unknowns {
        return Err(Error::invalid(format!("only {} nearby pairs for {unknowns} unknowns", pairs.len())));
    }
    let dist2 = |i: usize, j: usize| features.row(i).iter().zip(features.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let scale = pairs.iter().map(|&(i, j)| dist2(i, j)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    // design rows: e_i + e_j in the v block, -dist2 / scale in the last column
    let mut ata = Array2::<f64>::zeros((unknowns, unknowns));
    let mut atb = Array1::<f64>::zeros(unknowns);
    let mut rows = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let q = -dist2(i, j) / scale;
        let y = kernel[[i, j]];
        let entries = [(i, 1.0), (j, 1.0), (n, q)];
        for &(a, va) in &entries {
            atb[a] += va * y;
            for &(b, vb) in &entries {
                ata[[a, b]] += va * vb;
            }
        }
        rows.push((i, j, q, y));
    }
    let lower = linalg::cholesky(&ata).map_err(|_| Error::RankDeficient("near-field design".into()))?;
    let theta = linalg::cholesky_solve(&lower.view(), &atb.insert_axis(ndarray::Axis(1))).remove_axis(ndarray::Axis(1));
    let (mut rss, mut tss) = (0.0, 0.0);
    for &(i, j, q, y) in &rows {
        let r = y - theta[i] - theta[j] - theta[n] * q;
        rss += r * r;
        tss += y * y;
    }
    Ok(NearfieldReport {
        v: theta.slice(ndarray::s![..n]).to_vec(),
        c: theta[n] / scale,
        relative_residual: (rss / tss).sqrt(),
        pairs: pairs.len(),
    })
}
