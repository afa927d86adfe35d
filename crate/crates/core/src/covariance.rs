//! Parametric covariance functions, Gram factorization and maximum
//! likelihood estimation.
//!
//! Two families are provided, both isotropic in Euclidean distance `h`:
//!
//! * exponential: `sigma2 * exp(-h / rho)`
//! * Matérn with smoothness 3/2: `sigma2 * (1 + sqrt(3) h / rho) * exp(-sqrt(3) h / rho)`
//!
//! The nugget `tau2` only ever enters on the diagonal of a Gram matrix.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovFamily {
    Exponential,
    Matern15,
}

impl std::str::FromStr for CovFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(CovFamily::Exponential),
            "matern15" => Ok(CovFamily::Matern15),
            other => Err(Error::invalid(format!("unknown covariance family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub family: CovFamily,
    pub sigma2: f64,
    pub rho: f64,
    pub tau2: f64,
}

impl CovarianceModel {
    pub fn new(family: CovFamily, sigma2: f64, rho: f64, tau2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !(rho > 0.0) || !(tau2 >= 0.0) || !sigma2.is_finite() || !rho.is_finite() || !tau2.is_finite() {
            return Err(Error::invalid(format!(
                "covariance parameters need sigma2 > 0, rho > 0, tau2 >= 0; got {sigma2}, {rho}, {tau2}"
            )));
        }
        Ok(CovarianceModel { family, sigma2, rho, tau2 })
    }

    /// Covariance at distance `h`, excluding the nugget.
    pub fn value(&self, h: f64) -> Result<f64> {
        if h < 0.0 || h.is_nan() {
            return Err(Error::invalid(format!("distance must be nonnegative, got {h}")));
        }
        Ok(self.eval(h))
    }

    #[inline]
    pub(crate) fn eval(&self, h: f64) -> f64 {
        let r = h / self.rho;
        match self.family {
            CovFamily::Exponential => self.sigma2 * (-r).exp(),
            CovFamily::Matern15 => {
                let a = 3f64.sqrt() * r;
                self.sigma2 * (1.0 + a) * (-a).exp()
            }
        }
    }

    pub fn without_nugget(&self) -> Self {
        CovarianceModel { tau2: 0.0, ..*self }
    }
}

#[inline]
fn distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nugget-free cross-covariance between two location sets.
pub fn cross_covariance(a: &Array2<f64>, b: &Array2<f64>, model: &CovarianceModel) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            out[[i, j]] = model.eval(distance(ra, rb));
        }
    }
    out
}

/// Gram matrix `C(||s_i - s_j||) + tau2 * 1{i = j}`.
pub fn covariance_matrix(locations: &Array2<f64>, model: &CovarianceModel) -> Array2<f64> {
    let n = locations.nrows();
    let mut sigma = Array2::zeros((n, n));
    for i in 0..n {
        let ri = locations.row(i);
        for j in 0..i {
            let v = model.eval(distance(ri, locations.row(j)));
            sigma[[i, j]] = v;
            sigma[[j, i]] = v;
        }
        sigma[[i, i]] = model.sigma2 + model.tau2;
    }
    sigma
}

/// Symmetric matrix and its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GramFactor {
    pub sigma: Array2<f64>,
    pub lower: Array2<f64>,
    /// Diagonal shift that made the factorization succeed (0 when none).
    pub jitter: f64,
}

impl GramFactor {
    /// Factor with adaptive jitter: try the matrix as is, then add
    /// `1e-10 * mean(diag)` and escalate by 10x up to `1e-4 * mean(diag)`.
    pub fn new(sigma: Array2<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 || sigma.ncols() != n {
            return Err(Error::invalid("Gram matrix must be square and nonempty"));
        }
        let mean_diag = sigma.diag().sum() / n as f64;
        let mut jitter = 0.0;
        let mut step = 1e-10 * mean_diag;
        loop {
            let attempt = if jitter > 0.0 {
                let mut shifted = sigma.clone();
                shifted.diag_mut().mapv_inplace(|v| v + jitter);
                linalg::cholesky(&shifted)
            } else {
                linalg::cholesky(&sigma)
            };
            match attempt {
                Ok(lower) => return Ok(GramFactor { sigma, lower, jitter }),
                Err(_) if step <= 1e-4 * mean_diag * (1.0 + 1e-9) => {
                    jitter = step;
                    step *= 10.0;
                }
                Err(_) => return Err(Error::NotPositiveDefinite { jitter }),
            }
        }
    }

    pub fn len(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `log det(Sigma + jitter I)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `L^{-1} B`.
    pub fn whiten(&self, b: &Array2<f64>) -> Array2<f64> {
        let mut x = b.clone();
        linalg::solve_lower_in_place(&self.lower.view(), &mut x);
        x
    }

    pub fn whiten_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        linalg::solve_lower_vec(&self.lower.view(), b)
    }

    /// `Sigma^{-1} B` by two triangular solves.
    pub fn solve(&self, b: &Array2<f64>) -> Array2<f64> {
        linalg::cholesky_solve(&self.lower.view(), b)
    }

    pub fn solve_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let w = linalg::solve_lower_vec(&self.lower.view(), b);
        linalg::solve_upper_t_vec(&self.lower.view(), &w)
    }
}

/// Assemble and factor the Gram matrix of `locations` under `model`.
pub fn gram(locations: &Array2<f64>, model: &CovarianceModel) -> Result<GramFactor> {
    if locations.nrows() == 0 {
        return Err(Error::invalid("gram needs at least one location"));
    }
    GramFactor::new(covariance_matrix(locations, model))
}

/// Mean structure for the likelihood and for universal Kriging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanStructure {
    Constant,
    Linear,
}

/// Regression design: intercept, optionally followed by the covariates.
pub fn design_matrix(covariates: &Array2<f64>, mean: MeanStructure) -> Array2<f64> {
    let n = covariates.nrows();
    match mean {
        MeanStructure::Constant => Array2::ones((n, 1)),
        MeanStructure::Linear => {
            ndarray::concatenate(Axis(1), &[Array2::ones((n, 1)).view(), covariates.view()]).expect("same rows")
        }
    }
}

/// Generalized least squares via whitened normal equations:
/// returns `(beta, whitened residual)`.
pub(crate) fn gls(factor: &GramFactor, x: &Array2<f64>, z: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let xt = factor.whiten(x);
    let zt = factor.whiten_vec(z);
    let xtx = xt.t().dot(&xt);
    let lx = linalg::cholesky(&xtx).map_err(|_| Error::RankDeficient("regression design X".into()))?;
    let rhs = xt.t().dot(&zt).insert_axis(Axis(1));
    let beta = linalg::cholesky_solve(&lx.view(), &rhs).remove_axis(Axis(1));
    let resid = &zt - &xt.dot(&beta);
    Ok((beta, resid))
}

/// Gaussian log-likelihood with the mean coefficients profiled out by GLS.
pub fn profile_log_likelihood(
    locations: &Array2<f64>,
    z: &Array1<f64>,
    x: &Array2<f64>,
    model: &CovarianceModel,
) -> Result<(f64, Array1<f64>)> {
    let factor = gram(locations, model)?;
    let (beta, resid) = gls(&factor, x, z)?;
    let n = z.len() as f64;
    let ll = -0.5 * (resid.dot(&resid) + factor.log_det() + n * (2.0 * std::f64::consts::PI).ln());
    Ok((ll, beta))
}

/// Result of [`fit_mle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub model: CovarianceModel,
    pub beta: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Serialized form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCovariance {
    pub family: CovFamily,
    pub sigma2: f64,
    pub rho: f64,
    pub tau2: f64,
    pub beta: Vec<f64>,
}

impl MleFit {
    pub fn document(&self) -> FittedCovariance {
        FittedCovariance {
            family: self.model.family,
            sigma2: self.model.sigma2,
            rho: self.model.rho,
            tau2: self.model.tau2,
            beta: self.beta.clone(),
        }
    }
}

/// Settings for the simplex search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Convergence when the spread of log-likelihood values across the
    /// simplex vertices falls below this.
    pub tolerance: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions { max_iterations: 500, tolerance: 1e-8 }
    }
}

struct Bounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Bounds {
    fn project(&self, p: &mut [f64; 3]) {
        for k in 0..3 {
            p[k] = p[k].clamp(self.lo[k], self.hi[k]);
        }
    }
}

fn sample_variance(z: &Array1<f64>) -> f64 {
    let n = z.len() as f64;
    let m = z.sum() / n;
    z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn bbox_diameter(locations: &Array2<f64>) -> f64 {
    locations
        .columns()
        .into_iter()
        .map(|c| {
            let (a, b) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            (b - a).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Maximum likelihood estimate of `(sigma2, rho, tau2)` with profiled mean
/// coefficients, by Nelder-Mead on the log parameters.
///
/// Starting point: sample variance, a tenth of the bounding-box diameter and
/// 5% of the sample variance. The search is restarted once from its first
/// optimum; both runs share the iteration cap.
pub fn fit_mle(
    locations: &Array2<f64>,
    z: &Array1<f64>,
    covariates: &Array2<f64>,
    family: CovFamily,
    mean: MeanStructure,
    options: MleOptions,
) -> Result<MleFit> {
    let n = z.len();
    if n < 5 {
        return Err(Error::invalid(format!("maximum likelihood needs at least 5 observations, got {n}")));
    }
    if locations.nrows() != n || covariates.nrows() != n {
        return Err(Error::ShapeMismatch { what: "likelihood rows", expected: n, found: locations.nrows() });
    }
    let x = design_matrix(covariates, mean);
    let var = sample_variance(z).max(1e-12);
    let diam = bbox_diameter(locations).max(1e-12);
    let bounds = Bounds {
        lo: [(var * 1e-6).ln(), (diam * 1e-4).ln(), (var * 1e-10).ln()],
        hi: [(var * 1e3).ln(), (diam * 10.0).ln(), (var * 10.0).ln()],
    };
    let objective = |p: &[f64; 3]| -> f64 {
        let model = CovarianceModel { family, sigma2: p[0].exp(), rho: p[1].exp(), tau2: p[2].exp() };
        match profile_log_likelihood(locations, z, &x, &model) {
            Ok((ll, _)) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };
    let start = [var.ln(), (0.1 * diam).ln(), (0.05 * var).ln()];
    let mut budget = options.max_iterations;
    let first = nelder_mead(&objective, start, 1.0, &bounds, options.tolerance, &mut budget);
    let (best, converged) = match first {
        (p, _, true) => {
            let (q, fq, ok) = nelder_mead(&objective, p, 0.25, &bounds, options.tolerance, &mut budget);
            if objective(&p) <= fq { (p, ok) } else { (q, ok) }
        }
        (p, _, false) => (p, false),
    };
    let model = CovarianceModel { family, sigma2: best[0].exp(), rho: best[1].exp(), tau2: best[2].exp() };
    let (ll, beta) = profile_log_likelihood(locations, z, &x, &model)?;
    let fit = MleFit { model, beta: beta.to_vec(), log_likelihood: ll, iterations: options.max_iterations - budget };
    if converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged { iterations: options.max_iterations, best: Box::new(fit) })
    }
}

/// Minimize `f` from `start`; returns `(best point, best value, converged)`.
fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(
    f: &F,
    start: [f64; 3],
    step: f64,
    bounds: &Bounds,
    tol: f64,
    budget: &mut usize,
) -> ([f64; 3], f64, bool) {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    let mut p0 = start;
    bounds.project(&mut p0);
    simplex.push((p0, f(&p0)));
    for k in 0..3 {
        let mut p = p0;
        p[k] += if p[k] + step <= bounds.hi[k] { step } else { -step };
        bounds.project(&mut p);
        simplex.push((p, f(&p)));
    }
    let order = |s: &mut Vec<([f64; 3], f64)>| s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    loop {
        order(&mut simplex);
        let spread = simplex[3].1 - simplex[0].1;
        if spread.is_finite() && spread <= tol {
            return (simplex[0].0, simplex[0].1, true);
        }
        if *budget == 0 {
            return (simplex[0].0, simplex[0].1, false);
        }
        *budget -= 1;
        let mut centroid = [0.0; 3];
        for v in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += v.0[k] / 3.0;
            }
        }
        let along = |t: f64| {
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = centroid[k] + t * (simplex[3].0[k] - centroid[k]);
            }
            bounds.project(&mut p);
            p
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[3].1 {
                let x = along(-0.5);
                (x, f(&x))
            } else {
                let x = along(0.5);
                (x, f(&x))
            };
            if fc < simplex[3].1.min(fr) {
                simplex[3] = (xc, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    for k in 0..3 {
                        v.0[k] = best[k] + 0.5 * (v.0[k] - best[k]);
                    }
                    v.1 = f(&v.0);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_lag_gives_variance() {
        for family in [CovFamily::Exponential, CovFamily::Matern15] {
            let m = CovarianceModel::new(family, 2.5, 0.3, 0.1).unwrap();
            assert_eq!(m.value(0.0).unwrap(), 2.5);
        }
    }

    #[test]
    fn closed_form_values() {
        let e = CovarianceModel::new(CovFamily::Exponential, 1.0, 0.1, 0.0).unwrap();
        assert!((e.value(0.1).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let m = CovarianceModel::new(CovFamily::Matern15, 1.0, 0.2, 0.0).unwrap();
        let want = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert!((m.value(0.2).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.483672).abs() < 1e-3);
        assert!(e.value(-1.0).is_err());
        assert!(CovarianceModel::new(CovFamily::Exponential, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn monotone_and_vanishing() {
        for family in [CovFamily::Exponential, CovFamily::Matern15] {
            let m = CovarianceModel::new(family, 1.0, 0.1, 0.0).unwrap();
            let vals: Vec<f64> = (0..200).map(|k| m.value(k as f64 * 0.01).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0]));
            assert!(m.value(100.0).unwrap() < 1e-100);
        }
    }

    #[test]
    fn gram_small_cases() {
        let m = CovarianceModel::new(CovFamily::Exponential, 1.0, 0.1, 0.0).unwrap();
        let g1 = gram(&array![[0.3]], &CovarianceModel { tau2: 0.44, ..m }).unwrap();
        assert!((g1.sigma[[0, 0]] - 1.44).abs() < 1e-15);
        assert!((g1.lower[[0, 0]] - 1.2).abs() < 1e-15);
        let g = gram(&array![[0.0], [0.1]], &m).unwrap();
        let c = (-1.0f64).exp();
        assert!((g.sigma[[0, 1]] - c).abs() < 1e-15);
        assert!((g.lower[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((g.lower[[1, 0]] - c).abs() < 1e-15);
        assert!((g.lower[[1, 1]] - (1.0 - c * c).sqrt()).abs() < 1e-15);
        assert!((g.lower[[1, 1]] - 0.929896).abs() < 1e-4);
        assert_eq!(g.jitter, 0.0);
    }

    #[test]
    fn duplicate_locations_need_jitter() {
        let m = CovarianceModel::new(CovFamily::Exponential, 1.0, 0.1, 0.0).unwrap();
        let g = gram(&array![[0.2], [0.2], [0.5]], &m).unwrap();
        assert!(g.jitter > 0.0);
        let mut target = g.sigma.clone();
        target.diag_mut().mapv_inplace(|v| v + g.jitter);
        let err = (&g.lower.dot(&g.lower.t()) - &target).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err < 1e-8);
    }

    #[test]
    fn indefinite_matrix_fails_after_escalation() {
        let bad = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(GramFactor::new(bad), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn fitted_document_has_expected_keys() {
        let fit = MleFit {
            model: CovarianceModel::new(CovFamily::Matern15, 1.0, 0.2, 0.01).unwrap(),
            beta: vec![0.5],
            log_likelihood: -1.0,
            iterations: 3,
        };
        let v: serde_json::Value = serde_json::to_value(fit.document()).unwrap();
        for key in ["family", "sigma2", "rho", "tau2", "beta"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["family"], "matern15");
    }
}
