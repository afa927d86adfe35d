//! Universal Kriging and fixed rank Kriging.
//!
//! With `Sigma` the Gram matrix of the training sites (nugget included),
//! `X` the regression design and `c(s0)` the nugget-free covariances between
//! a target and the training sites, the universal Kriging predictor is
//!
//! ```text
//! beta  = (X' Sigma^-1 X)^-1 X' Sigma^-1 z
//! Y(s0) = x(s0)' beta + c(s0)' Sigma^-1 (z - X beta)
//! ```
//!
//! and its variance is the GLS-corrected form
//!
//! ```text
//! var(s0) = C(0) - c' Sigma^-1 c + u' (X' Sigma^-1 X)^-1 u,   u = x(s0) - X' Sigma^-1 c
//! ```
//!
//! This is the variance of the latent signal at `s0`; the variance of a new
//! noisy observation adds `tau2`. Everything is computed through Cholesky
//! triangular solves, never through explicit inverses.

use ndarray::{s, Array1, Array2, Axis};

use crate::covariance::{self, covariance_matrix, cross_covariance, CovarianceModel, GramFactor};
use crate::error::{Error, Result};
use crate::linalg::{self, Lu};
use crate::spatial::SpatialDataset;

/// Kriging predictions at a set of targets.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingPrediction {
    pub mean: Array1<f64>,
    /// Signal (nugget-free) prediction variance, clipped at zero.
    pub variance: Array1<f64>,
    pub beta: Array1<f64>,
}

impl KrigingPrediction {
    /// Predictive standard deviation for a new observation: `sqrt(variance + tau2)`.
    pub fn observation_sd(&self, tau2: f64) -> Array1<f64> {
        self.variance.mapv(|v| (v + tau2).sqrt())
    }
}

/// Regression design for Kriging: the covariates themselves when one of
/// them is already constant one, otherwise an intercept followed by them.
pub fn regression_design(covariates: &Array2<f64>) -> Array2<f64> {
    let has_intercept = covariates.columns().into_iter().any(|c| c.iter().all(|&v| v == 1.0));
    if has_intercept && covariates.ncols() > 0 {
        covariates.clone()
    } else {
        covariance::design_matrix(covariates, covariance::MeanStructure::Linear)
    }
}

/// Universal Kriging predictor with the training factorization cached.
#[derive(Debug, Clone)]
pub struct UniversalKriging {
    model: CovarianceModel,
    locations: Array2<f64>,
    intercept_added: bool,
    factor: GramFactor,
    /// `L^-1 X`
    x_white: Array2<f64>,
    /// Cholesky factor of `X' Sigma^-1 X`
    xtx_lower: Array2<f64>,
    beta: Array1<f64>,
    /// `Sigma^-1 (z - X beta)`
    alpha: Array1<f64>,
}

impl UniversalKriging {
    pub fn fit(train: &SpatialDataset, model: &CovarianceModel) -> Result<Self> {
        let x = regression_design(train.covariates());
        let intercept_added = x.ncols() != train.n_covariates();
        let factor = covariance::gram(train.locations(), model)?;
        let x_white = factor.whiten(&x);
        let xtx = x_white.t().dot(&x_white);
        let xtx_lower = linalg::cholesky(&xtx).map_err(|_| Error::RankDeficient("regression design X".into()))?;
        let z = train.responses();
        let z_white = factor.whiten_vec(z);
        let rhs = x_white.t().dot(&z_white).insert_axis(Axis(1));
        let beta = linalg::cholesky_solve(&xtx_lower.view(), &rhs).remove_axis(Axis(1));
        let alpha = factor.solve_vec(&(z - &x.dot(&beta)));
        Ok(UniversalKriging {
            model: *model,
            locations: train.locations().clone(),
            intercept_added,
            factor,
            x_white,
            xtx_lower,
            beta,
            alpha,
        })
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn beta(&self) -> &Array1<f64> {
        &self.beta
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// Predict at `locations` with covariates laid out like the training ones.
    pub fn predict(&self, locations: &Array2<f64>, covariates: &Array2<f64>) -> Result<KrigingPrediction> {
        let m = locations.nrows();
        if locations.ncols() != self.locations.ncols() {
            return Err(Error::ShapeMismatch { what: "target dimension", expected: self.locations.ncols(), found: locations.ncols() });
        }
        if covariates.nrows() != m {
            return Err(Error::ShapeMismatch { what: "target covariate rows", expected: m, found: covariates.nrows() });
        }
        let x0 = if self.intercept_added {
            covariance::design_matrix(covariates, covariance::MeanStructure::Linear)
        } else {
            covariates.clone()
        };
        if x0.ncols() != self.beta.len() {
            return Err(Error::ShapeMismatch { what: "target covariates", expected: self.beta.len(), found: x0.ncols() });
        }
        let mut mean = Array1::zeros(m);
        let mut variance = Array1::zeros(m);
        const CHUNK: usize = 512;
        let tol = 1e-10 * self.model.sigma2.max(1.0);
        for start in (0..m).step_by(CHUNK) {
            let end = (start + CHUNK).min(m);
            let c = cross_covariance(&self.locations, &locations.slice(s![start..end, ..]).to_owned(), &self.model);
            let w = self.factor.whiten(&c);
            let x0c = x0.slice(s![start..end, ..]);
            let u = &x0c.t() - &self.x_white.t().dot(&w);
            let v = linalg::cholesky_solve(&self.xtx_lower.view(), &u);
            let mu = x0c.dot(&self.beta) + c.t().dot(&self.alpha);
            mean.slice_mut(s![start..end]).assign(&mu);
            for j in 0..end - start {
                let wj = w.column(j);
                let var = self.model.sigma2 - wj.dot(&wj) + u.column(j).dot(&v.column(j));
                if var < -tol {
                    return Err(Error::NegativeVariance { index: start + j, value: var });
                }
                variance[start + j] = var.max(0.0);
            }
        }
        Ok(KrigingPrediction { mean, variance, beta: self.beta.clone() })
    }
}

/// One-shot universal Kriging.
pub fn universal_kriging(
    train: &SpatialDataset,
    locations: &Array2<f64>,
    covariates: &Array2<f64>,
    model: &CovarianceModel,
) -> Result<KrigingPrediction> {
    UniversalKriging::fit(train, model)?.predict(locations, covariates)
}

/// Fixed rank Kriging mean with `Sigma = Phi Sigma_K Phi' + diag(noise)`.
///
/// `Sigma^-1` is applied through the Woodbury identity in the form
/// `V^-1 - V^-1 Phi Sigma_K (I + Phi' V^-1 Phi Sigma_K)^-1 Phi' V^-1`, which
/// needs only a `K x K` solve and stays valid when `Sigma_K` is singular.
pub fn frk_predict(
    train: &SpatialDataset,
    phi_train: &Array2<f64>,
    sigma_k: &Array2<f64>,
    noise: &Array1<f64>,
    phi_test: &Array2<f64>,
    test_covariates: &Array2<f64>,
) -> Result<Array1<f64>> {
    let n = train.len();
    let k = sigma_k.nrows();
    if phi_train.nrows() != n {
        return Err(Error::ShapeMismatch { what: "basis rows", expected: n, found: phi_train.nrows() });
    }
    if phi_train.ncols() != k || sigma_k.ncols() != k || phi_test.ncols() != k {
        return Err(Error::ShapeMismatch { what: "basis width", expected: k, found: phi_train.ncols() });
    }
    if noise.len() != n {
        return Err(Error::ShapeMismatch { what: "noise variances", expected: n, found: noise.len() });
    }
    if noise.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("noise variances must be positive"));
    }
    let x = regression_design(train.covariates());
    let intercept_added = x.ncols() != train.n_covariates();
    let x0 = if intercept_added {
        covariance::design_matrix(test_covariates, covariance::MeanStructure::Linear)
    } else {
        test_covariates.clone()
    };
    let inv_v = noise.mapv(|v| 1.0 / v);
    let scale_rows = |b: &Array2<f64>| {
        let mut out = b.clone();
        for (mut row, &w) in out.rows_mut().into_iter().zip(inv_v.iter()) {
            row *= w;
        }
        out
    };
    let vphi = scale_rows(phi_train);
    let mut inner = phi_train.t().dot(&vphi).dot(sigma_k);
    inner.diag_mut().mapv_inplace(|v| v + 1.0);
    let lu = Lu::new(&inner).ok_or_else(|| Error::Singular("I + Phi' V^-1 Phi Sigma_K".into()))?;
    let apply_inverse = |b: &Array2<f64>| -> Array2<f64> {
        let vb = scale_rows(b);
        let y = lu.solve(&phi_train.t().dot(&vb));
        vb - vphi.dot(&sigma_k.dot(&y))
    };
    let six = apply_inverse(&x);
    let xtx = x.t().dot(&six);
    let xtx_lower = linalg::cholesky(&xtx).map_err(|_| Error::RankDeficient("regression design X".into()))?;
    let z = train.responses().clone().insert_axis(Axis(1));
    let beta = linalg::cholesky_solve(&xtx_lower.view(), &six.t().dot(&z));
    let r = apply_inverse(&(&z - &x.dot(&beta)));
    let pred = x0.dot(&beta) + phi_test.dot(&sigma_k.dot(&phi_train.t().dot(&r)));
    Ok(pred.remove_axis(Axis(1)))
}

/// Random-effect covariance `Sigma_K = R Sigma_nu R'` with `R = Phi' (Phi Phi')^-1`
/// the right inverse of `Phi`, so that `Phi Sigma_K Phi' = Sigma_nu`, the
/// nugget-free Gram matrix of `locations`.
pub fn square_basis_random_effect_cov(locations: &Array2<f64>, phi: &Array2<f64>, model: &CovarianceModel) -> Result<Array2<f64>> {
    let n = locations.nrows();
    if phi.nrows() != n {
        return Err(Error::ShapeMismatch { what: "basis rows", expected: n, found: phi.nrows() });
    }
    if phi.ncols() < n {
        return Err(Error::RankDeficient(format!("basis has {} columns for {n} locations", phi.ncols())));
    }
    let gram_phi = phi.dot(&phi.t());
    let lower = linalg::cholesky(&gram_phi).map_err(|_| Error::RankDeficient("Phi Phi'".into()))?;
    let min_pivot = lower.diag().iter().cloned().fold(f64::INFINITY, f64::min);
    let max_pivot = lower.diag().iter().cloned().fold(0.0, f64::max);
    if min_pivot <= 1e-10 * max_pivot {
        return Err(Error::RankDeficient("Phi Phi'".into()));
    }
    let right_t = linalg::cholesky_solve(&lower.view(), phi);
    let sigma_nu = covariance_matrix(locations, &model.without_nugget());
    let sk = right_t.t().dot(&sigma_nu).dot(&right_t);
    Ok((&sk + &sk.t()) * 0.5)
}

/// Random-effect covariance for a basis with fewer columns than sites:
/// `Sigma_K = P Sigma_nu P'` with `P = (Phi' Phi + ridge I)^-1 Phi'`, the
/// Frobenius least-squares fit of `Phi Sigma_K Phi'` to `Sigma_nu`.
pub fn projected_random_effect_cov(locations: &Array2<f64>, phi: &Array2<f64>, model: &CovarianceModel, ridge: f64) -> Result<Array2<f64>> {
    let n = locations.nrows();
    if phi.nrows() != n {
        return Err(Error::ShapeMismatch { what: "basis rows", expected: n, found: phi.nrows() });
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge must be nonnegative, got {ridge}")));
    }
    let mut gram = phi.t().dot(phi);
    gram.diag_mut().mapv_inplace(|v| v + ridge);
    let lower = linalg::cholesky(&gram).map_err(|_| Error::RankDeficient("Phi' Phi".into()))?;
    let p_t = linalg::cholesky_solve(&lower.view(), &phi.t().to_owned()).reversed_axes();
    let sigma_nu = covariance_matrix(locations, &model.without_nugget());
    let sk = p_t.t().dot(&sigma_nu).dot(&p_t);
    Ok((&sk + &sk.t()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovFamily;
    use ndarray::array;

    fn model(tau2: f64) -> CovarianceModel {
        CovarianceModel::new(CovFamily::Exponential, 1.0, 0.1, tau2).unwrap()
    }

    #[test]
    fn interpolates_without_nugget() {
        let locs = array![[0.0], [0.3], [0.55], [0.9]];
        let train = SpatialDataset::from_locations(locs.clone(), array![1.0, -0.5, 0.2, 2.0]).unwrap();
        let p = universal_kriging(&train, &locs, &Array2::zeros((4, 0)), &model(0.0)).unwrap();
        for i in 0..4 {
            assert!((p.mean[i] - train.responses()[i]).abs() < 1e-8);
            assert!(p.variance[i].abs() < 1e-8);
        }
    }

    #[test]
    fn single_site_closed_form_with_known_mean() {
        // with the mean fixed by an intercept covariate and z centred, the
        // GLS estimate is z itself; compare the simple-Kriging weight instead
        let m = model(0.25);
        let train = SpatialDataset::from_locations(array![[0.0]], array![2.0]).unwrap();
        let uk = UniversalKriging::fit(&train, &m).unwrap();
        assert!((uk.beta()[0] - 2.0).abs() < 1e-12);
        let c = m.value(0.05).unwrap();
        let p = uk.predict(&array![[0.05]], &Array2::zeros((1, 0))).unwrap();
        let mu = uk.beta()[0];
        assert!((p.mean[0] - (mu + c / 1.25 * (2.0 - mu))).abs() < 1e-12);
    }

    #[test]
    fn constant_field_is_reproduced() {
        let locs = array![[0.1], [0.2], [0.4], [0.8]];
        let train = SpatialDataset::from_locations(locs, Array1::from_elem(4, 3.5)).unwrap();
        let p = universal_kriging(&train, &array![[0.0], [0.33], [1.7]], &Array2::zeros((3, 0)), &model(0.05)).unwrap();
        assert!(p.mean.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn zero_random_effect_gives_gls_mean() {
        let locs = array![[0.0], [0.5], [1.0]];
        let train = SpatialDataset::new(locs, array![1.0, 2.0, 4.0], array![[0.0], [1.0], [2.0]], vec!["x".into()]).unwrap();
        let phi = array![[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]];
        let p = frk_predict(&train, &phi, &Array2::zeros((2, 2)), &Array1::ones(3), &array![[0.3, 0.3]], &array![[3.0]]).unwrap();
        // ordinary least squares line through the three points: 5/6 + 1.5 x
        assert!((p[0] - (5.0 / 6.0 + 1.5 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn square_basis_uses_plain_inverse() {
        let locs = array![[0.0], [0.2], [0.7]];
        let phi = array![[2.0, 0.1, 0.0], [0.3, 1.0, 0.2], [0.0, 0.4, 1.5]];
        let sk = square_basis_random_effect_cov(&locs, &phi, &model(0.3)).unwrap();
        let back = phi.dot(&sk).dot(&phi.t());
        let nu = covariance_matrix(&locs, &model(0.0));
        assert!((&back - &nu).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rank_deficient_basis_is_rejected() {
        let locs = array![[0.0], [0.2]];
        let phi = array![[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]];
        assert!(matches!(square_basis_random_effect_cov(&locs, &phi, &model(0.0)), Err(Error::RankDeficient(_))));
    }
}
