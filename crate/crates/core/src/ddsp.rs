//! Predictive densities from ensembles of histogram classifiers.
//!
//! The response range is cut at `M` random points into `M + 1` bins. A
//! DeepKriging classifier trained with the joint binary cross-entropy loss
//! predicts the bin probabilities at each location, which define a
//! piecewise-constant density. Averaging over `I` random partitions gives the
//! ensemble density, its piecewise-linear cdf and quantiles.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BasisConfig, DeepKrigingModel, FeatureKind, FeatureMap, ModelSpec, NetworkOptions};
use crate::nn::{Loss, Target};
use crate::rng::{self, Stream};
use crate::spatial::SpatialDataset;

/// Row sums of probability vectors must be within this of one.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interquartile range with type-7 quantiles.
pub fn iqr(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::invalid("interquartile range of an empty sample"));
    }
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(sample_quantile(&s, 0.75) - sample_quantile(&s, 0.25))
}

/// Freedman-Diaconis bin count `floor(range * n^(1/3) / (2 IQR))`, at least 1.
pub fn fd_bin_count(z: &[f64]) -> Result<usize> {
    if z.len() < 4 {
        return Err(Error::invalid(format!("bin count needs at least 4 values, got {}", z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("responses must be finite"));
    }
    let q = iqr(z)?;
    if !(q > 0.0) {
        return Err(Error::ZeroIqr);
    }
    let (lo, hi) = min_max(z);
    let m = ((hi - lo) * (z.len() as f64).cbrt() / (2.0 * q)).floor();
    Ok((m as usize).max(1))
}

fn min_max(z: &[f64]) -> (f64, f64) {
    z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

/// Support `[min - 0.05 r, max + 0.05 r]` with `r` the sample range.
pub fn support(z: &[f64]) -> Result<(f64, f64)> {
    if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("support needs finite responses"));
    }
    let (lo, hi) = min_max(z);
    let r = hi - lo;
    if !(r > 0.0) {
        return Err(Error::invalid("support needs a positive response range"));
    }
    Ok((lo - 0.05 * r, hi + 0.05 * r))
}

/// Cut points `c_1 < ... < c_M` strictly inside `(lo, hi)`. Bin `m` is
/// `[c_m, c_{m+1})` with `c_0 = lo`, `c_{M+1} = hi`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    lo: f64,
    hi: f64,
    cuts: Vec<f64>,
}

impl BinPartition {
    pub fn new(lo: f64, hi: f64, cuts: Vec<f64>) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("support [{lo}, {hi}] is not a proper interval")));
        }
        if cuts.is_empty() {
            return Err(Error::invalid("a partition needs at least one cut"));
        }
        if cuts.iter().any(|&c| !(c > lo && c < hi)) {
            return Err(Error::invalid("cuts must lie strictly inside the support"));
        }
        if cuts.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("cuts must be strictly increasing"));
        }
        Ok(BinPartition { lo, hi, cuts })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    /// Number of bins, `M + 1`.
    pub fn bins(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Bin edges `lo, c_1, ..., c_M, hi`.
    pub fn edges(&self) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.cuts.len() + 2);
        e.push(self.lo);
        e.extend_from_slice(&self.cuts);
        e.push(self.hi);
        e
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges().windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn check(&self, v: f64) -> Result<()> {
        if v >= self.lo && v <= self.hi {
            Ok(())
        } else {
            Err(Error::OutOfSupport { value: v, lo: self.lo, hi: self.hi })
        }
    }

    /// Bin of a value inside the support; ties at a cut go to the upper bin.
    pub fn bin_of(&self, v: f64) -> Result<usize> {
        self.check(v)?;
        Ok(self.cuts.partition_point(|&c| c <= v))
    }

    pub fn assign(&self, z: &[f64]) -> Result<Vec<usize>> {
        z.iter().map(|&v| self.bin_of(v)).collect()
    }
}

/// `m` uniform cuts on `(lo, hi)`, sorted; repeatable per seed.
pub fn random_partition(m: usize, lo: f64, hi: f64, seed: u64) -> Result<BinPartition> {
    if m == 0 {
        return Err(Error::invalid("need at least one cut"));
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!("support [{lo}, {hi}] is not a proper interval")));
    }
    let mut r = rng::stream(seed, Stream::Partition);
    loop {
        let mut cuts: Vec<f64> = (0..m).map(|_| lo + rng::open_unit(&mut r) * (hi - lo)).collect();
        cuts.sort_by(f64::total_cmp);
        // a collision after the affine map is astronomically rare; redraw if it happens
        if let Ok(p) = BinPartition::new(lo, hi, cuts) {
            return Ok(p);
        }
    }
}

/// One partition with bin probabilities per location (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub partition: BinPartition,
    pub probabilities: Array2<f64>,
}

/// Ensemble of per-partition histograms over a fixed set of locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    members: Vec<Member>,
}

impl DensityEstimate {
    /// Validates that all members share the support and location count and
    /// that every probability row lies on the simplex.
    pub fn new(members: Vec<Member>) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::invalid("a density needs at least one member"))?;
        let support = first.partition.support();
        let n = first.probabilities.nrows();
        for m in &members {
            if m.partition.support() != support {
                return Err(Error::invalid("ensemble members must share the support"));
            }
            if m.probabilities.nrows() != n {
                return Err(Error::ShapeMismatch { what: "member location count", expected: n, found: m.probabilities.nrows() });
            }
            if m.probabilities.ncols() != m.partition.bins() {
                return Err(Error::ShapeMismatch { what: "bin probability columns", expected: m.partition.bins(), found: m.probabilities.ncols() });
            }
            for (row, p) in m.probabilities.rows().into_iter().enumerate() {
                let s: f64 = p.sum();
                if p.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidProbability { row });
                }
            }
        }
        Ok(DensityEstimate { members })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    pub fn n_locations(&self) -> usize {
        self.members[0].probabilities.nrows()
    }

    pub fn support(&self) -> (f64, f64) {
        self.members[0].partition.support()
    }

    fn check_location(&self, loc: usize) -> Result<()> {
        if loc < self.n_locations() {
            Ok(())
        } else {
            Err(Error::invalid(format!("location {loc} out of range (have {})", self.n_locations())))
        }
    }

    /// Ensemble-averaged step density at `y`.
    pub fn pdf(&self, loc: usize, y: f64) -> Result<f64> {
        self.check_location(loc)?;
        let mut total = 0.0;
        for m in &self.members {
            let b = m.partition.bin_of(y)?;
            let w = m.partition.widths()[b];
            total += m.probabilities[[loc, b]] / w;
        }
        Ok(total / self.members.len() as f64)
    }

    /// Ensemble cdf at `y`: the average of the per-member piecewise-linear cdfs.
    pub fn cdf(&self, loc: usize, y: f64) -> Result<f64> {
        self.check_location(loc)?;
        let mut total = 0.0;
        for m in &self.members {
            total += member_cdf(&m.partition, m.probabilities.row(loc).as_slice().expect("standard layout"), y)?;
        }
        Ok(total / self.members.len() as f64)
    }

    /// Knots (all member edges, merged) and the cdf at each knot. The cdf
    /// is linear between consecutive knots.
    pub fn cdf_table(&self, loc: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_location(loc)?;
        let mut knots: Vec<f64> = self.members.iter().flat_map(|m| m.partition.edges()).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let values = knots.iter().map(|&y| self.cdf(loc, y)).collect::<Result<Vec<_>>>()?;
        Ok((knots, values))
    }

    /// Generalized inverse `inf { y : F(y) >= t }` for `t` in (0, 1).
    pub fn quantile(&self, loc: usize, t: f64) -> Result<f64> {
        Ok(self.quantiles(loc, &[t])?[0])
    }

    pub fn quantiles(&self, loc: usize, levels: &[f64]) -> Result<Vec<f64>> {
        if let Some(&t) = levels.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::invalid(format!("quantile level {t} not in (0, 1)")));
        }
        let (knots, values) = self.cdf_table(loc)?;
        Ok(levels.iter().map(|&t| invert_table(&knots, &values, t)).collect())
    }

    /// Quantiles at `levels` for every location, one row per location.
    pub fn quantile_matrix(&self, levels: &[f64]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.n_locations(), levels.len()));
        for loc in 0..self.n_locations() {
            for (j, q) in self.quantiles(loc, levels)?.into_iter().enumerate() {
                out[[loc, j]] = q;
            }
        }
        Ok(out)
    }

    /// Density integral over the support (exact for step densities).
    pub fn integral(&self, loc: usize) -> Result<f64> {
        self.check_location(loc)?;
        let mut total = 0.0;
        for m in &self.members {
            let widths = m.partition.widths();
            let heights = m.probabilities.row(loc).iter().zip(&widths).map(|(p, w)| p / w).collect::<Vec<_>>();
            total += heights.iter().zip(&widths).map(|(h, w)| h * w).sum::<f64>();
        }
        Ok(total / self.members.len() as f64)
    }
}

fn member_cdf(partition: &BinPartition, probs: &[f64], y: f64) -> Result<f64> {
    let b = partition.bin_of(y)?;
    let edges = partition.edges();
    let below: f64 = probs[..b].iter().sum();
    let frac = (y - edges[b]) / (edges[b + 1] - edges[b]);
    Ok((below + probs[b] * frac).min(1.0))
}

fn invert_table(knots: &[f64], values: &[f64], t: f64) -> f64 {
    let i = values.partition_point(|&f| f < t);
    if i == 0 {
        return knots[0];
    }
    if i == knots.len() {
        return knots[knots.len() - 1];
    }
    let (f0, f1) = (values[i - 1], values[i]);
    knots[i - 1] + (t - f0) / (f1 - f0) * (knots[i] - knots[i - 1])
}

/// Ensemble settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdspConfig {
    /// Number of random partitions `I`.
    pub ensemble: usize,
    /// Cuts per partition; `None` uses the Freedman-Diaconis count.
    pub cuts: Option<usize>,
    pub network: NetworkOptions,
    pub basis: BasisConfig,
    /// Member seeds derive from this.
    pub seed: u64,
}

impl Default for DdspConfig {
    fn default() -> Self {
        DdspConfig { ensemble: 10, cuts: None, network: NetworkOptions::default(), basis: BasisConfig::default(), seed: 0 }
    }
}

/// Trained ensemble: one classifier per partition over shared features.
#[derive(Debug, Clone, PartialEq)]
pub struct DdspModel {
    partitions: Vec<BinPartition>,
    classifiers: Vec<DeepKrigingModel>,
}

impl DdspModel {
    /// Draw `I` partitions of the training support and train a JBCE
    /// classifier for each. Members train in parallel; results do not
    /// depend on the thread count.
    pub fn fit(train: &SpatialDataset, cfg: &DdspConfig) -> Result<Self> {
        if cfg.ensemble == 0 {
            return Err(Error::invalid("ensemble size must be >= 1"));
        }
        let z = train.responses().to_vec();
        let (lo, hi) = support(&z)?;
        let m = match cfg.cuts {
            Some(0) => return Err(Error::invalid("need at least one cut")),
            Some(m) => m,
            None => fd_bin_count(&z)?,
        };
        let features = FeatureMap::fit(FeatureKind::Embedding, train.locations(), train.covariates(), &cfg.basis)?;
        let x = features.transform(train.locations(), train.covariates())?;
        let results: Vec<Result<(BinPartition, DeepKrigingModel)>> = (0..cfg.ensemble)
            .into_par_iter()
            .map(|i| {
                let member_seed = rng::derive_seed(cfg.seed, i as u64);
                let wrap = |e| Error::Member { index: i, source: Box::new(e) };
                let partition = random_partition(m, lo, hi, member_seed).map_err(wrap)?;
                let labels = partition.assign(&z).map_err(wrap)?;
                let spec = ModelSpec {
                    loss: Loss::Jbce,
                    ..ModelSpec::classification(partition.bins(), cfg.network.with_seed(member_seed), cfg.basis.clone())
                };
                let (model, _) = DeepKrigingModel::fit_features(&spec, features.clone(), &x, &Target::Labels(labels)).map_err(wrap)?;
                Ok((partition, model))
            })
            .collect();
        let mut partitions = Vec::with_capacity(cfg.ensemble);
        let mut classifiers = Vec::with_capacity(cfg.ensemble);
        for r in results {
            let (p, c) = r?;
            partitions.push(p);
            classifiers.push(c);
        }
        Ok(DdspModel { partitions, classifiers })
    }

    pub fn partitions(&self) -> &[BinPartition] {
        &self.partitions
    }

    /// Ensemble density at new locations.
    pub fn predict(&self, locations: &Array2<f64>, covariates: &Array2<f64>) -> Result<DensityEstimate> {
        let members = self
            .partitions
            .iter()
            .zip(&self.classifiers)
            .map(|(p, c)| Ok(Member { partition: p.clone(), probabilities: renormalize(c.predict(locations, covariates)?) }))
            .collect::<Result<Vec<_>>>()?;
        DensityEstimate::new(members)
    }
}

/// Guard the softmax rows against rounding drift.
fn renormalize(mut p: Array2<f64>) -> Array2<f64> {
    for mut row in p.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Fit the ensemble on `train` and evaluate its density at `targets`.
pub fn ensemble_density(train: &SpatialDataset, targets: &SpatialDataset, cfg: &DdspConfig) -> Result<DensityEstimate> {
    DdspModel::fit(train, cfg)?.predict(targets.locations(), targets.covariates())
}

/// Levels `0.01, 0.02, ..., 0.99`.
pub fn percentile_levels() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}

/// Total quantile loss, raw and divided by the number of observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aqtl {
    pub raw: f64,
    pub per_observation: f64,
}

/// `sum_t sum_n (z_n - Q_n(t)) (t - 1{z_n <= Q_n(t)})` with `quantiles[n, j]`
/// the predicted quantile of observation `n` at `levels[j]`.
pub fn aqtl(levels: &[f64], quantiles: &Array2<f64>, z: &Array1<f64>) -> Result<Aqtl> {
    if quantiles.nrows() != z.len() {
        return Err(Error::ShapeMismatch { what: "quantile rows", expected: z.len(), found: quantiles.nrows() });
    }
    if quantiles.ncols() != levels.len() {
        return Err(Error::ShapeMismatch { what: "quantile columns", expected: levels.len(), found: quantiles.ncols() });
    }
    if z.is_empty() {
        return Err(Error::invalid("quantile loss needs observations"));
    }
    let mut raw = 0.0;
    for (q, &zn) in quantiles.axis_iter(Axis(0)).zip(z.iter()) {
        for (&qt, &t) in q.iter().zip(levels) {
            let below = if zn <= qt { 1.0 } else { 0.0 };
            raw += (zn - qt) * (t - below);
        }
    }
    Ok(Aqtl { raw, per_observation: raw / z.len() as f64 })
}

/// Quantiles of independent Gaussian predictive distributions.
pub fn gaussian_quantiles(mean: &Array1<f64>, sd: &Array1<f64>, levels: &[f64]) -> Result<Array2<f64>> {
    if mean.len() != sd.len() {
        return Err(Error::ShapeMismatch { what: "predictive sd length", expected: mean.len(), found: sd.len() });
    }
    let z: Vec<f64> = levels.iter().map(|&t| rng::normal_quantile(t)).collect();
    Ok(Array2::from_shape_fn((mean.len(), levels.len()), |(i, j)| mean[i] + sd[i] * z[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fd_examples() {
        // range 10, n = 1000, quartiles 4 and 6 -> floor(10 * 10 / 4) = 25
        let mut z = vec![5.0; 1000];
        z[0] = 0.0;
        z[1..=250].fill(4.0);
        z[749..=998].fill(6.0);
        z[999] = 10.0;
        assert_eq!(iqr(&z).unwrap(), 2.0);
        assert_eq!(fd_bin_count(&z).unwrap(), 25);
        let wide: Vec<f64> = z.iter().map(|v| if *v == 10.0 { 20.0 } else { *v }).collect();
        assert_eq!(fd_bin_count(&wide).unwrap(), 50);
        assert!(matches!(fd_bin_count(&[3.0; 10]), Err(Error::ZeroIqr)));
        assert!(fd_bin_count(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn bin_assignment_conventions() {
        let p = BinPartition::new(0.0, 1.0, vec![0.25, 0.5]).unwrap();
        assert_eq!(p.assign(&[0.0, 0.25, 0.3, 0.5, 1.0]).unwrap(), vec![0, 1, 1, 2, 2]);
        assert!(matches!(p.bin_of(1.5), Err(Error::OutOfSupport { .. })));
        assert!(BinPartition::new(0.0, 1.0, vec![0.5, 0.5]).is_err());
        assert!(BinPartition::new(0.0, 1.0, vec![1.0]).is_err());
    }

    #[test]
    fn random_partition_is_sorted_and_repeatable() {
        let a = random_partition(20, -1.0, 3.0, 5).unwrap();
        assert!(a.cuts().windows(2).all(|w| w[0] < w[1]));
        assert!(a.cuts().iter().all(|&c| c > -1.0 && c < 3.0));
        assert_eq!(a, random_partition(20, -1.0, 3.0, 5).unwrap());
        assert_eq!(random_partition(1, 0.0, 1.0, 2).unwrap().cuts().len(), 1);
    }

    #[test]
    fn symmetric_density_median_is_midpoint() {
        let p = BinPartition::new(-1.0, 1.0, vec![0.0]).unwrap();
        let d = DensityEstimate::new(vec![Member { partition: p, probabilities: array![[0.5, 0.5]] }]).unwrap();
        assert!(d.quantile(0, 0.5).unwrap().abs() < 1e-15);
        assert!(d.cdf(0, -1.0).unwrap().abs() < 1e-12);
        assert!((d.cdf(0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((d.pdf(0, 0.3).unwrap() - 0.5).abs() < 1e-15);
        assert!((d.integral(0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_off_simplex_rows() {
        let p = BinPartition::new(0.0, 1.0, vec![0.5]).unwrap();
        let bad = DensityEstimate::new(vec![Member { partition: p, probabilities: array![[0.5, 0.4]] }]);
        assert!(matches!(bad, Err(Error::InvalidProbability { row: 0 })));
    }

    #[test]
    fn aqtl_examples() {
        let levels = percentile_levels();
        let zero = aqtl(&levels, &Array2::zeros((1, 99)), &array![0.0]).unwrap();
        assert_eq!(zero.raw, 0.0);
        let half = aqtl(&[0.5], &array![[0.0]], &array![1.0]).unwrap();
        assert!((half.raw - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_median_is_mean() {
        let q = gaussian_quantiles(&array![2.0], &array![3.0], &[0.5, 0.975]).unwrap();
        assert!((q[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((q[[0, 1]] - (2.0 + 3.0 * 1.959964)).abs() < 1e-5);
    }
}
