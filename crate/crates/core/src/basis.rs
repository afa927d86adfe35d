//! Multi-resolution radial basis embedding of spatial coordinates.
//!
//! Level `h` places `9 * 2^(h-1) + 1` knots per axis on a regular lattice
//! spanning the domain box (both endpoints included), and every knot carries
//! a radial function `phi(||s - u|| / theta_h)` with `theta_h` equal to 2.5
//! knot spacings. Each axis of the box is mapped affinely onto `[0, 1]`
//! before distances are taken, so the kernels are isotropic on the unit box.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns whose largest absolute value does not exceed this are pruned.
pub const PRUNE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Wendland,
    Gaussian,
}

impl Kernel {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Kernel::Wendland => wendland_unchecked(t),
            Kernel::Gaussian => (-t * t).exp(),
        }
    }

    /// Scaled distance beyond which the kernel is exactly zero.
    fn support(self) -> f64 {
        match self {
            Kernel::Wendland => 1.0,
            Kernel::Gaussian => f64::INFINITY,
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wendland" => Ok(Kernel::Wendland),
            "gaussian" => Ok(Kernel::Gaussian),
            other => Err(Error::invalid(format!("unknown kernel `{other}`"))),
        }
    }
}

#[inline]
fn wendland_unchecked(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        let r = 1.0 - t;
        let r2 = r * r;
        let r6 = r2 * r2 * r2;
        (r6 * (35.0 * t * t + 18.0 * t + 3.0) / 3.0).min(1.0)
    }
}

/// Wendland compactly supported correlation function.
pub fn wendland(t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::invalid(format!("wendland argument must be nonnegative, got {t}")));
    }
    Ok(wendland_unchecked(t))
}

pub fn gaussian_kernel(t: f64) -> f64 {
    (-t * t).exp()
}

/// Number of levels needed for `K >= N`: `max(1, 1 + ceil(log2(N^(1/d) / 10)))`.
pub fn num_levels(n: usize, d: usize) -> Result<usize> {
    if n == 0 || !(1..=3).contains(&d) {
        return Err(Error::invalid(format!("num_levels needs n >= 1 and d in 1..=3, got n={n}, d={d}")));
    }
    let root = match d {
        1 => n as f64,
        2 => (n as f64).sqrt(),
        _ => (n as f64).cbrt(),
    };
    let h = 1.0 + (root / 10.0).log2().ceil();
    Ok(h.max(1.0) as usize)
}

/// Knots per axis at `level` (1-based).
pub fn knots_per_axis(level: usize) -> usize {
    9 * (1usize << (level - 1)) + 1
}

/// Total basis size `sum_h (9 * 2^(h-1) + 1)^d`.
pub fn total_basis_size(levels: usize, d: usize) -> usize {
    (1..=levels).map(|h| knots_per_axis(h).pow(d as u32)).sum()
}

/// Axis-aligned box the knot lattices span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > 3 {
            return Err(Error::invalid("domain box needs matching bounds for 1 to 3 axes"));
        }
        for (axis, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(h > l) || !l.is_finite() || !h.is_finite() {
                return Err(Error::DegenerateDomain { axis });
            }
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn unit(d: usize) -> Self {
        DomainBox { lo: vec![0.0; d], hi: vec![1.0; d] }
    }

    /// Bounding box of `locations`, widened by one level-1 knot spacing
    /// (a ninth of the width) on each side.
    pub fn around(locations: &Array2<f64>) -> Result<Self> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (axis, col) in locations.columns().into_iter().enumerate() {
            let (a, b) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let pad = (b - a) / (knots_per_axis(1) - 1) as f64;
            if !(pad > 0.0) {
                return Err(Error::DegenerateDomain { axis });
            }
            lo.push(a - pad);
            hi.push(b + pad);
        }
        DomainBox::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn to_unit(&self, axis: usize, x: f64) -> f64 {
        (x - self.lo[axis]) / (self.hi[axis] - self.lo[axis])
    }

    fn from_unit(&self, axis: usize, u: f64) -> f64 {
        self.lo[axis] + u * (self.hi[axis] - self.lo[axis])
    }
}

/// Knot lattice of one resolution level, in unit-box coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    pub per_axis: usize,
    /// `(per_axis)^d x d`, last axis varying fastest.
    pub knots: Array2<f64>,
    pub theta: f64,
}

impl KnotGrid {
    pub fn spacing(&self) -> f64 {
        1.0 / (self.per_axis - 1) as f64
    }
}

/// Lattice for `level` in `d` dimensions. Knots and `theta` live on the unit
/// box; use [`BasisSystem::knots_in_domain`] for domain coordinates.
pub fn knot_grid(level: usize, d: usize) -> Result<KnotGrid> {
    if level == 0 || !(1..=3).contains(&d) {
        return Err(Error::invalid(format!("knot grid needs level >= 1 and d in 1..=3, got {level}, {d}")));
    }
    let m = knots_per_axis(level);
    let h = 1.0 / (m - 1) as f64;
    let total = m.pow(d as u32);
    let knots = Array2::from_shape_fn((total, d), |(k, a)| {
        let stride = m.pow((d - 1 - a) as u32);
        ((k / stride) % m) as f64 * h
    });
    Ok(KnotGrid { per_axis: m, knots, theta: 2.5 * h })
}

/// A stack of knot lattices together with the kernel and the domain box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSystem {
    kernel: Kernel,
    domain: DomainBox,
    levels: Vec<KnotGrid>,
}

impl BasisSystem {
    pub fn new(levels: usize, kernel: Kernel, domain: DomainBox) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("basis needs at least one level"));
        }
        let d = domain.dim();
        let levels = (1..=levels).map(|h| knot_grid(h, d)).collect::<Result<Vec<_>>>()?;
        Ok(BasisSystem { kernel, domain, levels })
    }

    /// Levels from [`num_levels`] and a padded bounding box of the data.
    pub fn for_locations(locations: &Array2<f64>, kernel: Kernel, levels: Option<usize>) -> Result<Self> {
        let levels = match levels {
            Some(h) => h,
            None => num_levels(locations.nrows(), locations.ncols())?,
        };
        Self::new(levels, kernel, DomainBox::around(locations)?)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn levels(&self) -> &[KnotGrid] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn size(&self) -> usize {
        self.levels.iter().map(|l| l.knots.nrows()).sum()
    }

    /// All knots mapped back into domain coordinates, level by level.
    pub fn knots_in_domain(&self) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((self.size(), d));
        let mut row = 0;
        for level in &self.levels {
            for k in level.knots.rows() {
                for a in 0..d {
                    out[[row, a]] = self.domain.from_unit(a, k[a]);
                }
                row += 1;
            }
        }
        out
    }

    /// Full `N x K` basis matrix without pruning.
    pub fn evaluate(&self, locations: &Array2<f64>) -> Result<Array2<f64>> {
        let d = self.dim();
        if locations.ncols() != d {
            return Err(Error::ShapeMismatch { what: "location dimension", expected: d, found: locations.ncols() });
        }
        let n = locations.nrows();
        let mut out = Array2::zeros((n, self.size()));
        let unit: Array2<f64> = Array2::from_shape_fn((n, d), |(i, a)| self.domain.to_unit(a, locations[[i, a]]));
        let support = self.kernel.support();
        for (i, s) in unit.rows().into_iter().enumerate() {
            let mut offset = 0;
            for level in &self.levels {
                let reach = support * level.theta;
                let m = level.per_axis;
                if support.is_finite() {
                    // only visit the knots inside the kernel support
                    let h = level.spacing();
                    let ranges: Vec<(usize, usize)> = (0..d)
                        .map(|a| {
                            let lo = ((s[a] - reach) / h).floor().max(0.0);
                            let hi = ((s[a] + reach) / h).ceil().min((m - 1) as f64);
                            if hi < lo { (1, 0) } else { (lo as usize, hi as usize) }
                        })
                        .collect();
                    if ranges.iter().any(|&(a, b)| b < a) {
                        offset += level.knots.nrows();
                        continue;
                    }
                    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
                    'walk: loop {
                        let mut k = 0;
                        let mut dist2 = 0.0;
                        for a in 0..d {
                            k = k * m + idx[a];
                            let diff = s[a] - idx[a] as f64 * h;
                            dist2 += diff * diff;
                        }
                        out[[i, offset + k]] = self.kernel.eval(dist2.sqrt() / level.theta);
                        // odometer over the box of candidate knots
                        let mut a = d;
                        loop {
                            if a == 0 {
                                break 'walk;
                            }
                            a -= 1;
                            if idx[a] < ranges[a].1 {
                                idx[a] += 1;
                                break;
                            }
                            idx[a] = ranges[a].0;
                        }
                    }
                } else {
                    for (k, u) in level.knots.rows().into_iter().enumerate() {
                        let dist2: f64 = (0..d).map(|a| (s[a] - u[a]).powi(2)).sum();
                        out[[i, offset + k]] = self.kernel.eval(dist2.sqrt() / level.theta);
                    }
                }
                offset += level.knots.nrows();
            }
        }
        Ok(out)
    }

    /// Evaluate and drop columns that vanish at every location.
    pub fn embed(&self, locations: &Array2<f64>) -> Result<EmbeddingMatrix> {
        let full = self.evaluate(locations)?;
        let kept: Vec<usize> = full
            .columns()
            .into_iter()
            .enumerate()
            .filter(|(_, c)| c.iter().any(|v| v.abs() > PRUNE_THRESHOLD))
            .map(|(k, _)| k)
            .collect();
        Ok(EmbeddingMatrix { values: full.select(Axis(1), &kept), kept_columns: kept, k_original: full.ncols() })
    }

    /// Evaluate only the columns retained by an earlier pruning.
    pub fn embed_with(&self, locations: &Array2<f64>, kept_columns: &[usize]) -> Result<Array2<f64>> {
        Ok(self.evaluate(locations)?.select(Axis(1), kept_columns))
    }
}

/// Pruned basis matrix with the map back to the unpruned columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub values: Array2<f64>,
    pub kept_columns: Vec<usize>,
    pub k_original: usize,
}

impl EmbeddingMatrix {
    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Covariates first, basis columns after.
pub fn concat_features(x: &Array2<f64>, phi: &Array2<f64>) -> Result<Array2<f64>> {
    if x.nrows() != phi.nrows() {
        return Err(Error::ShapeMismatch { what: "feature rows", expected: phi.nrows(), found: x.nrows() });
    }
    Ok(ndarray::concatenate(Axis(1), &[x.view(), phi.view()]).expect("row counts checked"))
}

/// Column of ones, the implicit intercept.
pub fn intercept(n: usize) -> Array2<f64> {
    Array2::ones((n, 1))
}

/// Evenly spaced points on `[a, b]` as an `n x 1` matrix.
pub fn linspace_column(a: f64, b: f64, n: usize) -> Array2<f64> {
    Array1::linspace(a, b, n).insert_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn level_counts() {
        assert_eq!(num_levels(900, 2).unwrap(), 3);
        assert_eq!(num_levels(1000, 1).unwrap(), 8);
        assert_eq!(num_levels(100, 1).unwrap(), 5);
        assert_eq!(num_levels(5, 1).unwrap(), 1);
        assert_eq!(total_basis_size(4, 1), 139);
        assert_eq!(total_basis_size(3, 2), 1830);
        assert_eq!(total_basis_size(4, 2), 7159);
    }

    #[test]
    fn knot_grid_examples() {
        let g = knot_grid(1, 1).unwrap();
        assert_eq!(g.knots.nrows(), 10);
        assert!((g.spacing() - 1.0 / 9.0).abs() < 1e-15);
        assert!((g.theta - 2.5 / 9.0).abs() < 1e-15);
        assert_eq!(g.knots[[9, 0]], 1.0);
        assert_eq!(knot_grid(2, 1).unwrap().knots.nrows(), 19);
        assert_eq!(knot_grid(3, 2).unwrap().knots.nrows(), 1369);
        assert!(matches!(DomainBox::new(vec![0.0], vec![0.0]), Err(Error::DegenerateDomain { axis: 0 })));
    }

    #[test]
    fn kernel_values() {
        assert_eq!(wendland(0.0).unwrap(), 1.0);
        assert_eq!(wendland(1.0).unwrap(), 0.0);
        assert_eq!(wendland(2.7).unwrap(), 0.0);
        // 0.5^6 * (35/4 + 9 + 3) / 3
        assert!((wendland(0.5).unwrap() - 0.015625 * 20.75 / 3.0).abs() < 1e-15);
        assert!(wendland(-0.1).is_err());
        assert_eq!(gaussian_kernel(0.0), 1.0);
        assert!((gaussian_kernel(1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(gaussian_kernel(0.5) > gaussian_kernel(1.0));
    }

    #[test]
    fn location_on_knot_gives_one() {
        let sys = BasisSystem::new(2, Kernel::Wendland, DomainBox::unit(1)).unwrap();
        let phi = sys.evaluate(&array![[1.0 / 9.0]]).unwrap();
        assert!((phi[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pruning_drops_far_knots() {
        let sys = BasisSystem::new(4, Kernel::Wendland, DomainBox::unit(1)).unwrap();
        let locs = linspace_column(0.0, 0.3, 50);
        let e = sys.embed(&locs).unwrap();
        assert_eq!(e.k_original, 139);
        assert!(e.width() < 139);
        // the last level-4 knot at 1.0 is far from every point
        assert!(!e.kept_columns.contains(&138));
        let full = sys.evaluate(&locs).unwrap();
        for (j, &k) in e.kept_columns.iter().enumerate() {
            assert_eq!(full.column(k), e.values.column(j));
        }
        let dropped: f64 = (0..139).filter(|k| !e.kept_columns.contains(k)).map(|k| full.column(k).iter().map(|v| v.abs()).sum::<f64>()).sum();
        assert_eq!(dropped, 0.0);
    }

    #[test]
    fn thousand_points_four_levels() {
        let sys = BasisSystem::new(4, Kernel::Wendland, DomainBox::unit(1)).unwrap();
        let e = sys.embed(&linspace_column(0.0, 1.0, 1000)).unwrap();
        assert_eq!(e.k_original, 139);
        assert!(e.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(e.values.rows().into_iter().all(|r| r.iter().any(|&v| v > 0.0)));
    }

    #[test]
    fn sparse_walk_matches_brute_force() {
        let dom = DomainBox::new(vec![-1.0, 2.0], vec![3.0, 4.5]).unwrap();
        let sys = BasisSystem::new(3, Kernel::Wendland, dom).unwrap();
        let locs = array![[0.0, 2.0], [1.3, 3.7], [2.99, 4.49], [-1.0, 4.5]];
        let fast = sys.evaluate(&locs).unwrap();
        let knots = sys.knots_in_domain();
        let mut offset = 0;
        for level in sys.levels() {
            for k in 0..level.knots.nrows() {
                for i in 0..locs.nrows() {
                    let du = (locs[[i, 0]] + 1.0) / 4.0 - (knots[[offset + k, 0]] + 1.0) / 4.0;
                    let dv = (locs[[i, 1]] - 2.0) / 2.5 - (knots[[offset + k, 1]] - 2.0) / 2.5;
                    let want = wendland((du * du + dv * dv).sqrt() / level.theta).unwrap();
                    assert!((fast[[i, offset + k]] - want).abs() < 1e-14);
                }
            }
            offset += level.knots.nrows();
        }
    }

    #[test]
    fn concat_examples() {
        let phi = array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]];
        assert_eq!(concat_features(&Array2::zeros((2, 0)), &phi).unwrap(), phi);
        let c = concat_features(&intercept(2), &phi).unwrap();
        assert_eq!(c.ncols(), 4);
        assert!(c.column(0).iter().all(|&v| v == 1.0));
        assert!(concat_features(&intercept(3), &phi).is_err());
    }

    #[test]
    fn translation_quasi_invariance_on_fine_grid() {
        // Pairs with the same lag whose starts sit at the same phase of the
        // knot lattice agree to 1%; arbitrary phases only to within 2x.
        let sys = BasisSystem::new(5, Kernel::Wendland, DomainBox::unit(2)).unwrap();
        let lag = [0.004, -0.002];
        let dist = |a: f64, b: f64| {
            let p = sys.evaluate(&array![[a, b], [a + lag[0], b + lag[1]]]).unwrap();
            (&p.row(0) - &p.row(1)).mapv(|v| v * v).sum()
        };
        let step = 1.0 / 9.0;
        let aligned: Vec<f64> = (2..6).map(|k| dist(0.013 + k as f64 * step, 0.4 + (k % 2) as f64 * step)).collect();
        let spread = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread(&aligned) < 1.01, "{aligned:?}");
        let shifted: Vec<f64> = [0.3, 0.41, 0.5, 0.577, 0.66].iter().map(|&a| dist(a, 0.5)).collect();
        assert!(spread(&shifted) < 2.0, "{shifted:?}");
    }
}
