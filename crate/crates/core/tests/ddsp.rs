use deepkriging::ddsp::{
    aqtl, ensemble_density, fd_bin_count, gaussian_quantiles, percentile_levels, random_partition, BinPartition, DdspConfig, DensityEstimate, Member,
};
use deepkriging::model::{BasisConfig, NetworkOptions};
use deepkriging::rng::{self, Stream};
use deepkriging::simulate::{gaussian_mixture_1d, MixtureConfig};
use deepkriging::spatial::SpatialDataset;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

fn random_simplex(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, Stream::Split);
    let mut p = Array2::from_shape_fn((rows, cols), |_| rng::open_unit(&mut r));
    for mut row in p.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

fn random_density(members: usize, cuts: usize, rows: usize, seed: u64) -> DensityEstimate {
    let ms = (0..members as u64)
        .map(|i| {
            let partition = random_partition(cuts, -2.0, 3.0, seed * 1000 + i).unwrap();
            Member { probabilities: random_simplex(rows, partition.bins(), seed * 1000 + i), partition }
        })
        .collect();
    DensityEstimate::new(ms).unwrap()
}

#[test]
fn single_cuts_are_uniform() {
    let draws: Vec<f64> = (0..10_000u64).map(|s| random_partition(1, 2.0, 6.0, s).unwrap().cuts()[0]).collect();
    let mut u: Vec<f64> = draws.iter().map(|c| (c - 2.0) / 4.0).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u.iter().enumerate().map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x)).fold(0.0f64, f64::max);
    // asymptotic Kolmogorov critical value at the 1% level
    let critical = 1.6276 / n.sqrt();
    assert!(d < critical, "KS statistic {d} above {critical}");
}

#[test]
fn edges_and_ties() {
    let p = BinPartition::new(-1.0, 1.0, vec![-0.2, 0.4]).unwrap();
    assert_eq!(p.bin_of(-1.0).unwrap(), 0);
    assert_eq!(p.bin_of(1.0).unwrap(), 2);
    assert_eq!(p.bin_of(-0.2).unwrap(), 1);
    assert_eq!(p.bin_of(0.4).unwrap(), 2);
    assert!(p.bin_of(-1.0001).is_err());
    assert_eq!(p.widths().iter().sum::<f64>(), 2.0);
}

#[test]
fn fd_count_scales_with_range() {
    let mut r = rng::stream(5, Stream::Noise);
    let z: Vec<f64> = (0..500).map(|_| rng::standard_normal(&mut r)).collect();
    let m = fd_bin_count(&z).unwrap();
    let mut wide = z.clone();
    let (imax, _) = z.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let (lo, hi) = z.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    wide[imax] = lo + 2.0 * (hi - lo);
    let m2 = fd_bin_count(&wide).unwrap();
    assert!(m2 == 2 * m || m2 == 2 * m + 1, "{m} -> {m2}");
}

#[test]
fn random_densities_are_normalized() {
    let d = random_density(5, 7, 4, 3);
    let (lo, hi) = d.support();
    for loc in 0..4 {
        assert!((d.integral(loc).unwrap() - 1.0).abs() < 1e-12);
        assert!(d.cdf(loc, lo).unwrap().abs() < 1e-9);
        assert!((d.cdf(loc, hi).unwrap() - 1.0).abs() < 1e-9);
    }
    assert!(d.quantile(0, 0.0).is_err());
    assert!(d.quantile(0, 1.0).is_err());
    assert!(d.pdf(0, hi + 1.0).is_err());
}

#[test]
fn quantile_table_matches_direct_inversion() {
    let d = random_density(3, 5, 2, 9);
    let levels = percentile_levels();
    let q = d.quantile_matrix(&levels).unwrap();
    for loc in 0..2 {
        for (j, &t) in levels.iter().enumerate() {
            assert!((d.cdf(loc, q[[loc, j]]).unwrap() - t).abs() < 1e-9);
        }
    }
}

#[test]
fn perfect_and_gaussian_aqtl() {
    let z = Array1::from(vec![0.3, -1.2, 2.0]);
    let levels = percentile_levels();
    let exact = Array2::from_shape_fn((3, 99), |(i, _)| z[i]);
    assert_eq!(aqtl(&levels, &exact, &z).unwrap().raw, 0.0);
    let q = gaussian_quantiles(&Array1::zeros(3), &Array1::ones(3), &levels).unwrap();
    let score = aqtl(&levels, &q, &z).unwrap();
    assert!(score.raw > 0.0);
    assert!((score.per_observation - score.raw / 3.0).abs() < 1e-15);
}

fn small_net(seed: u64) -> NetworkOptions {
    NetworkOptions { hidden_layers: 2, width: 32, dropout: None, batchnorm: false, epochs: 30, batch_size: 32, learning_rate: 1e-3, seed }
}

fn mixture(n: usize, seed: u64) -> SpatialDataset {
    gaussian_mixture_1d(&MixtureConfig { n, seed, ..MixtureConfig::default() }).unwrap().dataset
}

#[test]
fn one_cut_ensemble_gives_two_bin_density() {
    let data = mixture(200, 1);
    let cfg = DdspConfig { ensemble: 1, cuts: Some(1), network: small_net(0), basis: BasisConfig::default(), seed: 3 };
    let d = ensemble_density(&data, &data, &cfg).unwrap();
    assert_eq!(d.ensemble_size(), 1);
    assert_eq!(d.members()[0].probabilities.ncols(), 2);
    for row in d.members()[0].probabilities.axis_iter(Axis(0)) {
        assert!((row.sum() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn ensemble_is_repeatable_and_normalized() {
    let data = mixture(300, 2);
    let targets = data.select(&(0..300).step_by(15).collect::<Vec<_>>());
    let cfg = DdspConfig { ensemble: 3, cuts: None, network: small_net(1), basis: BasisConfig::default(), seed: 4 };
    let a = ensemble_density(&data, &targets, &cfg).unwrap();
    let b = ensemble_density(&data, &targets, &cfg).unwrap();
    assert_eq!(a, b);
    let (lo, hi) = a.support();
    for loc in 0..targets.len() {
        assert!((a.integral(loc).unwrap() - 1.0).abs() < 1e-6);
        let (knots, values) = a.cdf_table(loc).unwrap();
        assert_eq!((knots[0], *knots.last().unwrap()), (lo, hi));
        assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-15));
    }
}

/// Sum of squared pdf jumps over a fine evaluation grid.
fn quadratic_variation(d: &DensityEstimate, loc: usize) -> f64 {
    let (lo, hi) = d.support();
    let points = 4001;
    let pdf: Vec<f64> = (0..points).map(|i| d.pdf(loc, lo + (hi - lo) * i as f64 / (points - 1) as f64).unwrap()).collect();
    pdf.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>()
}

#[test]
fn larger_ensembles_are_smoother() {
    let data = mixture(400, 3);
    let targets = data.select(&(20..400).step_by(40).collect::<Vec<_>>());
    let net = NetworkOptions { epochs: 100, ..small_net(2) };
    let mut rough = Vec::new();
    for &i in &[1usize, 4, 16] {
        let cfg = DdspConfig { ensemble: i, cuts: None, network: net.clone(), basis: BasisConfig::default(), seed: 5 };
        let d = ensemble_density(&data, &targets, &cfg).unwrap();
        rough.push((0..targets.len()).map(|loc| quadratic_variation(&d, loc)).sum::<f64>());
    }
    assert!(rough[0] > rough[1] && rough[1] > rough[2], "roughness {rough:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cuts_are_sorted_inside(m in 1usize..200, lo in -50.0f64..50.0, width in 1e-3f64..100.0, seed in any::<u64>()) {
        let p = random_partition(m, lo, lo + width, seed).unwrap();
        prop_assert_eq!(p.cuts().len(), m);
        prop_assert!(p.cuts().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(p.cuts().iter().all(|&c| c > lo && c < lo + width));
    }

    #[test]
    fn cdf_is_monotone_and_inverts(seed in 0u64..1000, members in 1usize..6, cuts in 1usize..12, t in 0.001f64..0.999) {
        let d = random_density(members, cuts, 1, seed);
        let (lo, hi) = d.support();
        let mut prev = 0.0;
        for i in 0..=200 {
            let f = d.cdf(0, lo + (hi - lo) * i as f64 / 200.0).unwrap();
            prop_assert!(f >= prev - 1e-15);
            prev = f;
        }
        let q = d.quantile(0, t).unwrap();
        prop_assert!((d.cdf(0, q).unwrap() - t).abs() < 1e-9);
        // quantile(cdf(y)) lands within one bin of y
        let y = lo + (hi - lo) * t;
        let back = d.quantile(0, d.cdf(0, y).unwrap().clamp(1e-12, 1.0 - 1e-12)).unwrap();
        let widest = d.members().iter().flat_map(|m| m.partition.widths()).fold(0.0f64, f64::max);
        prop_assert!((back - y).abs() <= widest + 1e-9);
    }

    #[test]
    fn pinball_loss_is_nonnegative(seed in 0u64..1000, mu in -3.0f64..3.0, sd in 0.01f64..3.0) {
        let mut r = rng::stream(seed, Stream::Noise);
        let z: Array1<f64> = (0..20).map(|_| rng::standard_normal(&mut r)).collect();
        let levels = percentile_levels();
        let q = gaussian_quantiles(&Array1::from_elem(20, mu), &Array1::from_elem(20, sd), &levels).unwrap();
        prop_assert!(aqtl(&levels, &q, &z).unwrap().raw >= 0.0);
    }
}
