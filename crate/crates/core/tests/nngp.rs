use deepkriging::basis::{linspace_column, BasisSystem, DomainBox, Kernel};
use deepkriging::nngp::{induced_cov, nearfield_form_check, Activation, NngpConfig};
use deepkriging::rng::{self, Stream};
use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;

fn cfg(b: f64, w: f64, depth: usize, act: Activation) -> NngpConfig {
    NngpConfig::new(b, w, depth, act).unwrap()
}

fn features(n: usize, width: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, Stream::Split);
    Array2::from_shape_fn((n, width), |_| rng::standard_normal(&mut r))
}

fn min_eigen(k: &Array2<f64>) -> f64 {
    let m = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[[i, j]]);
    m.symmetric_eigenvalues().min()
}

fn max_asymmetry(k: &Array2<f64>) -> f64 {
    (k - &k.t()).iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn grams_are_symmetric_and_psd() {
    for act in [Activation::Relu, Activation::Identity] {
        for depth in 1..=5 {
            for (seed, n) in [(1u64, 10usize), (2, 25), (3, 50)] {
                let f = features(n, 7, seed);
                let k = induced_cov(&f, &cfg(0.1, 1.6, depth, act)).unwrap();
                assert!(max_asymmetry(&k) < 1e-12);
                let lam = min_eigen(&k);
                assert!(lam >= -1e-8, "{act:?} depth {depth} n {n}: min eigenvalue {lam:e}");
            }
        }
    }
}

#[test]
fn relu_diagonal_follows_the_recursion() {
    let f = features(12, 5, 4);
    let (b, w) = (0.3, 1.7);
    let mut diag: Vec<f64> = (0..12).map(|i| b + w * f.row(i).dot(&f.row(i)) / 5.0).collect();
    for depth in 2..=5 {
        diag = diag.iter().map(|d| b + w * d / 2.0).collect();
        let k = induced_cov(&f, &cfg(b, w, depth, Activation::Relu)).unwrap();
        for i in 0..12 {
            assert!((k[[i, i]] - diag[i]).abs() <= 1e-12 * diag[i].abs().max(1.0));
        }
    }
}

#[test]
fn relu_diagonal_telescopes_without_bias() {
    let f = features(8, 6, 5);
    let w = 1.4;
    let k0 = induced_cov(&f, &cfg(0.0, w, 1, Activation::Relu)).unwrap();
    for depth in 1..=5 {
        let k = induced_cov(&f, &cfg(0.0, w, depth, Activation::Relu)).unwrap();
        let factor = (w / 2.0f64).powi(depth as i32 - 1);
        for i in 0..8 {
            assert!((k[[i, i]] - factor * k0[[i, i]]).abs() <= 1e-13 * k0[[i, i]]);
        }
    }
}

#[test]
fn identity_depth_one_is_normalized_basis_gram() {
    let locs = linspace_column(0.0, 1.0, 30);
    let phi = BasisSystem::new(3, Kernel::Wendland, DomainBox::unit(1)).unwrap().evaluate(&locs).unwrap();
    let (b, w) = (0.25, 3.0);
    let k = induced_cov(&phi, &cfg(b, w, 1, Activation::Identity)).unwrap();
    let want = phi.dot(&phi.t()).mapv(|v| b + w * v / phi.ncols() as f64);
    assert!((&k - &want).iter().all(|v| v.abs() < 1e-12));
    // without bias the Gram is proportional to Phi Phi'
    let k0 = induced_cov(&phi, &cfg(0.0, 1.0, 1, Activation::Identity)).unwrap();
    let ratio = phi.dot(&phi.t()) / phi.ncols() as f64;
    assert!((&k0 - &ratio).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn nearfield_form_holds_for_wendland_embedding() {
    let locs = linspace_column(0.0, 1.0, 400);
    let phi = BasisSystem::new(4, Kernel::Wendland, DomainBox::unit(1)).unwrap().evaluate(&locs).unwrap();
    assert_eq!(phi.ncols(), 139);
    let report = nearfield_form_check(&locs, &phi, &cfg(0.1, 2.0, 2, Activation::Relu)).unwrap();
    assert!(report.passes(), "residual {}", report.relative_residual);
    // a site paired with itself has zero basis distance, so C(s, s) = 2 v(s) up to the fit residual
    let k = induced_cov(&phi, &cfg(0.1, 2.0, 2, Activation::Relu)).unwrap();
    let worst = (0..400).map(|i| ((2.0 * report.v[i] - k[[i, i]]) / k[[i, i]]).abs()).fold(0.0f64, f64::max);
    assert!(worst < 0.05, "diagonal mismatch {worst}");
}

#[test]
fn nearfield_form_with_coordinate_features() {
    let locs = linspace_column(0.0, 1.0, 200);
    let coords = ndarray::concatenate![ndarray::Axis(1), Array2::ones((200, 1)), locs.clone()];
    let report = nearfield_form_check(&locs, &coords, &cfg(0.1, 1.0, 2, Activation::Relu)).unwrap();
    assert!(report.passes(), "residual {}", report.relative_residual);
}

#[test]
fn nearfield_needs_pairs() {
    let locs = linspace_column(0.0, 1.0, 2);
    assert!(nearfield_form_check(&locs, &features(2, 3, 1), &cfg(0.1, 1.0, 2, Activation::Relu)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_grams_are_psd(seed in 0u64..100_000, n in 2usize..=50, depth in 1usize..=5, relu in any::<bool>(), b in 0.0f64..2.0, w in 0.1f64..3.0) {
        let act = if relu { Activation::Relu } else { Activation::Identity };
        let f = features(n, 4, seed);
        let k = induced_cov(&f, &cfg(b, w, depth, act)).unwrap();
        prop_assert!(max_asymmetry(&k) < 1e-12);
        let scale = k.diag().iter().cloned().fold(1.0f64, f64::max);
        prop_assert!(min_eigen(&k) >= -1e-8 * scale);
    }
}
