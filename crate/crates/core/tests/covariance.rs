use deepkriging::basis::{num_levels, total_basis_size, BasisSystem, Kernel};
use deepkriging::covariance::{fit_mle, profile_log_likelihood, design_matrix, CovFamily, CovarianceModel, MeanStructure, MleOptions};
use deepkriging::simulate::{nonstat_2d, sample_gp_1d, GpConfig};
use proptest::prelude::*;

#[test]
fn mle_recovers_simulated_parameters() {
    let cfg = GpConfig { n: 400, seed: 11, ..GpConfig::default() };
    let data = sample_gp_1d(&cfg).unwrap();
    let fit = fit_mle(data.locations(), data.responses(), data.covariates(), CovFamily::Exponential, MeanStructure::Constant, MleOptions::default()).unwrap();
    let m = fit.model;
    assert!(m.sigma2 > 0.4 && m.sigma2 < 2.5, "sigma2 {}", m.sigma2);
    assert!(m.rho > 0.03 && m.rho < 0.3, "rho {}", m.rho);
    assert!(m.tau2 < 0.05, "tau2 {}", m.tau2);
    // the optimum beats the generating parameters
    let x = design_matrix(data.covariates(), MeanStructure::Constant);
    let (truth, _) = profile_log_likelihood(data.locations(), data.responses(), &x, &cfg.model().unwrap()).unwrap();
    assert!(fit.log_likelihood >= truth - 1e-6);
}

#[test]
fn gp_sample_moments() {
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for seed in 0..40 {
        let d = sample_gp_1d(&GpConfig { n: 200, seed, ..GpConfig::default() }).unwrap();
        let z = d.responses();
        let m = z.mean().unwrap();
        means.push(m);
        vars.push(z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 199.0);
    }
    let grand = means.iter().sum::<f64>() / 40.0;
    let var = vars.iter().sum::<f64>() / 40.0;
    assert!((grand - 1.0).abs() < 0.2, "mean {grand}");
    // the sample variance of a correlated field underestimates sigma2 + tau2
    assert!(var > 0.6 && var < 1.1, "variance {var}");
}

#[test]
fn basis_sizes_for_benchmark_designs() {
    assert_eq!(num_levels(1000, 1).unwrap(), 8);
    assert_eq!(num_levels(900, 2).unwrap(), 3);
    assert_eq!(total_basis_size(4, 1), 139);
    assert_eq!(total_basis_size(3, 2), 1830);
    let grid = nonstat_2d(30).unwrap();
    let sys = BasisSystem::for_locations(grid.locations(), Kernel::Wendland, Some(3)).unwrap();
    assert_eq!(sys.size(), 1830);
    let phi = sys.evaluate(grid.locations()).unwrap();
    assert_eq!(phi.dim(), (900, 1830));
    assert!(phi.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn fitted_model_serializes_with_named_keys() {
    let data = sample_gp_1d(&GpConfig { n: 60, seed: 2, ..GpConfig::default() }).unwrap();
    let fit = fit_mle(data.locations(), data.responses(), data.covariates(), CovFamily::Matern15, MeanStructure::Constant, MleOptions::default()).unwrap();
    let json: serde_json::Value = serde_json::to_value(fit.document()).unwrap();
    assert_eq!(json["family"], "matern15");
    for key in ["sigma2", "rho", "tau2", "beta"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn likelihood_is_translation_invariant(shift in -50.0f64..50.0, seed in 0u64..100) {
        let data = sample_gp_1d(&GpConfig { n: 40, seed, ..GpConfig::default() }).unwrap();
        let model = CovarianceModel::new(CovFamily::Exponential, 1.0, 0.1, 0.01).unwrap();
        let x = design_matrix(data.covariates(), MeanStructure::Constant);
        let moved = data.locations().mapv(|v| v + shift);
        let (a, _) = profile_log_likelihood(data.locations(), data.responses(), &x, &model).unwrap();
        let (b, _) = profile_log_likelihood(&moved, data.responses(), &x, &model).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
    }
}
