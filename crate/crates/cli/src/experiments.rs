//! Experiment runners for the simulation studies, the nonlinearity probe,
//! the runtime scaling study and the air-quality fixture.

use std::path::PathBuf;
use std::time::Instant;

use deepkriging::basis::Kernel;
use deepkriging::covariance::{fit_mle, CovFamily, CovarianceModel, MeanStructure, MleOptions};
use deepkriging::ddsp::{aqtl, gaussian_quantiles, percentile_levels, DdspConfig, DdspModel, DensityEstimate};
use deepkriging::kriging::{frk_predict, projected_random_effect_cov, UniversalKriging};
use deepkriging::model::{classify_threshold, nonlinearity_probe, BasisConfig, FeatureKind, ModelSpec, ProbeMethod};
use deepkriging::nn::Target;
use deepkriging::rng::derive_seed;
use deepkriging::simulate::{gaussian_mixture_1d, nonstat_2d, sample_gp_1d, thresholded_cosine_1d, CosineConfig, GpConfig, MixtureConfig};
use deepkriging::spatial::{self, grid_match, kfold_split, random_split, CsvSchema, GridCells, SpatialDataset};
use deepkriging::{DeepKrigingModel, NetworkOptions, Task};
use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::fixture;
use crate::report::{write_report, PlotData, PlotKind, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    Sim1d,
    Sim2d,
    MixtureUq,
    Probe,
    Scaling,
    Pm25Fixture,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 6] = [
        ExperimentName::Sim1d,
        ExperimentName::Sim2d,
        ExperimentName::MixtureUq,
        ExperimentName::Probe,
        ExperimentName::Scaling,
        ExperimentName::Pm25Fixture,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Sim1d => "sim1d",
            ExperimentName::Sim2d => "sim2d",
            ExperimentName::MixtureUq => "mixture-uq",
            ExperimentName::Probe => "probe",
            ExperimentName::Scaling => "scaling",
            ExperimentName::Pm25Fixture => "pm25-fixture",
        }
    }

    fn allowed(self) -> &'static [Method] {
        use Method::*;
        match self {
            ExperimentName::Sim1d => &[KrigingTrue, KrigingMle, Frk, DeepKriging, DnnIntercept, DnnCoords],
            ExperimentName::Sim2d => &[DeepKriging, DnnIntercept, DnnCoords, KrigingMle, Frk],
            ExperimentName::MixtureUq | ExperimentName::Probe | ExperimentName::Scaling => &[DeepKriging, KrigingMle],
            ExperimentName::Pm25Fixture => &[DeepKriging, DnnCoords, KrigingMle],
        }
    }
}

impl std::str::FromStr for ExperimentName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| CliError::config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DeepKriging,
    KrigingTrue,
    KrigingMle,
    Frk,
    DnnIntercept,
    DnnCoords,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::DeepKriging, Method::KrigingTrue, Method::KrigingMle, Method::Frk, Method::DnnIntercept, Method::DnnCoords];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::DeepKriging => "deepkriging",
            Method::KrigingTrue => "kriging-true",
            Method::KrigingMle => "kriging-mle",
            Method::Frk => "frk",
            Method::DnnIntercept => "dnn-intercept",
            Method::DnnCoords => "dnn-coords",
        }
    }

    /// Fixed index so a method's seed does not depend on the method list.
    fn id(self) -> u64 {
        match self {
            Method::DeepKriging => 1,
            Method::KrigingTrue => 2,
            Method::KrigingMle => 3,
            Method::Frk => 4,
            Method::DnnIntercept => 5,
            Method::DnnCoords => 6,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| CliError::config(format!("unknown method `{s}`")))
    }
}

/// Data design for the nonlinearity probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeDesign {
    Cosine,
    Mixture,
}

/// Fully resolved experiment configuration; echoed as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub seed: u64,
    pub replicates: usize,
    pub folds: usize,
    pub n: usize,
    pub train_size: usize,
    pub methods: Vec<Method>,
    /// Network of the DeepKriging model.
    pub network: NetworkOptions,
    /// Network of the baseline DNNs.
    pub baseline_network: NetworkOptions,
    /// Basis levels; `None` picks the count from the training size.
    pub levels: Option<usize>,
    pub kernel: Kernel,
    /// Covariance family of the estimated Kriging model.
    pub covariance: CovFamily,
    pub ensemble: usize,
    /// Cut points per partition; `None` applies the Freedman-Diaconis rule.
    pub cuts: Option<usize>,
    pub probe_values: usize,
    pub design: ProbeDesign,
    pub sizes: Vec<usize>,
    pub threshold: f64,
    pub mle_iterations: usize,
    pub fixture: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub output: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

impl ExperimentSpec {
    /// Documented defaults for `name`.
    pub fn defaults(name: ExperimentName) -> Self {
        use Method::*;
        let base = ExperimentSpec {
            name,
            seed: 0,
            replicates: 1,
            folds: 10,
            n: 0,
            train_size: 0,
            methods: Vec::new(),
            network: NetworkOptions::default(),
            baseline_network: NetworkOptions::default(),
            levels: None,
            kernel: Kernel::Wendland,
            covariance: CovFamily::Exponential,
            ensemble: 10,
            cuts: None,
            probe_values: 50,
            design: ProbeDesign::Mixture,
            sizes: Vec::new(),
            threshold: 12.0,
            mle_iterations: MleOptions::default().max_iterations,
            fixture: None,
            grid: None,
            output: PathBuf::from("results").join(name.as_str()),
            threads: 0,
        };
        match name {
            ExperimentName::Sim1d => ExperimentSpec {
                replicates: 20,
                n: 1000,
                train_size: 800,
                methods: vec![KrigingTrue, KrigingMle, DeepKriging, DnnIntercept, DnnCoords],
                network: NetworkOptions::gp_1d(),
                baseline_network: NetworkOptions::gp_1d(),
                levels: Some(4),
                covariance: CovFamily::Matern15,
                ..base
            },
            ExperimentName::Sim2d => ExperimentSpec {
                n: 900,
                methods: vec![DeepKriging, DnnCoords, KrigingMle],
                network: NetworkOptions::nonstat_2d(),
                baseline_network: NetworkOptions::nonstat_2d_baseline(),
                levels: Some(3),
                ..base
            },
            ExperimentName::MixtureUq => ExperimentSpec {
                n: 2500,
                train_size: 2000,
                methods: vec![DeepKriging, KrigingMle],
                levels: Some(4),
                ..base
            },
            ExperimentName::Probe => ExperimentSpec {
                n: 100,
                methods: vec![KrigingMle, DeepKriging],
                network: NetworkOptions { epochs: 50, ..NetworkOptions::default() },
                levels: Some(4),
                ..base
            },
            ExperimentName::Scaling => ExperimentSpec {
                sizes: vec![400, 1600, 6400],
                methods: vec![DeepKriging, KrigingMle],
                levels: Some(4),
                ..base
            },
            ExperimentName::Pm25Fixture => ExperimentSpec { methods: vec![DeepKriging, DnnCoords, KrigingMle], levels: Some(1), ..base },
        }
    }

    /// Defaults for `name` overridden by `settings`.
    pub fn resolve(name: ExperimentName, settings: &Settings) -> Result<Self> {
        let mut spec = Self::defaults(name);
        let s = settings;
        spec.seed = s.u64("seed").unwrap_or(spec.seed);
        spec.replicates = s.usize("replicates").unwrap_or(spec.replicates);
        spec.folds = s.usize("folds").unwrap_or(spec.folds);
        spec.n = s.usize("n").unwrap_or(spec.n);
        spec.train_size = s.usize("train_size").unwrap_or(spec.train_size);
        if let Some(list) = s.list("methods") {
            spec.methods = list.iter().map(|m| m.parse()).collect::<Result<_>>()?;
        }
        for net in [&mut spec.network, &mut spec.baseline_network] {
            apply_network(net, s);
        }
        if let Some(h) = s.usize("levels") {
            spec.levels = (h > 0).then_some(h);
        }
        spec.kernel = s.kernel()?.unwrap_or(spec.kernel);
        spec.covariance = s.covariance()?.unwrap_or(spec.covariance);
        spec.ensemble = s.usize("ensemble").unwrap_or(spec.ensemble);
        if let Some(m) = s.usize("cuts") {
            spec.cuts = (m > 0).then_some(m);
        }
        spec.probe_values = s.usize("probe_values").unwrap_or(spec.probe_values);
        if let Some(d) = s.raw("design") {
            spec.design = match d {
                "cosine" => ProbeDesign::Cosine,
                "mixture" => ProbeDesign::Mixture,
                other => return Err(CliError::config(format!("design must be cosine or mixture, got `{other}`"))),
            };
        }
        spec.sizes = s.usize_list("sizes").unwrap_or(spec.sizes);
        spec.threshold = s.f64("threshold").unwrap_or(spec.threshold);
        spec.mle_iterations = s.usize("mle_iterations").unwrap_or(spec.mle_iterations);
        spec.fixture = s.path("fixture").or(spec.fixture);
        spec.grid = s.path("grid").or(spec.grid);
        spec.output = s.path("output").unwrap_or(spec.output);
        spec.threads = s.usize("threads").unwrap_or(spec.threads);
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::config(msg));
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        for m in &self.methods {
            if !self.name.allowed().contains(m) {
                return bad(format!("method `{}` is not available for experiment `{}`", m.as_str(), self.name.as_str()));
            }
        }
        let needs_split = matches!(self.name, ExperimentName::Sim1d | ExperimentName::MixtureUq);
        if needs_split && !(0 < self.train_size && self.train_size < self.n) {
            return bad(format!("train_size must lie strictly between 0 and n = {}", self.n));
        }
        if self.name == ExperimentName::Probe && (self.n < 4 || self.probe_values < 3) {
            return bad("the probe needs n >= 4 and probe_values >= 3".into());
        }
        if self.name == ExperimentName::Scaling && (self.sizes.is_empty() || self.sizes.iter().any(|&n| n < 10)) {
            return bad("scaling needs sizes of at least 10".into());
        }
        if self.ensemble == 0 {
            return bad("ensemble must be >= 1".into());
        }
        if let Some(rate) = self.network.dropout {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("dropout {rate} not in [0, 1)"));
            }
        }
        Ok(())
    }

    fn basis(&self) -> BasisConfig {
        BasisConfig { kernel: self.kernel, levels: self.levels, domain: None }
    }

    fn mle_options(&self) -> MleOptions {
        MleOptions { max_iterations: self.mle_iterations, ..MleOptions::default() }
    }
}

fn apply_network(net: &mut NetworkOptions, s: &Settings) {
    net.epochs = s.usize("epochs").unwrap_or(net.epochs);
    net.batch_size = s.usize("batch_size").unwrap_or(net.batch_size);
    net.hidden_layers = s.usize("hidden_layers").unwrap_or(net.hidden_layers);
    net.width = s.usize("width").unwrap_or(net.width);
    net.learning_rate = s.f64("learning_rate").unwrap_or(net.learning_rate);
    net.batchnorm = s.bool("batchnorm").unwrap_or(net.batchnorm);
    if let Some(rate) = s.f64("dropout") {
        net.dropout = (rate > 0.0).then_some(rate);
    }
}

/// Run `spec` on a worker pool of `spec.threads` threads.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| CliError::config(format!("cannot build a pool of {} threads: {e}", spec.threads)))?;
    pool.install(|| match spec.name {
        ExperimentName::Sim1d => sim1d(spec),
        ExperimentName::Sim2d => sim2d(spec),
        ExperimentName::MixtureUq => mixture_uq(spec),
        ExperimentName::Probe => probe(spec),
        ExperimentName::Scaling => scaling(spec),
        ExperimentName::Pm25Fixture => pm25_fixture(spec),
    })
}

/// Run `spec` and write every table, plot and the manifest to `spec.output`.
pub fn run_and_write(spec: &ExperimentSpec) -> Result<(Report, Vec<PathBuf>)> {
    let start = Instant::now();
    let report = run_experiment(spec)?;
    let files = write_report(&spec.output, spec.name.as_str(), spec, &report, start.elapsed().as_secs_f64())?;
    Ok((report, files))
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn mean_structure(data: &SpatialDataset) -> MeanStructure {
    if data.n_covariates() == 0 {
        MeanStructure::Constant
    } else {
        MeanStructure::Linear
    }
}

/// Maximum likelihood covariance; an exhausted iteration budget keeps the
/// best point found.
pub fn estimate(spec: &ExperimentSpec, train: &SpatialDataset) -> Result<CovarianceModel> {
    let fit = fit_mle(train.locations(), train.responses(), train.covariates(), spec.covariance, mean_structure(train), spec.mle_options());
    match fit {
        Ok(f) => Ok(f.model),
        Err(deepkriging::Error::NotConverged { best, .. }) => Ok(best.model),
        Err(e) => Err(e.into()),
    }
}

struct Predictions {
    train: Array1<f64>,
    test: Array1<f64>,
}

pub fn network_spec(spec: &ExperimentSpec, method: Method, task: Task, seed: u64) -> ModelSpec {
    let seed = derive_seed(seed, method.id());
    let variant = match method {
        Method::DnnIntercept => FeatureKind::InterceptOnly,
        Method::DnnCoords => FeatureKind::Coordinates,
        _ => FeatureKind::Embedding,
    };
    if variant == FeatureKind::Embedding {
        let network = spec.network.with_seed(seed);
        match task {
            Task::Regression => ModelSpec::regression(network, spec.basis()),
            Task::Classification { classes } => ModelSpec::classification(classes, network, spec.basis()),
        }
    } else {
        ModelSpec::baseline(variant, task, spec.baseline_network.with_seed(seed))
    }
}

fn fit_predict(
    spec: &ExperimentSpec,
    method: Method,
    train: &SpatialDataset,
    test: &SpatialDataset,
    seed: u64,
    truth: Option<&CovarianceModel>,
) -> Result<Predictions> {
    let kriging = |model: &CovarianceModel| -> Result<Predictions> {
        let uk = UniversalKriging::fit(train, model)?;
        Ok(Predictions {
            train: uk.predict(train.locations(), train.covariates())?.mean,
            test: uk.predict(test.locations(), test.covariates())?.mean,
        })
    };
    match method {
        Method::KrigingTrue => {
            let model = truth.ok_or_else(|| CliError::config("kriging-true needs a design with a known covariance"))?;
            kriging(model)
        }
        Method::KrigingMle => kriging(&estimate(spec, train)?),
        Method::Frk => {
            let model = estimate(spec, train)?;
            let basis = spec.basis().build(train.locations())?;
            let phi_train = basis.evaluate(train.locations())?;
            let phi_test = basis.evaluate(test.locations())?;
            let sigma_k = projected_random_effect_cov(train.locations(), &phi_train, &model, 1e-8)?;
            let noise = Array1::from_elem(train.len(), model.tau2.max(1e-10 * model.sigma2));
            Ok(Predictions {
                train: frk_predict(train, &phi_train, &sigma_k, &noise, &phi_train, train.covariates())?,
                test: frk_predict(train, &phi_train, &sigma_k, &noise, &phi_test, test.covariates())?,
            })
        }
        Method::DeepKriging | Method::DnnIntercept | Method::DnnCoords => {
            let (model, _) = DeepKrigingModel::fit_regression(&network_spec(spec, method, Task::Regression, seed), train)?;
            Ok(Predictions { train: model.predict_dataset(train)?, test: model.predict_dataset(test)? })
        }
    }
}

/// Fit every method on one split and record RMSE and MAPE on both parts.
fn evaluate_split(
    spec: &ExperimentSpec,
    unit: usize,
    seed: u64,
    train: &SpatialDataset,
    test: &SpatialDataset,
    truth: Option<&CovarianceModel>,
) -> Result<(Report, Vec<(Method, Predictions)>)> {
    let mut report = Report::default();
    let mut all = Vec::new();
    for &method in &spec.methods {
        let (pred, secs) = timed(|| fit_predict(spec, method, train, test, seed, truth))?;
        let name = method.as_str();
        for (split, p, data) in [("train", &pred.train, train), ("test", &pred.test, test)] {
            report.push(unit, name, split, "rmse", spatial::rmse(p, data.responses())?);
            report.push(unit, name, split, "mape", spatial::mape(p, data.responses())?);
        }
        report.time(unit, name, secs);
        all.push((method, pred));
    }
    Ok((report, all))
}

fn collect(parts: Vec<Report>) -> Report {
    let mut report = Report::default();
    for p in parts {
        report.extend(p);
    }
    report
}

fn sim1d(spec: &ExperimentSpec) -> Result<Report> {
    let parts: Vec<Report> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| -> Result<Report> {
            let seed = derive_seed(spec.seed, r as u64);
            let cfg = GpConfig { n: spec.n, seed, ..GpConfig::default() };
            let data = sample_gp_1d(&cfg)?;
            let (tr, te) = random_split(spec.n, spec.train_size, seed)?;
            let (train, test) = (data.select(&tr), data.select(&te));
            let truth = cfg.model()?;
            let (mut report, preds) = evaluate_split(spec, r, seed, &train, &test, Some(&truth))?;
            report.seeds.push(seed);
            if r == 0 {
                let mut plot = PlotData::new("sim1d_predictions", PlotKind::Curve, &["s", "value"]);
                for (i, &s) in train.locations().column(0).iter().enumerate() {
                    plot.push("data", &[s, train.responses()[i]]);
                }
                for (method, p) in &preds {
                    let mut pts: Vec<(f64, f64)> = train.locations().column(0).iter().copied().zip(p.train.iter().copied()).collect();
                    pts.extend(test.locations().column(0).iter().copied().zip(p.test.iter().copied()));
                    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                    for (s, v) in pts {
                        plot.push(method.as_str(), &[s, v]);
                    }
                }
                report.plots.push(plot);
            }
            Ok(report)
        })
        .collect::<Result<_>>()?;
    Ok(collect(parts))
}

fn sim2d(spec: &ExperimentSpec) -> Result<Report> {
    let side = (spec.n as f64).sqrt().round() as usize;
    if side * side != spec.n {
        return Err(CliError::config(format!("sim2d needs a square n, got {}", spec.n)));
    }
    let mut report = cross_validate(spec, &nonstat_2d(side)?)?;
    let mut box_plot = PlotData::new("sim2d_test_rmse", PlotKind::Boxplot, &["fold", "rmse"]);
    for row in report.metrics.iter().filter(|r| r.split == "test" && r.metric == "rmse") {
        box_plot.push(&row.method, &[row.unit as f64, row.value]);
    }
    report.plots.push(box_plot);
    Ok(report)
}

/// K-fold cross-validation of every method in `spec` on `data`, folds in
/// parallel.
pub fn cross_validate(spec: &ExperimentSpec, data: &SpatialDataset) -> Result<Report> {
    let folds = kfold_split(data.len(), spec.folds, spec.seed)?;
    let parts: Vec<Report> = (0..spec.folds)
        .into_par_iter()
        .map(|f| -> Result<Report> {
            let seed = derive_seed(spec.seed, f as u64);
            let (tr, te) = folds.split(f);
            let (mut report, _) = evaluate_split(spec, f, seed, &data.select(&tr), &data.select(&te), None)?;
            report.seeds.push(seed);
            Ok(report)
        })
        .collect::<Result<_>>()?;
    Ok(collect(parts))
}

pub fn ddsp_config(spec: &ExperimentSpec, seed: u64) -> DdspConfig {
    DdspConfig { ensemble: spec.ensemble, cuts: spec.cuts, network: spec.network.clone(), basis: spec.basis(), seed: derive_seed(seed, Method::DeepKriging.id()) }
}

/// Largest deviations from a proper density over all target locations:
/// bin-probability row sums, integrals, and the worst decrease of the cdf
/// over its merged knot table.
fn density_checks(d: &DensityEstimate) -> Result<(f64, f64, f64)> {
    let mut row_sum = 0.0f64;
    for m in d.members() {
        for row in m.probabilities.axis_iter(Axis(0)) {
            row_sum = row_sum.max((row.sum() - 1.0).abs());
        }
    }
    let mut integral = 0.0f64;
    let mut decrease = 0.0f64;
    for loc in 0..d.n_locations() {
        integral = integral.max((d.integral(loc)? - 1.0).abs());
        let (_, values) = d.cdf_table(loc)?;
        for w in values.windows(2) {
            decrease = decrease.max(w[0] - w[1]);
        }
    }
    Ok((row_sum, integral, decrease))
}

fn normal_pdf(y: f64, mean: f64, sd: f64) -> f64 {
    let t = (y - mean) / sd;
    (-0.5 * t * t).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

fn mixture_uq(spec: &ExperimentSpec) -> Result<Report> {
    let cfg = MixtureConfig { n: spec.n, seed: spec.seed, ..MixtureConfig::default() };
    let data = gaussian_mixture_1d(&cfg)?.dataset;
    let (tr, te) = random_split(spec.n, spec.train_size, spec.seed)?;
    let (train, test) = (data.select(&tr), data.select(&te));
    let levels = percentile_levels();
    let mut report = Report { seeds: vec![spec.seed], ..Report::default() };
    let mut bands = PlotData::new("mixture_bands", PlotKind::Curve, &["s", "lower", "median", "upper"]);
    let mut density = PlotData::new("mixture_density", PlotKind::Density, &["s", "y", "pdf"]);
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..test.len()).collect();
        idx.sort_by(|&a, &b| test.locations()[[a, 0]].total_cmp(&test.locations()[[b, 0]]));
        idx
    };
    let shown: Vec<usize> = [0.1, 0.5, 0.9].iter().map(|q| order[((test.len() - 1) as f64 * q) as usize]).collect();
    let (lo, hi) = deepkriging::ddsp::support(train.responses().as_slice().expect("contiguous"))?;
    let grid: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    for &method in &spec.methods {
        let name = method.as_str();
        let (quantiles, mean, pdf): (Array2<f64>, Array1<f64>, Box<dyn Fn(usize, f64) -> Result<f64>>) = match method {
            Method::DeepKriging => {
                let ((model, d), secs) = timed(|| {
                    let model = DdspModel::fit(&train, &ddsp_config(spec, spec.seed))?;
                    let d = model.predict(test.locations(), test.covariates())?;
                    Ok((model, d))
                })?;
                report.time(0, name, secs);
                let (row_sum, integral, decrease) = density_checks(&d)?;
                report.push(0, name, "test", "max_row_sum_error", row_sum);
                report.push(0, name, "test", "max_integral_error", integral);
                report.push(0, name, "test", "max_cdf_decrease", decrease);
                report.push(0, name, "test", "bins", model.partitions()[0].bins() as f64);
                let q = d.quantile_matrix(&levels)?;
                let mean = Array1::from_iter((0..d.n_locations()).map(|loc| mean_of(&d, loc)));
                (q, mean, Box::new(move |loc, y| Ok(d.pdf(loc, y.clamp(lo, hi))?)))
            }
            Method::KrigingMle => {
                let ((model, p), secs) = timed(|| {
                    let model = estimate(spec, &train)?;
                    let p = UniversalKriging::fit(&train, &model)?.predict(test.locations(), test.covariates())?;
                    Ok((model, p))
                })?;
                report.time(0, name, secs);
                let sd = p.observation_sd(model.tau2);
                let q = gaussian_quantiles(&p.mean, &sd, &levels)?;
                let mean = p.mean.clone();
                (q, mean, Box::new(move |loc, y| Ok(normal_pdf(y, p.mean[loc], sd[loc]))))
            }
            _ => unreachable!("validated method list"),
        };
        let score = aqtl(&levels, &quantiles, test.responses())?;
        report.push(0, name, "test", "aqtl", score.raw);
        report.push(0, name, "test", "aqtl_per_obs", score.per_observation);
        report.push(0, name, "test", "rmse", spatial::rmse(&mean, test.responses())?);
        for &i in &order {
            bands.push(name, &[test.locations()[[i, 0]], quantiles[[i, 1]], quantiles[[i, 49]], quantiles[[i, 97]]]);
        }
        for &i in &shown {
            for &y in &grid {
                density.push(name, &[test.locations()[[i, 0]], y, pdf(i, y)?]);
            }
        }
    }
    // quantile loss of the true conditional quantiles: the floor for any method
    let truth = Array2::from_shape_fn((test.len(), levels.len()), |(i, j)| cfg.quantile(test.locations()[[i, 0]], levels[j]));
    let floor = aqtl(&levels, &truth, test.responses())?;
    report.push(0, "truth", "test", "aqtl", floor.raw);
    report.push(0, "truth", "test", "aqtl_per_obs", floor.per_observation);
    for &i in &shown {
        let s = test.locations()[[i, 0]];
        let (a, b) = MixtureConfig::branch_means(s);
        for &y in &grid {
            let f = cfg.p * normal_pdf(y, a, cfg.tau1) + (1.0 - cfg.p) * normal_pdf(y, b, cfg.tau2);
            density.push("truth", &[s, y, f]);
        }
    }
    report.plots.push(bands);
    report.plots.push(density);
    Ok(report)
}

/// Mean of the ensemble density: each histogram bin contributes its midpoint.
fn mean_of(d: &DensityEstimate, loc: usize) -> f64 {
    let total: f64 = d
        .members()
        .iter()
        .map(|m| {
            let edges = m.partition.edges();
            m.probabilities.row(loc).iter().enumerate().map(|(b, p)| p * 0.5 * (edges[b] + edges[b + 1])).sum::<f64>()
        })
        .sum();
    total / d.ensemble_size() as f64
}

fn probe_data(spec: &ExperimentSpec) -> Result<SpatialDataset> {
    Ok(match spec.design {
        ProbeDesign::Cosine => thresholded_cosine_1d(&CosineConfig { n: spec.n, seed: spec.seed, ..CosineConfig::default() })?,
        ProbeDesign::Mixture => gaussian_mixture_1d(&MixtureConfig { n: spec.n, seed: spec.seed, ..MixtureConfig::default() })?.dataset,
    })
}

fn probe(spec: &ExperimentSpec) -> Result<Report> {
    let data = probe_data(spec)?;
    let probe_index = spec.n / 2 - 1;
    let dropped = probe_index + 1;
    let z = data.responses();
    let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let m = spec.probe_values;
    let values: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    let mut report = Report { seeds: vec![spec.seed], ..Report::default() };
    let mut curve = PlotData::new("probe_curve", PlotKind::Curve, &["value", "prediction"]);
    for &method in &spec.methods {
        let name = method.as_str();
        let probe_method = match method {
            // the covariance is estimated once on the unperturbed data and then held fixed
            Method::KrigingMle => {
                let keep: Vec<usize> = (0..data.len()).filter(|&i| i != dropped).collect();
                ProbeMethod::Kriging(estimate(spec, &data.select(&keep))?)
            }
            Method::DeepKriging => ProbeMethod::DeepKriging(network_spec(spec, method, Task::Regression, spec.seed)),
            _ => unreachable!("validated method list"),
        };
        let (c, secs) = timed(|| Ok(nonlinearity_probe(&data, probe_index, dropped, &values, &probe_method)?))?;
        report.time(0, name, secs);
        report.push(0, name, "probe", "nonlinearity", c.nonlinearity);
        let span = c.predictions.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v)) - c.predictions.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        report.push(0, name, "probe", "prediction_range", span);
        for (v, p) in c.values.iter().zip(&c.predictions) {
            curve.push(name, &[*v, *p]);
        }
    }
    report.plots.push(curve);
    Ok(report)
}

fn scaling(spec: &ExperimentSpec) -> Result<Report> {
    let mut report = Report::default();
    let mut curve = PlotData::new("scaling_seconds", PlotKind::Curve, &["n", "seconds"]);
    // sizes run one after another so wall times are not shared between fits
    for &n in &spec.sizes {
        let seed = derive_seed(spec.seed, n as u64);
        report.seeds.push(seed);
        let data = thresholded_cosine_1d(&CosineConfig { n, seed, ..CosineConfig::default() })?;
        for &method in &spec.methods {
            let name = method.as_str();
            let secs = match method {
                Method::DeepKriging => {
                    let ms = network_spec(spec, method, Task::Regression, seed);
                    timed(|| Ok(DeepKrigingModel::fit_regression(&ms, &data)?))?.1
                }
                Method::KrigingMle => timed(|| Ok(UniversalKriging::fit(&data, &estimate(spec, &data)?)?))?.1,
                _ => unreachable!("validated method list"),
            };
            report.time(n, name, secs);
            curve.push(name, &[n as f64, secs]);
        }
    }
    report.plots.push(curve);
    Ok(report)
}

/// Least-squares slope of `log(seconds)` on `log(n)` for one method.
pub fn log_log_slope(report: &Report, method: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = report.timings.iter().filter(|t| t.method == method).map(|t| ((t.unit as f64).ln(), t.seconds.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Station data and grid cells for the air-quality study: the configured
/// files when given, the bundled fixture otherwise.
pub fn load_pm25(spec: &ExperimentSpec) -> Result<(SpatialDataset, GridCells)> {
    let (stations_path, grid_path) = match (&spec.fixture, &spec.grid) {
        (Some(s), Some(g)) => (s.clone(), g.clone()),
        (None, None) => {
            let dir = spec.output.join("input");
            crate::report::create_dir(&dir)?;
            let s = dir.join("pm25_fixture.csv");
            let g = dir.join("pm25_grid.csv");
            crate::report::write_text(&s, fixture::STATIONS_CSV)?;
            crate::report::write_text(&g, fixture::GRID_CSV)?;
            (s, g)
        }
        _ => return Err(CliError::config("fixture and grid must be given together")),
    };
    let names: Vec<String> = fixture::COVARIATES.iter().map(|s| s.to_string()).collect();
    let coords = vec!["lon".to_string(), "lat".to_string()];
    let schema = CsvSchema { coords: coords.clone(), response: "pm25".into(), covariates: names.clone() };
    let stations = spatial::load_csv(&stations_path, &schema)?;
    let (centers, covariates) = spatial::load_points_csv(&grid_path, &coords, &names)?;
    Ok((stations, GridCells { centers, covariates, names }))
}

fn pm25_fixture(spec: &ExperimentSpec) -> Result<Report> {
    let (stations, grid) = load_pm25(spec)?;
    let matched = grid_match(&stations, &grid)?;
    let cells = matched.dataset;
    let mut report = Report::default();
    report.push(0, "grid_match", "all", "stations", stations.len() as f64);
    report.push(0, "grid_match", "all", "cells", cells.len() as f64);
    report.push(0, "grid_match", "all", "matched_stations", matched.station_counts.iter().sum::<usize>() as f64);
    let labels = classify_threshold(cells.responses(), spec.threshold);
    report.push(0, "grid_match", "all", "above_threshold", labels.iter().sum::<usize>() as f64);
    let folds = kfold_split(cells.len(), spec.folds, spec.seed)?;
    let parts: Vec<Report> = (0..spec.folds)
        .into_par_iter()
        .map(|f| -> Result<Report> {
            let seed = derive_seed(spec.seed, f as u64);
            let (tr, te) = folds.split(f);
            let (train, test) = (cells.select(&tr), cells.select(&te));
            let test_labels: Vec<usize> = te.iter().map(|&i| labels[i]).collect();
            let train_labels: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
            let mut r = Report { seeds: vec![seed], ..Report::default() };
            for &method in &spec.methods {
                let name = method.as_str();
                let (pred, secs) = timed(|| fit_predict(spec, method, &train, &test, seed, None))?;
                r.time(f, name, secs);
                r.push(f, name, "test", "mse", spatial::mse(&pred.test, test.responses())?);
                r.push(f, name, "test", "mae", spatial::mae(&pred.test, test.responses())?);
                let classes = match method {
                    // Kriging has no classifier: threshold its continuous prediction
                    Method::KrigingMle => classify_threshold(&pred.test, spec.threshold),
                    _ => {
                        let ms = network_spec(spec, method, Task::Classification { classes: 2 }, derive_seed(seed, 99));
                        let (clf, _) = DeepKrigingModel::fit(&ms, &train, &Target::Labels(train_labels.clone()))?;
                        clf.predict_classes(test.locations(), test.covariates())?
                    }
                };
                r.push(f, name, "test", "accuracy", spatial::accuracy(&classes, &test_labels)?);
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    report.extend(collect(parts));
    report.seeds.insert(0, spec.seed);
    pm25_maps(spec, &cells, &grid, &mut report)?;
    Ok(report)
}

/// Maps over every grid cell from models trained on all occupied cells:
/// point predictions, the exceedance risk `P(pm25 > threshold)` and three
/// predictive quantiles.
fn pm25_maps(spec: &ExperimentSpec, cells: &SpatialDataset, grid: &GridCells, report: &mut Report) -> Result<()> {
    let mut surface = PlotData::new("pm25_surface", PlotKind::Surface, &["lon", "lat", "value"]);
    let cell = |i: usize| (grid.centers[[i, 0]], grid.centers[[i, 1]]);
    for &method in &spec.methods {
        let pred = match method {
            Method::KrigingMle => UniversalKriging::fit(cells, &estimate(spec, cells)?)?.predict(&grid.centers, &grid.covariates)?.mean,
            _ => {
                let (m, _) = DeepKrigingModel::fit_regression(&network_spec(spec, method, Task::Regression, spec.seed), cells)?;
                m.predict_values(&grid.centers, &grid.covariates)?
            }
        };
        for (i, v) in pred.iter().enumerate() {
            let (x, y) = cell(i);
            surface.push(method.as_str(), &[x, y, *v]);
        }
    }
    let ((model, density), secs) = timed(|| {
        let model = DdspModel::fit(cells, &ddsp_config(spec, spec.seed))?;
        let d = model.predict(&grid.centers, &grid.covariates)?;
        Ok((model, d))
    })?;
    report.time(0, "ddsp", secs);
    let (lo, hi) = density.support();
    let (row_sum, integral, _) = density_checks(&density)?;
    report.push(0, "ddsp", "grid", "max_row_sum_error", row_sum);
    report.push(0, "ddsp", "grid", "max_integral_error", integral);
    report.push(0, "ddsp", "grid", "bins", model.partitions()[0].bins() as f64);
    let levels = [0.05, 0.5, 0.95];
    let q = density.quantile_matrix(&levels)?;
    let mut risk_sum = 0.0;
    for i in 0..density.n_locations() {
        let (x, y) = cell(i);
        let risk = 1.0 - density.cdf(i, spec.threshold.clamp(lo, hi))?;
        risk_sum += risk;
        surface.push("risk", &[x, y, risk]);
        for (j, name) in ["q05", "q50", "q95"].iter().enumerate() {
            surface.push(name, &[x, y, q[[i, j]]]);
        }
    }
    report.push(0, "ddsp", "grid", "mean_risk", risk_sum / density.n_locations() as f64);
    for (i, s) in cells.locations().rows().into_iter().enumerate() {
        surface.push("observed", &[s[0], s[1], cells.responses()[i]]);
    }
    report.plots.push(surface);
    Ok(())
}
