//! The DeepKriging model: a dense network over covariates concatenated with
//! the multi-resolution basis embedding of the coordinates, together with
//! the baseline networks and the nonlinearity probe.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::basis::{self, BasisSystem, DomainBox, Kernel};
use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::kriging::UniversalKriging;
use crate::nn::{Checkpoint, LayerSpec, Loss, NetworkState, Target, TrainConfig};
use crate::rng;
use crate::spatial::{Scaler, SpatialDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

/// What the network sees besides the (min-max scaled) covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Covariates and the pruned basis embedding.
    Embedding,
    /// A constant one and nothing else.
    InterceptOnly,
    /// A constant one, covariates and min-max scaled coordinates.
    Coordinates,
}

/// Basis settings for the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub kernel: Kernel,
    /// `None` picks the level count from the training size.
    pub levels: Option<usize>,
    /// `None` uses the padded bounding box of the training locations.
    pub domain: Option<DomainBox>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig { kernel: Kernel::Wendland, levels: None, domain: None }
    }
}

impl BasisConfig {
    pub fn with_levels(levels: usize) -> Self {
        BasisConfig { levels: Some(levels), ..Self::default() }
    }

    pub fn build(&self, locations: &Array2<f64>) -> Result<BasisSystem> {
        match &self.domain {
            Some(domain) => {
                let levels = match self.levels {
                    Some(h) => h,
                    None => basis::num_levels(locations.nrows(), locations.ncols())?,
                };
                BasisSystem::new(levels, self.kernel, domain.clone())
            }
            None => BasisSystem::for_locations(locations, self.kernel, self.levels),
        }
    }
}

/// Network shape and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkOptions {
    pub hidden_layers: usize,
    pub width: usize,
    /// Dropout rate, `None` for no dropout layers.
    pub dropout: Option<f64>,
    pub batchnorm: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds initialization, shuffling and dropout.
    pub seed: u64,
}

impl Default for NetworkOptions {
    /// Three hidden layers of 100 units, dropout 0.5, two batch
    /// normalization layers, 200 epochs, batch size 32.
    fn default() -> Self {
        NetworkOptions { hidden_layers: 3, width: 100, dropout: Some(0.5), batchnorm: true, epochs: 200, batch_size: 32, learning_rate: 1e-3, seed: 0 }
    }
}

impl NetworkOptions {
    /// Settings for the 1-D Gaussian process design: seven hidden layers,
    /// no dropout or batch normalization, 100 epochs, batch size 32.
    pub fn gp_1d() -> Self {
        NetworkOptions { hidden_layers: 7, dropout: None, batchnorm: false, epochs: 100, batch_size: 32, ..Self::default() }
    }

    /// Settings for the 2-D non-stationary design: four hidden layers, no
    /// dropout or batch normalization, 600 epochs, batch size 64.
    pub fn nonstat_2d() -> Self {
        NetworkOptions { hidden_layers: 4, dropout: None, batchnorm: false, epochs: 600, batch_size: 64, ..Self::default() }
    }

    /// Baseline network for the 2-D design: as [`NetworkOptions::nonstat_2d`]
    /// with three hidden layers.
    pub fn nonstat_2d_baseline() -> Self {
        NetworkOptions { hidden_layers: 3, ..Self::nonstat_2d() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NetworkOptions { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::invalid("hidden layer count and width must be >= 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be >= 1"));
        }
        if let Some(rate) = self.dropout {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }

    /// Layer stack: dropout and batch normalization after the first hidden
    /// layer, dropout after the middle ones, batch normalization after the
    /// last; then the task head.
    pub fn layer_stack(&self, task: Task) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let h = self.hidden_layers;
        let mut specs = Vec::new();
        for i in 0..h {
            specs.push(LayerSpec::Dense { width: self.width });
            specs.push(LayerSpec::Relu);
            let middle = i > 0 && i + 1 < h;
            if i == 0 || middle {
                if let Some(rate) = self.dropout {
                    specs.push(LayerSpec::Dropout { rate });
                }
            }
            if self.batchnorm && (i == 0 || (i + 1 == h && h > 1)) {
                specs.push(LayerSpec::BatchNorm);
            }
        }
        match task {
            Task::Regression => specs.extend([LayerSpec::Dense { width: 1 }, LayerSpec::Identity]),
            Task::Classification { classes } => {
                if classes < 2 {
                    return Err(Error::invalid("classification needs at least 2 classes"));
                }
                specs.extend([LayerSpec::Dense { width: classes }, LayerSpec::Softmax]);
            }
        }
        Ok(specs)
    }

    pub fn train_config(&self, loss: Loss) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            ..TrainConfig::new(loss, self.epochs, self.batch_size, rng::derive_seed(self.seed, 1))
        }
    }
}

/// Network over `P + K'` inputs with the default stack for `task`.
pub fn build_default(p: usize, k_prime: usize, task: Task, options: &NetworkOptions) -> Result<NetworkState> {
    if p + k_prime == 0 {
        return Err(Error::invalid("network needs at least one input feature"));
    }
    NetworkState::init(p + k_prime, &options.layer_stack(task)?, options.seed)
}

/// Frozen feature pipeline: covariate scaler, basis system and pruning mask,
/// all fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    kind: FeatureKind,
    covariate_scaler: Scaler,
    coordinate_scaler: Option<Scaler>,
    basis: Option<BasisSystem>,
    kept_columns: Vec<usize>,
}

impl FeatureMap {
    pub fn fit(kind: FeatureKind, locations: &Array2<f64>, covariates: &Array2<f64>, basis: &BasisConfig) -> Result<Self> {
        let covariate_scaler = Scaler::fit(covariates);
        let (basis, kept_columns, coordinate_scaler) = match kind {
            FeatureKind::Embedding => {
                let system = basis.build(locations)?;
                let e = system.embed(locations)?;
                (Some(system), e.kept_columns, None)
            }
            FeatureKind::Coordinates => (None, Vec::new(), Some(Scaler::fit(locations))),
            FeatureKind::InterceptOnly => (None, Vec::new(), None),
        };
        Ok(FeatureMap { kind, covariate_scaler, coordinate_scaler, basis, kept_columns })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn basis(&self) -> Option<&BasisSystem> {
        self.basis.as_ref()
    }

    pub fn kept_columns(&self) -> &[usize] {
        &self.kept_columns
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_scaler.width()
    }

    pub fn width(&self) -> usize {
        match self.kind {
            FeatureKind::Embedding => self.n_covariates() + self.kept_columns.len(),
            FeatureKind::InterceptOnly => 1,
            FeatureKind::Coordinates => 1 + self.n_covariates() + self.coordinate_scaler.as_ref().map_or(0, Scaler::width),
        }
    }

    pub fn transform(&self, locations: &Array2<f64>, covariates: &Array2<f64>) -> Result<Array2<f64>> {
        let n = locations.nrows();
        if covariates.nrows() != n {
            return Err(Error::ShapeMismatch { what: "covariate rows", expected: n, found: covariates.nrows() });
        }
        let x = self.covariate_scaler.transform(covariates)?;
        match self.kind {
            FeatureKind::Embedding => {
                let system = self.basis.as_ref().expect("embedding features carry a basis");
                let phi = system.embed_with(locations, &self.kept_columns)?;
                basis::concat_features(&x, &phi)
            }
            FeatureKind::InterceptOnly => Ok(basis::intercept(n)),
            FeatureKind::Coordinates => {
                let coords = self.coordinate_scaler.as_ref().expect("coordinate features carry a scaler").transform(locations)?;
                let head = basis::concat_features(&basis::intercept(n), &x)?;
                basis::concat_features(&head, &coords)
            }
        }
    }
}

/// Everything needed to fit a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub features: FeatureKind,
    pub basis: BasisConfig,
    pub network: NetworkOptions,
    pub task: Task,
    pub loss: Loss,
    /// Regression only: train on `(y - mean) / sd` of the training
    /// responses and map predictions back.
    pub standardize: bool,
}

impl ModelSpec {
    pub fn regression(network: NetworkOptions, basis: BasisConfig) -> Self {
        ModelSpec { features: FeatureKind::Embedding, basis, network, task: Task::Regression, loss: Loss::Mse, standardize: true }
    }

    pub fn classification(classes: usize, network: NetworkOptions, basis: BasisConfig) -> Self {
        ModelSpec {
            features: FeatureKind::Embedding,
            basis,
            network,
            task: Task::Classification { classes },
            loss: Loss::CrossEntropy,
            standardize: false,
        }
    }

    /// Baseline network on the intercept (optionally with coordinates) instead of the embedding.
    pub fn baseline(variant: FeatureKind, task: Task, network: NetworkOptions) -> Self {
        let loss = match task {
            Task::Regression => Loss::Mse,
            Task::Classification { .. } => Loss::CrossEntropy,
        };
        ModelSpec { features: variant, basis: BasisConfig::default(), network, task, loss, standardize: task == Task::Regression }
    }
}

/// Affine map between responses and the network's training scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseScale {
    pub mean: f64,
    pub sd: f64,
}

impl ResponseScale {
    /// Sample mean and standard deviation; a constant response keeps unit scale.
    pub fn fit(y: &Array2<f64>) -> Self {
        let n = y.len() as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        ResponseScale { mean, sd }
    }

    pub fn forward(&self, y: &Array2<f64>) -> Array2<f64> {
        y.mapv(|v| (v - self.mean) / self.sd)
    }

    pub fn inverse(&self, y: &Array2<f64>) -> Array2<f64> {
        y.mapv(|v| v * self.sd + self.mean)
    }
}

/// Fitted model: frozen features, trained network, task.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepKrigingModel {
    features: FeatureMap,
    network: NetworkState,
    task: Task,
    response: Option<ResponseScale>,
}

/// Serialized form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub task: Task,
    pub features: FeatureMap,
    pub network: Checkpoint,
    #[serde(default)]
    pub response: Option<ResponseScale>,
}

impl DeepKrigingModel {
    /// Fit the feature pipeline on `train` and train the network on
    /// `target` (real values for regression, labels for classification).
    /// Returns the model and the per-epoch training loss.
    pub fn fit(spec: &ModelSpec, train: &SpatialDataset, target: &Target) -> Result<(Self, Vec<f64>)> {
        let features = FeatureMap::fit(spec.features, train.locations(), train.covariates(), &spec.basis)?;
        let x = features.transform(train.locations(), train.covariates())?;
        Self::fit_features(spec, features, &x, target)
    }

    /// Train on a precomputed feature matrix produced by `features`.
    pub fn fit_features(spec: &ModelSpec, features: FeatureMap, x: &Array2<f64>, target: &Target) -> Result<(Self, Vec<f64>)> {
        match (spec.task, target) {
            (Task::Regression, Target::Values(_)) => {}
            (Task::Classification { classes }, Target::Labels(l)) => {
                if l.iter().any(|&c| c >= classes) {
                    return Err(Error::invalid(format!("labels must be below {classes}")));
                }
            }
            _ => return Err(Error::invalid("target kind does not match the task")),
        }
        let (response, scaled) = match target {
            Target::Values(y) if spec.standardize => {
                let r = ResponseScale::fit(y);
                (Some(r), Target::Values(r.forward(y)))
            }
            _ => (None, target.clone()),
        };
        let mut network = NetworkState::init(x.ncols(), &spec.network.layer_stack(spec.task)?, spec.network.seed)?;
        let history = network.train(x, &scaled, &spec.network.train_config(spec.loss))?;
        Ok((DeepKrigingModel { features, network, task: spec.task, response }, history))
    }

    /// Regression fit on the dataset's own responses.
    pub fn fit_regression(spec: &ModelSpec, train: &SpatialDataset) -> Result<(Self, Vec<f64>)> {
        let y = train.responses().clone().insert_axis(Axis(1));
        Self::fit(spec, train, &Target::Values(y))
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn network(&self) -> &NetworkState {
        &self.network
    }

    pub fn response_scale(&self) -> Option<ResponseScale> {
        self.response
    }

    /// Network output on the response scale: one column for regression,
    /// class probabilities otherwise.
    pub fn predict(&self, locations: &Array2<f64>, covariates: &Array2<f64>) -> Result<Array2<f64>> {
        if covariates.ncols() != self.features.n_covariates() {
            return Err(Error::ShapeMismatch { what: "covariate width", expected: self.features.n_covariates(), found: covariates.ncols() });
        }
        let x = self.features.transform(locations, covariates)?;
        let out = self.network.forward_infer(&x)?;
        Ok(match &self.response {
            Some(r) => r.inverse(&out),
            None => out,
        })
    }

    pub fn predict_values(&self, locations: &Array2<f64>, covariates: &Array2<f64>) -> Result<Array1<f64>> {
        if self.task != Task::Regression {
            return Err(Error::invalid("predict_values needs a regression model"));
        }
        Ok(self.predict(locations, covariates)?.remove_axis(Axis(1)))
    }

    pub fn predict_dataset(&self, data: &SpatialDataset) -> Result<Array1<f64>> {
        self.predict_values(data.locations(), data.covariates())
    }

    /// Most probable class per row.
    pub fn predict_classes(&self, locations: &Array2<f64>, covariates: &Array2<f64>) -> Result<Vec<usize>> {
        let p = self.predict(locations, covariates)?;
        Ok(p.rows().into_iter().map(|r| argmax(r.as_slice().expect("standard layout"))).collect())
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint { task: self.task, features: self.features.clone(), network: self.network.to_checkpoint(), response: self.response }
    }

    pub fn from_checkpoint(cp: &ModelCheckpoint) -> Result<Self> {
        let network = NetworkState::from_checkpoint(&cp.network)?;
        if network.input_width() != cp.features.width() {
            return Err(Error::ShapeMismatch { what: "checkpoint input width", expected: cp.features.width(), found: network.input_width() });
        }
        Ok(DeepKrigingModel { features: cp.features.clone(), network, task: cp.task, response: cp.response })
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Label 1 where `z > threshold` (strictly), else 0.
pub fn classify_threshold(z: &Array1<f64>, threshold: f64) -> Vec<usize> {
    z.iter().map(|&v| usize::from(v > threshold)).collect()
}

/// Method refitted at every probe value.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeMethod {
    /// Universal Kriging with a fixed covariance model.
    Kriging(CovarianceModel),
    DeepKriging(ModelSpec),
}

/// Prediction at the dropped site as a function of the probed observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCurve {
    pub values: Vec<f64>,
    pub predictions: Vec<f64>,
    /// Largest absolute residual from the least-squares line through the curve.
    pub nonlinearity: f64,
}

/// Max absolute residual of the least-squares affine fit of `y` on `x`.
pub fn affine_residual(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).abs()).fold(0.0, f64::max)
}

/// Replace observation `probe` by each of `values`, drop observation
/// `dropped` from training, refit and record the prediction at the dropped
/// site. DeepKriging refits reuse the same seed, so every refit starts from
/// the same initial weights.
pub fn nonlinearity_probe(data: &SpatialDataset, probe: usize, dropped: usize, values: &[f64], method: &ProbeMethod) -> Result<ProbeCurve> {
    let n = data.len();
    if probe >= n || dropped >= n || probe == dropped {
        return Err(Error::invalid(format!("probe {probe} and dropped {dropped} must be distinct indices below {n}")));
    }
    if values.len() < 3 {
        return Err(Error::invalid("the probe needs at least 3 values"));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != dropped).collect();
    let probe_row = keep.iter().position(|&i| i == probe).expect("probe kept");
    let base = data.select(&keep);
    let target_loc = data.locations().select(Axis(0), &[dropped]);
    let target_cov = data.covariates().select(Axis(0), &[dropped]);
    let mut predictions = Vec::with_capacity(values.len());
    for &v in values {
        let mut z = base.responses().clone();
        z[probe_row] = v;
        let train = base.with_responses(z)?;
        let pred = match method {
            ProbeMethod::Kriging(model) => UniversalKriging::fit(&train, model)?.predict(&target_loc, &target_cov)?.mean[0],
            ProbeMethod::DeepKriging(spec) => {
                let (m, _) = DeepKrigingModel::fit_regression(spec, &train)?;
                m.predict_values(&target_loc, &target_cov)?[0]
            }
        };
        predictions.push(pred);
    }
    let nonlinearity = affine_residual(values, &predictions);
    Ok(ProbeCurve { values: values.to_vec(), predictions, nonlinearity })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stack_order() {
        let specs = NetworkOptions::default().layer_stack(Task::Regression).unwrap();
        use LayerSpec::*;
        let want = vec![
            Dense { width: 100 },
            Relu,
            Dropout { rate: 0.5 },
            BatchNorm,
            Dense { width: 100 },
            Relu,
            Dropout { rate: 0.5 },
            Dense { width: 100 },
            Relu,
            BatchNorm,
            Dense { width: 1 },
            Identity,
        ];
        assert_eq!(specs, want);
    }

    #[test]
    fn override_stacks() {
        let s = NetworkOptions::gp_1d().layer_stack(Task::Regression).unwrap();
        assert_eq!(s.iter().filter(|l| matches!(l, LayerSpec::Dense { width: 100 })).count(), 7);
        assert!(!s.iter().any(|l| matches!(l, LayerSpec::Dropout { .. })));
        let o = NetworkOptions::gp_1d();
        assert_eq!((o.epochs, o.batch_size), (100, 32));
        let s2 = NetworkOptions::nonstat_2d();
        assert_eq!((s2.hidden_layers, s2.batch_size), (4, 64));
        assert!(NetworkOptions { width: 0, ..NetworkOptions::default() }.layer_stack(Task::Regression).is_err());
        let c = NetworkOptions::default().layer_stack(Task::Classification { classes: 3 }).unwrap();
        assert_eq!(c[c.len() - 2..], [LayerSpec::Dense { width: 3 }, LayerSpec::Softmax]);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(classify_threshold(&Array1::from(vec![12.0, 5.0, 20.0]), 12.0), vec![0, 0, 1]);
    }

    #[test]
    fn affine_residual_of_a_line_is_zero() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        assert!(affine_residual(&x, &y) < 1e-14);
        assert!((affine_residual(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0]) - 2.0 / 3.0).abs() < 1e-14);
    }
}
