use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deepkriging::ddsp::{percentile_levels, DdspModel};
use deepkriging::model::{classify_threshold, ModelCheckpoint};
use deepkriging::nn::Target;
use deepkriging::nngp::{induced_cov, Activation, NngpConfig};
use deepkriging::simulate::{gaussian_mixture_1d, nonstat_2d, sample_gp_1d, thresholded_cosine_1d, CosineConfig, GpConfig, MixtureConfig};
use deepkriging::spatial::{self, CsvSchema, SpatialDataset};
use deepkriging::{DeepKrigingModel, Task};
use deepkriging_cli::config::Settings;
use deepkriging_cli::error::{CliError, Result};
use deepkriging_cli::experiments::{self, ExperimentName, ExperimentSpec, Method};
use deepkriging_cli::report::{self, Report};
use deepkriging_cli::fixture;
use ndarray::Array2;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "deepkriging", version, about = "Spatial prediction with basis-embedded neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run configuration shared by every subcommand.
#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[arg(long, global = true)]
    levels: Option<usize>,
    /// Comma-separated method list.
    #[arg(long, global = true)]
    methods: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory or file.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

impl Common {
    /// File values overridden by command-line values.
    fn settings(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::new(),
        };
        let mut flags = Settings::new();
        for pair in &self.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            flags.set(k, v)?;
        }
        let named: [(&str, Option<String>); 8] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("replicates", self.replicates.map(|v| v.to_string())),
            ("folds", self.folds.map(|v| v.to_string())),
            ("levels", self.levels.map(|v| v.to_string())),
            ("methods", self.methods.clone()),
            ("threads", self.threads.map(|v| v.to_string())),
            ("output", self.output.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                flags.set(k, &v)?;
            }
        }
        Ok(file.overridden_by(&flags))
    }
}

/// Column roles of an input CSV.
#[derive(Args, Clone)]
struct Schema {
    /// Input CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Coordinate columns.
    #[arg(long, value_delimiter = ',', default_value = "s")]
    coords: Vec<String>,
    #[arg(long, default_value = "z")]
    response: String,
    /// Covariate columns.
    #[arg(long = "covars", value_delimiter = ',')]
    covariates: Vec<String>,
}

impl Schema {
    fn load(&self) -> Result<SpatialDataset> {
        let schema = CsvSchema { coords: self.coords.clone(), response: self.response.clone(), covariates: self.covariates.clone() };
        Ok(spatial::load_csv(&self.input, &schema)?)
    }

    fn load_points(&self, path: &Path) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok(spatial::load_points_csv(path, &self.coords, &self.covariates)?)
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Design {
    Gp1d,
    Nonstat2d,
    Mixture,
    Cosine,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a benchmark dataset as CSV with a JSON sidecar.
    Simulate {
        #[arg(value_enum)]
        design: Design,
        /// Sample size; the 2-D design uses the nearest square.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the basis embedding of the input locations.
    Embed {
        #[command(flatten)]
        schema: Schema,
        #[command(flatten)]
        common: Common,
    },
    /// Train a DeepKriging model and write its checkpoint.
    Train {
        #[command(flatten)]
        schema: Schema,
        /// Train a classifier of `response > threshold` instead of a regression.
        #[arg(long)]
        classify: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict at new locations from a checkpoint.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        schema: Schema,
        #[command(flatten)]
        common: Common,
    },
    /// K-fold cross-validation of the configured methods.
    Crossval {
        #[command(flatten)]
        schema: Schema,
        #[command(flatten)]
        common: Common,
    },
    /// Predictive densities at target locations: quantile table and pdf grid.
    Density {
        #[command(flatten)]
        schema: Schema,
        /// Target locations; defaults to the training locations.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Nonlinearity probe on a simulated design.
    Probe {
        #[command(flatten)]
        common: Common,
    },
    /// Gram matrix of the kernel induced by an infinitely wide network.
    NngpGram {
        #[command(flatten)]
        schema: Schema,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value = "relu")]
        activation: String,
        #[arg(long, default_value_t = 0.1)]
        sigma_b2: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_w2: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Run a named experiment end to end.
    Experiment {
        /// sim1d, sim2d, mixture-uq, probe, scaling or pm25-fixture.
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Wall-time comparison over sample sizes.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Regenerate the bundled air-quality fixture files.
    Fixture {
        #[arg(long, default_value = "crates/cli/fixtures")]
        dir: PathBuf,
    },
}

fn log(msg: impl AsRef<str>) {
    eprintln!("deepkriging: {}", msg.as_ref());
}

fn output_dir(settings: &Settings, default: &str) -> PathBuf {
    settings.path("output").unwrap_or_else(|| PathBuf::from(default))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    report::write_text(path, &serde_json::to_string_pretty(value)?)
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::Io { path: path.into(), source: e })?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io { path: path.into(), source: e })
}

/// Spec for ad-hoc subcommands: experiment defaults for `base`, then config.
fn adhoc_spec(base: ExperimentName, settings: &Settings) -> Result<ExperimentSpec> {
    ExperimentSpec::resolve(base, settings)
}

fn simulate(design: Design, n: Option<usize>, common: &Common) -> Result<()> {
    let settings = common.settings()?;
    let seed = settings.u64("seed").unwrap_or(0);
    let data = match design {
        Design::Gp1d => sample_gp_1d(&GpConfig { n: n.unwrap_or(1000), seed, ..GpConfig::default() })?,
        Design::Nonstat2d => nonstat_2d((n.unwrap_or(900) as f64).sqrt().round() as usize)?,
        Design::Mixture => gaussian_mixture_1d(&MixtureConfig { n: n.unwrap_or(2500), seed, ..MixtureConfig::default() })?.dataset,
        Design::Cosine => thresholded_cosine_1d(&CosineConfig { n: n.unwrap_or(100), seed, ..CosineConfig::default() })?,
    };
    let dir = output_dir(&settings, "data");
    report::create_dir(&dir)?;
    let name = serde_json::to_value(design)?.as_str().unwrap_or("data").to_string();
    let path = dir.join(format!("{name}.csv"));
    let coords: Vec<String> = if data.dim() == 1 { vec!["s".into()] } else { (1..=data.dim()).map(|i| format!("s{i}")).collect() };
    let mut header = coords.clone();
    header.push("z".into());
    write_table(&path, &header, (0..data.len()).map(|i| {
        let mut r = data.locations().row(i).to_vec();
        r.push(data.responses()[i]);
        r
    }))?;
    write_json(&dir.join(format!("{name}.json")), &serde_json::json!({ "design": design, "n": data.len(), "seed": seed, "columns": header }))?;
    log(format!("wrote {} rows to {}", data.len(), path.display()));
    Ok(())
}

fn embed(schema: &Schema, common: &Common) -> Result<()> {
    let settings = common.settings()?;
    let spec = adhoc_spec(ExperimentName::Sim1d, &settings)?;
    let data = schema.load()?;
    let basis = deepkriging::model::BasisConfig { kernel: spec.kernel, levels: settings.usize("levels"), domain: None }.build(data.locations())?;
    let e = basis.embed(data.locations())?;
    let path = settings.path("output").unwrap_or_else(|| PathBuf::from("embedding.csv"));
    let header: Vec<String> = e.kept_columns.iter().map(|k| format!("phi{k}")).collect();
    write_table(&path, &header, e.values.rows().into_iter().map(|r| r.to_vec()))?;
    log(format!("basis size {} with {} nonzero columns -> {}", e.k_original, e.width(), path.display()));
    Ok(())
}

fn train(schema: &Schema, classify: Option<f64>, common: &Common) -> Result<()> {
    let settings = common.settings()?;
    let spec = adhoc_spec(ExperimentName::Sim1d, &settings)?;
    let data = schema.load()?;
    let (task, target) = match classify {
        Some(t) => (Task::Classification { classes: 2 }, Target::Labels(classify_threshold(data.responses(), t))),
        None => (Task::Regression, Target::Values(data.responses().clone().insert_axis(ndarray::Axis(1)))),
    };
    let ms = experiments::network_spec(&spec, Method::DeepKriging, task, spec.seed);
    let (model, losses) = DeepKrigingModel::fit(&ms, &data, &target)?;
    let path = settings.path("output").unwrap_or_else(|| PathBuf::from("model.json"));
    write_json(&path, &model.checkpoint())?;
    log(format!("trained {} epochs, final loss {:.6}, checkpoint {}", losses.len(), losses.last().copied().unwrap_or(f64::NAN), path.display()));
    Ok(())
}

fn predict(model_path: &Path, schema: &Schema, common: &Common) -> Result<()> {
    let settings = common.settings()?;
    let text = std::fs::read_to_string(model_path).map_err(|e| CliError::Io { path: model_path.into(), source: e })?;
    let cp: ModelCheckpoint = serde_json::from_str(&text)?;
    let model = DeepKrigingModel::from_checkpoint(&cp)?;
    let (locs, covs) = schema.load_points(&schema.input)?;
    let path = settings.path("output").unwrap_or_else(|| PathBuf::from("predictions.csv"));
    let mut header = schema.coords.clone();
    let values: Array2<f64> = match model.task() {
        Task::Regression => {
            header.push("prediction".into());
            model.predict_values(&locs, &covs)?.insert_axis(ndarray::Axis(1))
        }
        Task::Classification { classes } => {
            header.extend((0..classes).map(|c| format!("p{c}")));
            model.predict(&locs, &covs)?
        }
    };
    write_table(&path, &header, (0..locs.nrows()).map(|i| {
        let mut r = locs.row(i).to_vec();
        r.extend(values.row(i).iter());
        r
    }))?;
    log(format!("wrote {} predictions to {}", locs.nrows(), path.display()));
    Ok(())
}

fn crossval(schema: &Schema, common: &Common) -> Result<()> {
    let mut settings = common.settings()?;
    if !settings.contains("output") {
        settings.set("output", "results/crossval")?;
    }
    let spec = adhoc_spec(ExperimentName::Sim2d, &settings)?;
    let data = schema.load()?;
    let start = std::time::Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.threads).build().map_err(|e| CliError::Config(e.to_string()))?;
    let report = pool.install(|| experiments::cross_validate(&spec, &data))?;
    report::write_report(&spec.output, "crossval", &spec, &report, start.elapsed().as_secs_f64())?;
    print_summary(&report);
    Ok(())
}

fn density(schema: &Schema, targets: Option<&Path>, common: &Common) -> Result<()> {
    let settings = common.settings()?;
    let spec = adhoc_spec(ExperimentName::MixtureUq, &settings)?;
    let data = schema.load()?;
    let (locs, covs) = match targets {
        Some(p) => schema.load_points(p)?,
        None => (data.locations().clone(), data.covariates().clone()),
    };
    let model = DdspModel::fit(&data, &experiments::ddsp_config(&spec, spec.seed))?;
    let d = model.predict(&locs, &covs)?;
    let dir = output_dir(&settings, "results/density");
    report::create_dir(&dir)?;
    let levels = percentile_levels();
    let q = d.quantile_matrix(&levels)?;
    let mut header = schema.coords.clone();
    header.extend(levels.iter().map(|t| format!("q{:02}", (t * 100.0).round() as usize)));
    write_table(&dir.join("quantiles.csv"), &header, (0..locs.nrows()).map(|i| {
        let mut r = locs.row(i).to_vec();
        r.extend(q.row(i).iter());
        r
    }))?;
    let (lo, hi) = d.support();
    let header = vec!["location".to_string(), "y".into(), "pdf".into()];
    let mut rows = Vec::new();
    for i in 0..locs.nrows() {
        for j in 0..=200 {
            let y = lo + (hi - lo) * j as f64 / 200.0;
            rows.push(vec![i as f64, y, d.pdf(i, y)?]);
        }
    }
    write_table(&dir.join("pdf.csv"), &header, rows.into_iter())?;
    log(format!("{} locations, {} bins per partition -> {}", locs.nrows(), model.partitions()[0].bins(), dir.display()));
    Ok(())
}

fn nngp_gram(schema: &Schema, depth: usize, activation: &str, sigma_b2: f64, sigma_w2: f64, common: &Common) -> Result<()> {
    let settings = common.settings()?;
    let (locs, _) = schema.load_points(&schema.input)?;
    let activation: Activation = activation.parse()?;
    let cfg = NngpConfig::new(sigma_b2, sigma_w2, depth, activation)?;
    let basis = deepkriging::BasisSystem::for_locations(&locs, deepkriging::Kernel::Wendland, settings.usize("levels"))?;
    let gram = induced_cov(&basis.evaluate(&locs)?, &cfg)?;
    let path = settings.path("output").unwrap_or_else(|| PathBuf::from("gram.csv"));
    let header: Vec<String> = (0..gram.ncols()).map(|j| format!("c{j}")).collect();
    write_table(&path, &header, gram.rows().into_iter().map(|r| r.to_vec()))?;
    log(format!("{}x{} gram -> {}", gram.nrows(), gram.ncols(), path.display()));
    Ok(())
}

fn print_summary(report: &Report) {
    println!("{:<16} {:<6} {:<20} {:>12} {:>12} {:>4}", "method", "split", "metric", "mean", "sd", "n");
    for r in report.summary() {
        println!("{:<16} {:<6} {:<20} {:>12.6} {:>12.6} {:>4}", r.method, r.split, r.metric, r.mean, r.sd, r.count);
    }
    let mut methods: Vec<&str> = Vec::new();
    for t in &report.timings {
        if !methods.contains(&t.method.as_str()) {
            methods.push(&t.method);
        }
    }
    for m in methods {
        let total: f64 = report.timings.iter().filter(|t| t.method == m).map(|t| t.seconds).sum();
        println!("time {m:<16} {total:.2}s");
    }
}

fn experiment(name: ExperimentName, common: &Common) -> Result<()> {
    let spec = ExperimentSpec::resolve(name, &common.settings()?)?;
    log(format!("running {} into {}", name.as_str(), spec.output.display()));
    let (report, files) = experiments::run_and_write(&spec)?;
    print_summary(&report);
    if name == ExperimentName::Scaling {
        for m in &spec.methods {
            if let Some(slope) = experiments::log_log_slope(&report, m.as_str()) {
                println!("log-log slope {:<16} {slope:.3}", m.as_str());
            }
        }
    }
    log(format!("wrote {} files", files.len()));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { design, n, common } => simulate(design, n, &common),
        Command::Embed { schema, common } => embed(&schema, &common),
        Command::Train { schema, classify, common } => train(&schema, classify, &common),
        Command::Predict { model, schema, common } => predict(&model, &schema, &common),
        Command::Crossval { schema, common } => crossval(&schema, &common),
        Command::Density { schema, targets, common } => density(&schema, targets.as_deref(), &common),
        Command::Probe { common } => experiment(ExperimentName::Probe, &common),
        Command::NngpGram { schema, depth, activation, sigma_b2, sigma_w2, common } => nngp_gram(&schema, depth, &activation, sigma_b2, sigma_w2, &common),
        Command::Experiment { name, common } => experiment(name.parse()?, &common),
        Command::Bench { common } => experiment(ExperimentName::Scaling, &common),
        Command::Fixture { dir } => {
            report::create_dir(&dir)?;
            let (stations, grid) = fixture::generate(fixture::FIXTURE_SEED);
            report::write_text(&dir.join("pm25_fixture.csv"), &stations)?;
            report::write_text(&dir.join("pm25_grid.csv"), &grid)?;
            log(format!("wrote fixture files to {} (seed {})", dir.display(), fixture::FIXTURE_SEED));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log(format!("error: {e}"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
