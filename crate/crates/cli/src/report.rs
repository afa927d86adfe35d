//! Result tables, plot data and run manifests.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

/// One metric for one method on one replicate or fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub unit: usize,
    pub method: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// Mean and sample standard deviation of a metric over units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub split: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

/// Wall time of one fit; `unit` is the replicate, fold or sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub unit: usize,
    pub method: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Curve,
    Surface,
    Boxplot,
    Density,
}

/// Long-format rows for one figure: a series label followed by the numeric
/// columns, `(x, y)` for curves and `(x, y, value)` for surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub name: String,
    pub kind: PlotKind,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl PlotData {
    pub fn new(name: &str, kind: PlotKind, columns: &[&str]) -> Self {
        PlotData { name: name.into(), kind, columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, series: &str, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((series.into(), values.to_vec()));
    }

    pub fn series(&self, name: &str) -> Vec<&[f64]> {
        self.rows.iter().filter(|(s, _)| s == name).map(|(_, v)| v.as_slice()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub metrics: Vec<MetricRow>,
    pub timings: Vec<TimingRow>,
    pub plots: Vec<PlotData>,
    /// Per-unit seeds, in unit order.
    pub seeds: Vec<u64>,
}

impl Report {
    pub fn push(&mut self, unit: usize, method: &str, split: &str, metric: &str, value: f64) {
        self.metrics.push(MetricRow { unit, method: method.into(), split: split.into(), metric: metric.into(), value });
    }

    pub fn time(&mut self, unit: usize, method: &str, seconds: f64) {
        self.timings.push(TimingRow { unit, method: method.into(), seconds });
    }

    pub fn extend(&mut self, other: Report) {
        self.metrics.extend(other.metrics);
        self.timings.extend(other.timings);
        self.plots.extend(other.plots);
        self.seeds.extend(other.seeds);
    }

    /// Values of one metric across units, in unit order.
    pub fn values(&self, method: &str, split: &str, metric: &str) -> Vec<f64> {
        self.metrics.iter().filter(|r| r.method == method && r.split == split && r.metric == metric).map(|r| r.value).collect()
    }

    pub fn mean(&self, method: &str, split: &str, metric: &str) -> Option<f64> {
        let v = self.values(method, split, metric);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Summary over units for every (method, split, metric) in first-seen order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(&str, &str, &str)> = Vec::new();
        for r in &self.metrics {
            let k = (r.method.as_str(), r.split.as_str(), r.metric.as_str());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(method, split, metric)| {
                let v = self.values(method, split, metric);
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
                SummaryRow { method: method.into(), split: split.into(), metric: metric.into(), mean, sd, count: v.len() }
            })
            .collect()
    }

    pub fn plot(&self, name: &str) -> Option<&PlotData> {
        self.plots.iter().find(|p| p.name == name)
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn open_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = open_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Write one plot as long-format CSV.
pub fn emit_plot_data(dir: &Path, plot: &PlotData) -> Result<PathBuf> {
    if plot.rows.is_empty() {
        return Err(CliError::config(format!("plot `{}` has no rows", plot.name)));
    }
    let path = dir.join(format!("{}.csv", plot.name));
    let mut w = open_writer(&path)?;
    let mut header = vec!["series".to_string()];
    header.extend(plot.columns.iter().cloned());
    w.write_record(&header)?;
    for (series, values) in &plot.rows {
        let mut record = vec![series.clone()];
        record.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Everything needed to rerun an experiment.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub experiment: &'a str,
    pub version: &'static str,
    pub config: &'a C,
    pub seeds: &'a [u64],
    pub wall_seconds: f64,
    pub timings: &'a [TimingRow],
    pub outputs: Vec<String>,
}

/// Write metrics, summary, timings, plots, the resolved config and the
/// manifest into `dir`.
pub fn write_report<C: Serialize>(dir: &Path, experiment: &str, config: &C, report: &Report, wall_seconds: f64) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let config_path = dir.join("config.json");
    write_text(&config_path, &serde_json::to_string_pretty(config)?)?;
    written.push(config_path);
    if !report.metrics.is_empty() {
        let p = dir.join("metrics.csv");
        write_rows(&p, &report.metrics)?;
        written.push(p);
        let p = dir.join("summary.csv");
        write_rows(&p, &report.summary())?;
        written.push(p);
    }
    if !report.timings.is_empty() {
        let p = dir.join("timings.csv");
        write_rows(&p, &report.timings)?;
        written.push(p);
    }
    if !report.plots.is_empty() {
        let plots = dir.join("plots");
        create_dir(&plots)?;
        for plot in &report.plots {
            written.push(emit_plot_data(&plots, plot)?);
        }
    }
    let manifest = Manifest {
        experiment,
        version: env!("CARGO_PKG_VERSION"),
        config,
        seeds: &report.seeds,
        wall_seconds,
        timings: &report.timings,
        outputs: written.iter().map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string()).collect(),
    };
    let p = dir.join("manifest.json");
    write_text(&p, &serde_json::to_string_pretty(&manifest)?)?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_mean_and_sd() {
        let mut r = Report::default();
        for (u, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            r.push(u, "a", "test", "rmse", v);
        }
        r.push(0, "b", "test", "rmse", 5.0);
        let s = r.summary();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].mean, s[0].sd, s[0].count), (2.0, 1.0, 3));
        assert_eq!((s[1].mean, s[1].sd), (5.0, 0.0));
        assert_eq!(r.mean("a", "test", "rmse"), Some(2.0));
        assert_eq!(r.mean("a", "train", "rmse"), None);
    }

    #[test]
    fn empty_plot_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = PlotData::new("x", PlotKind::Curve, &["x", "y"]);
        assert!(emit_plot_data(dir.path(), &p).is_err());
    }

    #[test]
    fn report_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Report::default();
        r.push(0, "kriging", "test", "rmse", 0.5);
        r.time(0, "kriging", 0.1);
        let mut plot = PlotData::new("curve", PlotKind::Curve, &["x", "y"]);
        plot.push("kriging", &[1.0, 2.0]);
        r.plots.push(plot);
        let files = write_report(dir.path(), "demo", &serde_json::json!({"seed": 1}), &r, 1.0).unwrap();
        assert_eq!(files.len(), 6);
        let plot = std::fs::read_to_string(dir.path().join("plots/curve.csv")).unwrap();
        assert_eq!(plot, "series,x,y\nkriging,1,2\n");
        let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config"]["seed"], 1);
    }
}
