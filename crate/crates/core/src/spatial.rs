//! Spatial datasets and the bookkeeping around them: CSV ingestion,
//! min-max scaling, cross-validation folds, station-to-grid matching and
//! error metrics.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Locations, responses and covariates observed at `N` sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDataset {
    locations: Array2<f64>,
    responses: Array1<f64>,
    covariates: Array2<f64>,
    names: Vec<String>,
}

impl SpatialDataset {
    pub fn new(
        locations: Array2<f64>,
        responses: Array1<f64>,
        covariates: Array2<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = locations.nrows();
        if n == 0 {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        let d = locations.ncols();
        if !(1..=3).contains(&d) {
            return Err(Error::invalid(format!("spatial dimension {d} not in 1..=3")));
        }
        if responses.len() != n {
            return Err(Error::ShapeMismatch {
                what: "responses",
                expected: n,
                found: responses.len(),
            });
        }
        if covariates.nrows() != n {
            return Err(Error::ShapeMismatch {
                what: "covariate rows",
                expected: n,
                found: covariates.nrows(),
            });
        }
        if names.len() != covariates.ncols() {
            return Err(Error::ShapeMismatch {
                what: "covariate names",
                expected: covariates.ncols(),
                found: names.len(),
            });
        }
        let finite = locations.iter().chain(responses.iter()).chain(covariates.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(SpatialDataset { locations, responses, covariates, names })
    }

    /// Dataset without covariates.
    pub fn from_locations(locations: Array2<f64>, responses: Array1<f64>) -> Result<Self> {
        let n = locations.nrows();
        Self::new(locations, responses, Array2::zeros((n, 0)), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.locations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.locations.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn locations(&self) -> &Array2<f64> {
        &self.locations
    }

    pub fn responses(&self) -> &Array1<f64> {
        &self.responses
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> SpatialDataset {
        SpatialDataset {
            locations: self.locations.select(Axis(0), idx),
            responses: self.responses.select(Axis(0), idx),
            covariates: self.covariates.select(Axis(0), idx),
            names: self.names.clone(),
        }
    }

    /// Copy with a different response vector.
    pub fn with_responses(&self, responses: Array1<f64>) -> Result<SpatialDataset> {
        Self::new(self.locations.clone(), responses, self.covariates.clone(), self.names.clone())
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub coords: Vec<String>,
    pub response: String,
    pub covariates: Vec<String>,
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn column_indices(headers: &csv::StringRecord, wanted: &[String]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))
        })
        .collect()
}

/// Read the declared columns of every record; `row` in errors is the 1-based
/// data row (header excluded).
fn read_columns(path: &Path, wanted: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers()?.clone();
    let idx = column_indices(&headers, wanted)?;
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(idx.len());
        for (k, &c) in idx.iter().enumerate() {
            let cell = record.get(c).unwrap_or("");
            let value: f64 = cell.parse().map_err(|_| Error::ParseCell {
                row: r + 1,
                column: wanted[k].clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::ParseCell { row: r + 1, column: wanted[k].clone(), value: cell.to_string() });
            }
            row.push(value);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn to_matrix(rows: &[Vec<f64>], from: usize, to: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), to - from), |(i, j)| rows[i][from + j])
}

/// Load a dataset; rows keep file order.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SpatialDataset> {
    let path = path.as_ref();
    if schema.coords.is_empty() {
        return Err(Error::invalid("schema declares no coordinate columns"));
    }
    let mut wanted = schema.coords.clone();
    wanted.push(schema.response.clone());
    wanted.extend(schema.covariates.iter().cloned());
    let rows = read_columns(path, &wanted)?;
    let d = schema.coords.len();
    let locations = to_matrix(&rows, 0, d);
    let responses = Array1::from_iter(rows.iter().map(|r| r[d]));
    let covariates = to_matrix(&rows, d + 1, wanted.len());
    SpatialDataset::new(locations, responses, covariates, schema.covariates.clone())
}

/// Load prediction sites (coordinates plus covariates, no response).
pub fn load_points_csv(
    path: impl AsRef<Path>,
    coords: &[String],
    covariates: &[String],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut wanted = coords.to_vec();
    wanted.extend(covariates.iter().cloned());
    let rows = read_columns(path.as_ref(), &wanted)?;
    if rows.is_empty() {
        return Err(Error::invalid("no rows in point file"));
    }
    Ok((to_matrix(&rows, 0, coords.len()), to_matrix(&rows, coords.len(), wanted.len())))
}

/// Per-column min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Scaler {
    pub fn fit(m: &Array2<f64>) -> Scaler {
        let (min, max) = m
            .columns()
            .into_iter()
            .map(|c| {
                c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
            })
            .unzip();
        Scaler { min, max }
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    /// `(x - min) / (max - min)`; constant columns map to zero.
    pub fn transform(&self, m: &Array2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.width() {
            return Err(Error::ShapeMismatch { what: "scaler columns", expected: self.width(), found: m.ncols() });
        }
        let mut out = m.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let range = self.max[j] - self.min[j];
            if range > 0.0 {
                col.mapv_inplace(|v| (v - self.min[j]) / range);
            } else {
                col.fill(0.0);
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, m: &Array2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.width() {
            return Err(Error::ShapeMismatch { what: "scaler columns", expected: self.width(), found: m.ncols() });
        }
        let mut out = m.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let range = self.max[j] - self.min[j];
            col.mapv_inplace(|v| self.min[j] + v * range);
        }
        Ok(out)
    }
}

pub fn min_max_normalize(m: &Array2<f64>) -> (Array2<f64>, Scaler) {
    let scaler = Scaler::fit(m);
    let out = scaler.transform(m).expect("scaler fitted on the same matrix");
    (out, scaler)
}

/// Fold label per observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// `(train, test)` indices for one fold, each in ascending order.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.fold_of.len()).partition(|&i| self.fold_of[i] == fold);
        (train, test)
    }
}

/// Shuffle `0..n` and deal the permutation round-robin into `k` folds.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("k-fold needs 2 <= k <= n, got k={k}, n={n}")));
    }
    let perm = rng::permutation(n, &mut rng::stream(seed, Stream::Folds));
    let mut fold_of = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}

/// Choose `n_train` of `n` indices uniformly without replacement. Returns
/// `(train, test)`, both ascending.
pub fn random_split(n: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(format!("cannot draw {n_train} training rows out of {n}")));
    }
    let perm = rng::permutation(n, &mut rng::stream(seed, Stream::Split));
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Gridded covariates on a rectangular lattice of cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCells {
    pub centers: Array2<f64>,
    pub covariates: Array2<f64>,
    pub names: Vec<String>,
}

/// Axis description of a rectangular lattice.
#[derive(Debug, Clone, PartialEq)]
struct Lattice {
    origin: Vec<f64>,
    spacing: Vec<f64>,
    counts: Vec<usize>,
    /// multi-index -> row of the grid matrix
    rows: BTreeMap<Vec<usize>, usize>,
}

impl Lattice {
    fn from_centers(centers: &Array2<f64>) -> Result<Lattice> {
        let d = centers.ncols();
        let mut origin = Vec::with_capacity(d);
        let mut spacing = Vec::with_capacity(d);
        let mut counts = Vec::with_capacity(d);
        for col in centers.columns() {
            let mut vals: Vec<f64> = col.to_vec();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
            let h = if vals.len() > 1 { (vals[vals.len() - 1] - vals[0]) / (vals.len() - 1) as f64 } else { 1.0 };
            for w in vals.windows(2) {
                if ((w[1] - w[0]) - h).abs() > 1e-6 * h {
                    return Err(Error::invalid("grid centers are not evenly spaced"));
                }
            }
            origin.push(vals[0]);
            spacing.push(h);
            counts.push(vals.len());
        }
        let mut rows = BTreeMap::new();
        for (r, c) in centers.rows().into_iter().enumerate() {
            let key: Vec<usize> = (0..d).map(|a| ((c[a] - origin[a]) / spacing[a]).round() as usize).collect();
            if rows.insert(key, r).is_some() {
                return Err(Error::invalid(format!("duplicate grid center at row {r}")));
            }
        }
        Ok(Lattice { origin, spacing, counts, rows })
    }

    /// Nearest lattice index along one axis; exact half-way ties go to the
    /// smaller index.
    fn nearest(&self, axis: usize, x: f64) -> usize {
        let t = (x - self.origin[axis]) / self.spacing[axis];
        let lower = t.floor();
        let frac = t - lower;
        let idx = if frac > 0.5 { lower + 1.0 } else { lower };
        idx.clamp(0.0, (self.counts[axis] - 1) as f64) as usize
    }
}

/// Stations averaged onto the grid cells they fall in.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMatch {
    /// One row per occupied cell, ordered by lexicographic cell index.
    pub dataset: SpatialDataset,
    /// Row of the grid matrix for each output row.
    pub cell_rows: Vec<usize>,
    /// Number of stations averaged into each output row.
    pub station_counts: Vec<usize>,
}

/// Assign each station to the nearest cell center and average co-located
/// responses. The output carries the cell centers and the cell covariates.
pub fn grid_match(stations: &SpatialDataset, grid: &GridCells) -> Result<GridMatch> {
    if stations.is_empty() {
        return Err(Error::invalid("no stations to match"));
    }
    if grid.centers.ncols() != stations.dim() {
        return Err(Error::ShapeMismatch { what: "grid dimension", expected: stations.dim(), found: grid.centers.ncols() });
    }
    if grid.covariates.nrows() != grid.centers.nrows() {
        return Err(Error::ShapeMismatch {
            what: "grid covariate rows",
            expected: grid.centers.nrows(),
            found: grid.covariates.nrows(),
        });
    }
    let lattice = Lattice::from_centers(&grid.centers)?;
    let d = stations.dim();
    let mut cells: BTreeMap<Vec<usize>, (f64, usize)> = BTreeMap::new();
    for (i, s) in stations.locations().rows().into_iter().enumerate() {
        let mut key = Vec::with_capacity(d);
        for a in 0..d {
            let half = 0.5 * lattice.spacing[a];
            let lo = lattice.origin[a] - half;
            let hi = lattice.origin[a] + (lattice.counts[a] - 1) as f64 * lattice.spacing[a] + half;
            if s[a] < lo - 1e-9 * half || s[a] > hi + 1e-9 * half {
                return Err(Error::invalid(format!("station {i} lies outside the grid extent")));
            }
            key.push(lattice.nearest(a, s[a]));
        }
        if !lattice.rows.contains_key(&key) {
            return Err(Error::invalid(format!("station {i} falls in a cell missing from the grid")));
        }
        let e = cells.entry(key).or_insert((0.0, 0));
        e.0 += stations.responses()[i];
        e.1 += 1;
    }
    let m = cells.len();
    let mut cell_rows = Vec::with_capacity(m);
    let mut station_counts = Vec::with_capacity(m);
    let mut responses = Array1::zeros(m);
    for (k, (key, (sum, count))) in cells.iter().enumerate() {
        cell_rows.push(lattice.rows[key]);
        station_counts.push(*count);
        responses[k] = sum / *count as f64;
    }
    let dataset = SpatialDataset::new(
        grid.centers.select(Axis(0), &cell_rows),
        responses,
        grid.covariates.select(Axis(0), &cell_rows),
        grid.names.clone(),
    )?;
    Ok(GridMatch { dataset, cell_rows, station_counts })
}

fn check_lengths(pred: &Array1<f64>, truth: &Array1<f64>) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch { what: "prediction length", expected: truth.len(), found: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::invalid("metrics need at least one value"));
    }
    Ok(())
}

pub fn rmse(pred: &Array1<f64>, truth: &Array1<f64>) -> Result<f64> {
    check_lengths(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn mse(pred: &Array1<f64>, truth: &Array1<f64>) -> Result<f64> {
    rmse(pred, truth).map(|r| r * r)
}

/// Mean absolute percentage error with absolute values in numerator and
/// denominator.
pub fn mape(pred: &Array1<f64>, truth: &Array1<f64>) -> Result<f64> {
    check_lengths(pred, truth)?;
    if let Some(i) = truth.iter().position(|&t| t == 0.0) {
        return Err(Error::invalid(format!("MAPE undefined: truth[{i}] is zero")));
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| ((p - t) / t).abs()).sum();
    Ok(s / pred.len() as f64)
}

pub fn mae(pred: &Array1<f64>, truth: &Array1<f64>) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch { what: "label length", expected: truth.len(), found: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::invalid("accuracy needs at least one label"));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// MAE, plus accuracy when class labels are supplied.
pub fn mae_and_accuracy(
    pred: &Array1<f64>,
    truth: &Array1<f64>,
    labels: Option<(&[usize], &[usize])>,
) -> Result<(f64, Option<f64>)> {
    let m = mae(pred, truth)?;
    let acc = labels.map(|(p, t)| accuracy(p, t)).transpose()?;
    Ok((m, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_three_rows() {
        let f = write_tmp("s,z\n0.1,1.0\n0.5,2.0\n0.9,3.0\n");
        let schema = CsvSchema { coords: vec!["s".into()], response: "z".into(), covariates: vec![] };
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.n_covariates()), (3, 1, 0));
        assert_eq!(ds.responses(), &array![1.0, 2.0, 3.0]);
    }

    #[test]
    fn csv_missing_column_named() {
        let f = write_tmp("s,z\n0.1,1.0\n");
        let schema = CsvSchema { coords: vec!["s".into()], response: "z".into(), covariates: vec!["temp".into()] };
        match load_csv(f.path(), &schema) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "temp"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_bad_cell_reports_row() {
        let f = write_tmp("s,z\n0.1,1.0\n0.2,\n");
        let schema = CsvSchema { coords: vec!["s".into()], response: "z".into(), covariates: vec![] };
        match load_csv(f.path(), &schema) {
            Err(Error::ParseCell { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "z");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load_csv("/nonexistent/file.csv", &schema), Err(Error::Io { .. })));
    }

    #[test]
    fn normalize_examples() {
        let m = array![[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]];
        let (out, scaler) = min_max_normalize(&m);
        assert_eq!(out.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(out.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
        let back = scaler.inverse(&out).unwrap();
        assert!((&back - &m).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn kfold_examples() {
        let a = kfold_split(10, 10, 3).unwrap();
        assert!(a.sizes().iter().all(|&s| s == 1));
        let mut b = kfold_split(9, 2, 3).unwrap().sizes();
        b.sort_unstable();
        assert_eq!(b, vec![4, 5]);
        assert_eq!(kfold_split(20, 4, 11).unwrap(), kfold_split(20, 4, 11).unwrap());
        assert!(kfold_split(3, 4, 0).is_err());
    }

    fn grid_2x2() -> GridCells {
        GridCells {
            centers: array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
            covariates: array![[1.0], [2.0], [3.0], [4.0]],
            names: vec!["c".into()],
        }
    }

    #[test]
    fn grid_match_averages_shared_cells() {
        let st = SpatialDataset::from_locations(array![[0.1, 0.1], [-0.2, 0.3]], array![4.0, 6.0]).unwrap();
        let m = grid_match(&st, &grid_2x2()).unwrap();
        assert_eq!(m.dataset.len(), 1);
        assert_eq!(m.dataset.responses()[0], 5.0);
        assert_eq!(m.dataset.covariates()[[0, 0]], 1.0);
        assert_eq!(m.station_counts, vec![2]);
    }

    #[test]
    fn grid_match_boundary_goes_to_smaller_index() {
        // equidistant from (0,0),(1,0) and from (0,0),(0,1)
        let st = SpatialDataset::from_locations(array![[0.5, 0.5], [0.5, 0.9]], array![1.0, 2.0]).unwrap();
        let m = grid_match(&st, &grid_2x2()).unwrap();
        assert_eq!(m.cell_rows, vec![0, 1]);
        let outside = SpatialDataset::from_locations(array![[3.0, 0.0]], array![1.0]).unwrap();
        assert!(grid_match(&outside, &grid_2x2()).is_err());
    }

    #[test]
    fn metric_examples() {
        let t = array![1.0, 1.0];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let r = rmse(&array![3.0, -4.0], &array![0.0, 0.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mape(&array![2.0], &array![1.0]).unwrap(), 1.0);
        assert!((mape(&array![1.1, 0.9], &t).unwrap() - 0.1).abs() < 1e-12);
        assert!(mape(&t, &array![0.0, 1.0]).is_err());
        assert_eq!(mae(&array![1.0, 3.0], &array![0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 1, 1]).unwrap(), 0.75);
        let (m, acc) = mae_and_accuracy(&t, &t, Some((&[1, 0], &[1, 0]))).unwrap();
        assert_eq!((m, acc), (0.0, Some(1.0)));
        assert!(rmse(&t, &array![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn kfold_partitions(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let f = kfold_split(n, k, seed).unwrap();
            let sizes = f.sizes();
            prop_assert!(sizes.iter().all(|&s| s > 0));
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = (0..k).flat_map(|j| f.split(j).1).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn normalize_roundtrip(vals in proptest::collection::vec(-1e3f64..1e3, 6..30)) {
            let m = Array2::from_shape_vec((vals.len() / 3, 3), vals[..vals.len() / 3 * 3].to_vec()).unwrap();
            let (out, scaler) = min_max_normalize(&m);
            prop_assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let back = scaler.inverse(&out).unwrap();
            for (a, b) in back.iter().zip(m.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn rmse_permutation_invariant(vals in proptest::collection::vec(-10f64..10.0, 2..40), seed in any::<u64>()) {
            let p = Array1::from(vals.clone());
            let t = Array1::from_iter(vals.iter().map(|v| v * 0.5 + 1.0));
            let perm = rng::permutation(vals.len(), &mut rng::stream(seed, Stream::Split));
            let r1 = rmse(&p, &t).unwrap();
            let r2 = rmse(&p.select(Axis(0), &perm), &t.select(Axis(0), &perm)).unwrap();
            prop_assert!(r1 >= 0.0);
            prop_assert!((r1 - r2).abs() < 1e-12);
        }

        #[test]
        fn grid_match_conserves_stations(pts in proptest::collection::vec((-0.5f64..1.5, -0.5f64..1.5), 1..40)) {
            let locs = Array2::from_shape_fn((pts.len(), 2), |(i, j)| if j == 0 { pts[i].0 } else { pts[i].1 });
            let st = SpatialDataset::from_locations(locs, Array1::ones(pts.len())).unwrap();
            let m = grid_match(&st, &grid_2x2()).unwrap();
            prop_assert_eq!(m.station_counts.iter().sum::<usize>(), pts.len());
        }
    }
}
