//! Synthetic air-quality fixture: 841 monitoring stations over a 40 x 25
//! lattice of one-degree cells, with six gridded meteorological covariates.
//! Stations occupy exactly 604 distinct cells; some cells hold several.
//!
//! The bundled CSV files are the output of [`generate`] with
//! [`FIXTURE_SEED`]; a test regenerates them and compares byte for byte.

use deepkriging::rng::{self, Stream};

pub const FIXTURE_SEED: u64 = 2019;
pub const STATIONS: usize = 841;
pub const OCCUPIED_CELLS: usize = 604;
pub const COVARIATES: [&str; 6] = ["temperature", "humidity", "precipitation", "pressure", "wind_u", "wind_v"];

const LON0: f64 = -120.0;
const LAT0: f64 = 25.0;
const NLON: usize = 40;
const NLAT: usize = 25;

pub const STATIONS_CSV: &str = include_str!("../fixtures/pm25_fixture.csv");
pub const GRID_CSV: &str = include_str!("../fixtures/pm25_grid.csv");

fn unit(lon: f64, lat: f64) -> (f64, f64) {
    ((lon - LON0) / (NLON - 1) as f64, (lat - LAT0) / (NLAT - 1) as f64)
}

fn bump(x: f64, y: f64, cx: f64, cy: f64, w: f64) -> f64 {
    (-((x - cx).powi(2) + (y - cy).powi(2)) / w).exp()
}

/// Smooth covariate fields; cell-level noise is added by the caller.
fn covariate_means(lon: f64, lat: f64) -> [f64; 6] {
    let (x, y) = unit(lon, lat);
    let tau = std::f64::consts::TAU;
    [
        30.0 - 15.0 * y + 3.0 * (3.0 * x).sin(),
        40.0 + 40.0 * x - 10.0 * y,
        (5.0 * x * x + 3.0 * (6.0 * y).sin()).max(0.0),
        1013.0 - 150.0 * (1.0 - x).powi(3),
        5.0 * (tau * y).cos(),
        3.0 * (tau * x).sin(),
    ]
}

const COVARIATE_NOISE: [f64; 6] = [0.5, 3.0, 0.5, 2.0, 0.8, 0.8];

fn log_concentration(lon: f64, lat: f64, cov: &[f64; 6]) -> f64 {
    let (x, y) = unit(lon, lat);
    let wind = (cov[4] * cov[4] + cov[5] * cov[5]).sqrt();
    1.7 + 0.9 * x + 0.6 * bump(x, y, 0.75, 0.45, 0.01) + 0.5 * bump(x, y, 0.1, 0.3, 0.005) + 0.02 * (cov[0] - 20.0)
        + 0.006 * (cov[1] - 50.0)
        - 0.04 * wind
        - 0.03 * cov[2]
}

fn row(cells: &[String]) -> String {
    let mut s = cells.join(",");
    s.push('\n');
    s
}

/// Station and grid CSV text for `seed`.
pub fn generate(seed: u64) -> (String, String) {
    let mut noise = rng::stream(seed, Stream::Noise);
    let cells = NLON * NLAT;
    let mut grid = String::new();
    let mut header = vec!["lon".to_string(), "lat".to_string()];
    header.extend(COVARIATES.iter().map(|s| s.to_string()));
    grid.push_str(&row(&header));
    let mut cell_cov = Vec::with_capacity(cells);
    let mut centers = Vec::with_capacity(cells);
    for j in 0..NLAT {
        for i in 0..NLON {
            let (lon, lat) = (LON0 + i as f64, LAT0 + j as f64);
            let mut c = covariate_means(lon, lat);
            for (v, sd) in c.iter_mut().zip(COVARIATE_NOISE) {
                *v += sd * rng::standard_normal(&mut noise);
            }
            c[1] = c[1].clamp(5.0, 100.0);
            c[2] = c[2].max(0.0);
            // round once so the station file and the grid file agree exactly
            let c = c.map(|v| (v * 1e4).round() / 1e4);
            let mut fields = vec![format!("{lon:.1}"), format!("{lat:.1}")];
            fields.extend(c.iter().map(|v| format!("{v:.4}")));
            grid.push_str(&row(&fields));
            cell_cov.push(c);
            centers.push((lon, lat));
        }
    }

    let mut pick = rng::stream(seed, Stream::Split);
    let order = rng::permutation(cells, &mut pick);
    let occupied = &order[..OCCUPIED_CELLS];
    let mut assignment: Vec<usize> = occupied.to_vec();
    while assignment.len() < STATIONS {
        let k = ((rng::open_unit(&mut pick) * OCCUPIED_CELLS as f64) as usize).min(OCCUPIED_CELLS - 1);
        assignment.push(occupied[k]);
    }

    let mut jitter = rng::stream(seed, Stream::GaussianField);
    let mut stations = String::new();
    let mut header = vec!["lon".to_string(), "lat".to_string(), "pm25".to_string()];
    header.extend(COVARIATES.iter().map(|s| s.to_string()));
    stations.push_str(&row(&header));
    for &cell in &assignment {
        let (clon, clat) = centers[cell];
        let lon = clon + 0.9 * (rng::open_unit(&mut jitter) - 0.5);
        let lat = clat + 0.9 * (rng::open_unit(&mut jitter) - 0.5);
        let cov = &cell_cov[cell];
        let pm = (log_concentration(lon, lat, cov) + 0.15 * rng::standard_normal(&mut noise)).exp();
        let mut fields = vec![format!("{lon:.4}"), format!("{lat:.4}"), format!("{pm:.4}")];
        fields.extend(cov.iter().map(|v| format!("{v:.4}")));
        stations.push_str(&row(&fields));
    }
    (stations, grid)
}
