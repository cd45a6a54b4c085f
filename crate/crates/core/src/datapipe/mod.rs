//! From gridded watershed series to the two-input, lag-windowed supervised
//! dataset: distance weighting, min-max scaling fitted on the training
//! block, sliding windows and a chronological train/validation/test split.

mod csv_io;
mod scaler;
mod window;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use csv_io::{
    load_dataset, load_series_csv, parse_grid, parse_series, save_dataset, write_grid, write_series, GRID_FILE,
    SERIES_FILE,
};
pub use scaler::Scaler;
pub use window::{make_windows, split, split_counts, WindowedDataset};

use crate::error::{Error, Result};

/// Layout of a watershed: one entry per grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub ids: Vec<String>,
    pub coords: Vec<(f64, f64)>,
    /// Distance from each cell to the nearest river, km.
    pub distances_km: Vec<f64>,
}

impl GridSpec {
    pub fn new(ids: Vec<String>, coords: Vec<(f64, f64)>, distances_km: Vec<f64>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::param("a watershed needs at least one grid"));
        }
        if coords.len() != ids.len() || distances_km.len() != ids.len() {
            return Err(Error::dim(format!(
                "{} ids, {} coordinates, {} distances",
                ids.len(),
                coords.len(),
                distances_km.len()
            )));
        }
        if distances_km.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::param("grid distances must be finite and non-negative"));
        }
        if coords.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
            return Err(Error::NonFinite("grid coordinates"));
        }
        Ok(Self { ids, coords, distances_km })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Aligned daily series for one watershed. `precip[t][i]` and `runoff[t][i]`
/// are mm/day for grid `i`; `discharge[t]` is the gauge label in m³/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTable {
    pub dates: Vec<NaiveDate>,
    pub precip: Vec<Vec<f64>>,
    pub runoff: Vec<Vec<f64>>,
    pub discharge: Vec<f64>,
}

impl SeriesTable {
    pub fn new(
        dates: Vec<NaiveDate>,
        precip: Vec<Vec<f64>>,
        runoff: Vec<Vec<f64>>,
        discharge: Vec<f64>,
    ) -> Result<Self> {
        let t = dates.len();
        if precip.len() != t || runoff.len() != t || discharge.len() != t {
            return Err(Error::dim(format!(
                "series lengths differ: {t} dates, {} precip, {} runoff, {} discharge",
                precip.len(),
                runoff.len(),
                discharge.len()
            )));
        }
        let l = precip.first().map(Vec::len).unwrap_or(0);
        if precip.iter().chain(&runoff).any(|row| row.len() != l) {
            return Err(Error::dim("ragged precipitation/runoff rows"));
        }
        let all = precip.iter().chain(&runoff).flatten().chain(&discharge);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("series"));
        }
        for pair in dates.windows(2) {
            if pair[0].succ_opt() != Some(pair[1]) {
                return Err(Error::param(format!("dates {} and {} are not consecutive", pair[0], pair[1])));
            }
        }
        Ok(Self { dates, precip, runoff, discharge })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn grid_count(&self) -> usize {
        self.precip.first().map(Vec::len).unwrap_or(0)
    }

    /// Per-day feature rows `[p_1..p_L, r_1..r_L, D]`.
    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|t| {
                let mut row = Vec::with_capacity(2 * self.grid_count() + 1);
                row.extend_from_slice(&self.precip[t]);
                row.extend_from_slice(&self.runoff[t]);
                row.push(self.discharge[t]);
                row
            })
            .collect()
    }

    pub(crate) fn from_feature_rows(dates: Vec<NaiveDate>, rows: &[Vec<f64>], grids: usize) -> Self {
        Self {
            dates,
            precip: rows.iter().map(|r| r[..grids].to_vec()).collect(),
            runoff: rows.iter().map(|r| r[grids..2 * grids].to_vec()).collect(),
            discharge: rows.iter().map(|r| r[2 * grids]).collect(),
        }
    }
}

/// Inverse-distance weights `1/(d+floor)^exponent`, rescaled so their mean
/// is exactly one. Nearer cells get larger weights.
pub fn distance_weights(distances: &[f64], exponent: f64, floor: f64) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::param("no distances to weight"));
    }
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(Error::param(format!("weight exponent {exponent} must be positive")));
    }
    if !(floor >= 0.0 && floor.is_finite()) {
        return Err(Error::param(format!("weight floor {floor} must be non-negative")));
    }
    let mut raw = Vec::with_capacity(distances.len());
    for &d in distances {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::param(format!("distance {d} must be finite and non-negative")));
        }
        let base = d + floor;
        if base == 0.0 {
            return Err(Error::param("zero distance with zero floor"));
        }
        raw.push(base.powf(-exponent));
    }
    let total: f64 = raw.iter().sum();
    let scale = distances.len() as f64 / total;
    Ok(raw.into_iter().map(|r| r * scale).collect())
}

/// Elementwise `p̃[t][i] = w[i] * p[t][i]`.
pub fn apply_weights(precip: &[Vec<f64>], weights: &[f64]) -> Result<Vec<Vec<f64>>> {
    precip
        .iter()
        .map(|row| {
            if row.len() != weights.len() {
                return Err(Error::dim(format!("{} grids vs {} weights", row.len(), weights.len())));
            }
            Ok(row.iter().zip(weights).map(|(p, w)| p * w).collect())
        })
        .collect()
}

/// Preprocessing knobs shared by training, evaluation and transfer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub lag: usize,
    pub weight_exponent: f64,
    pub weight_floor_km: f64,
    pub train_frac: f64,
    pub val_frac_of_train: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { lag: 7, weight_exponent: 1.0, weight_floor_km: 0.1, train_frac: 0.7, val_frac_of_train: 0.25 }
    }
}

/// Everything downstream code needs from one watershed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub weights: Vec<f64>,
    pub scaler: Scaler,
    pub all: WindowedDataset,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
}

fn check_grids(grid: &GridSpec, series: &SeriesTable) -> Result<()> {
    if grid.len() != series.grid_count() {
        return Err(Error::dim(format!(
            "grid file lists {} cells, series has {}",
            grid.len(),
            series.grid_count()
        )));
    }
    Ok(())
}

fn weighted_rows(grid: &GridSpec, series: &SeriesTable, cfg: &PipelineConfig) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_grids(grid, series)?;
    let weights = distance_weights(&grid.distances_km, cfg.weight_exponent, cfg.weight_floor_km)?;
    let weighted = SeriesTable {
        precip: apply_weights(&series.precip, &weights)?,
        ..series.clone()
    };
    Ok((weights, weighted.feature_rows()))
}

/// Weight, scale (statistics from the training block only), window and split.
pub fn prepare(grid: &GridSpec, series: &SeriesTable, cfg: &PipelineConfig) -> Result<Prepared> {
    prepare_inner(grid, series, cfg, None)
}

/// Like [`prepare`] but reuses a scaler fitted elsewhere (a checkpoint's).
pub fn prepare_with_scaler(
    grid: &GridSpec,
    series: &SeriesTable,
    cfg: &PipelineConfig,
    scaler: &Scaler,
) -> Result<Prepared> {
    prepare_inner(grid, series, cfg, Some(scaler))
}

fn prepare_inner(
    grid: &GridSpec,
    series: &SeriesTable,
    cfg: &PipelineConfig,
    scaler: Option<&Scaler>,
) -> Result<Prepared> {
    if cfg.lag == 0 {
        return Err(Error::param("lag must be at least 1"));
    }
    if series.len() <= cfg.lag {
        return Err(Error::InsufficientHistory { len: series.len(), lag: cfg.lag });
    }
    let (weights, rows) = weighted_rows(grid, series, cfg)?;
    let n = series.len() - cfg.lag;
    let (n_train, _, _) = split_counts(n, cfg.train_frac, cfg.val_frac_of_train)?;
    let scaler = match scaler {
        Some(s) => {
            if s.width() != rows[0].len() {
                return Err(Error::dim(format!("scaler has {} columns, data has {}", s.width(), rows[0].len())));
            }
            s.clone()
        }
        // training windows draw on days [0, lag + n_train)
        None => Scaler::fit(&rows[..cfg.lag + n_train])?,
    };
    let scaled = scaler.transform(&rows)?;
    let table = SeriesTable::from_feature_rows(series.dates.clone(), &scaled, grid.len());
    let all = make_windows(&table, cfg.lag)?;
    let (train, val, test) = split(&all, cfg.train_frac, cfg.val_frac_of_train)?;
    Ok(Prepared { weights, scaler, all, train, val, test })
}
