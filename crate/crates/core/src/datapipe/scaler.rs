use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column min-max scaling to `[0, 1]`.
///
/// A column whose training minimum equals its maximum is degenerate and maps
/// to `0.0`; such columns are listed in `degenerate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    #[serde(default)]
    pub degenerate: Vec<usize>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(Vec::len).ok_or_else(|| Error::param("cannot fit a scaler on zero rows"))?;
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for row in rows {
            if row.len() != width {
                return Err(Error::dim("ragged rows"));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite("scaler input"));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        let degenerate: Vec<usize> = (0..width).filter(|&j| max[j] == min[j]).collect();
        if !degenerate.is_empty() {
            log::warn!("degenerate (constant) columns mapped to 0: {degenerate:?}");
        }
        Ok(Self { min, max, degenerate })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    #[inline]
    fn forward(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span == 0.0 {
            0.0
        } else {
            (v - self.min[j]) / span
        }
    }

    #[inline]
    fn backward(&self, j: usize, v: f64) -> f64 {
        self.min[j] + v * (self.max[j] - self.min[j])
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|row| {
                if row.len() != self.width() {
                    return Err(Error::dim(format!("row of {} vs scaler of {}", row.len(), self.width())));
                }
                Ok(row.iter().enumerate().map(|(j, &v)| self.forward(j, v)).collect())
            })
            .collect()
    }

    pub fn inverse_transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|row| {
                if row.len() != self.width() {
                    return Err(Error::dim("row width differs from scaler"));
                }
                Ok(row.iter().enumerate().map(|(j, &v)| self.backward(j, v)).collect())
            })
            .collect()
    }

    /// Maps normalized discharge (the last column) back to m³/s.
    pub fn inverse_transform_discharge(&self, values: &[f64]) -> Vec<f64> {
        let j = self.width() - 1;
        values.iter().map(|&v| self.backward(j, v)).collect()
    }

    pub fn transform_discharge(&self, values: &[f64]) -> Vec<f64> {
        let j = self.width() - 1;
        values.iter().map(|&v| self.forward(j, v)).collect()
    }
}
