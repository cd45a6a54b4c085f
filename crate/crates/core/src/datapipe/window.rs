use std::ops::Range;

use chrono::NaiveDate;

use super::SeriesTable;
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Supervised samples for the two-input network.
///
/// Sample `n` predicts day `t = lag + n`: Input 1 holds the feature rows of
/// days `t-lag .. t-1` (weighted precipitation, runoff, past discharge),
/// Input 2 holds day `t`'s precipitation and runoff, the target is day `t`'s
/// discharge.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub lag: usize,
    pub grid_count: usize,
    pub has_runoff: bool,
    input1: Vec<f64>,
    input2: Vec<f64>,
    pub target: Vec<f64>,
    /// Row of the source series each target came from.
    pub day_index: Vec<usize>,
    pub dates: Vec<NaiveDate>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Columns per Input 1 row: `2L + 1`, or `L + 1` without runoff.
    pub fn input1_width(&self) -> usize {
        if self.has_runoff {
            2 * self.grid_count + 1
        } else {
            self.grid_count + 1
        }
    }

    pub fn input2_width(&self) -> usize {
        self.input1_width() - 1
    }

    pub fn input1_shape(&self) -> (usize, usize) {
        (self.lag, self.input1_width())
    }

    pub fn input1(&self, n: usize) -> Tensor {
        let size = self.lag * self.input1_width();
        Tensor::from_parts(vec![self.lag, self.input1_width()], self.input1[n * size..(n + 1) * size].to_vec())
    }

    pub fn input2(&self, n: usize) -> Tensor {
        let w = self.input2_width();
        Tensor::from_parts(vec![w], self.input2[n * w..(n + 1) * w].to_vec())
    }

    pub fn slice(&self, range: Range<usize>) -> WindowedDataset {
        let s1 = self.lag * self.input1_width();
        let s2 = self.input2_width();
        WindowedDataset {
            lag: self.lag,
            grid_count: self.grid_count,
            has_runoff: self.has_runoff,
            input1: self.input1[range.start * s1..range.end * s1].to_vec(),
            input2: self.input2[range.start * s2..range.end * s2].to_vec(),
            target: self.target[range.clone()].to_vec(),
            day_index: self.day_index[range.clone()].to_vec(),
            dates: self.dates[range].to_vec(),
        }
    }

    /// Same samples with every runoff column removed.
    pub fn without_runoff(&self) -> WindowedDataset {
        if !self.has_runoff {
            return self.clone();
        }
        let l = self.grid_count;
        let w1 = self.input1_width();
        let mut input1 = Vec::with_capacity(self.len() * self.lag * (l + 1));
        for row in self.input1.chunks_exact(w1) {
            input1.extend_from_slice(&row[..l]);
            input1.push(row[2 * l]);
        }
        let input2 = self.input2.chunks_exact(2 * l).flat_map(|r| r[..l].iter().copied()).collect();
        WindowedDataset { has_runoff: false, input1, input2, ..self.clone() }
    }
}

/// Slides a `lag`-day window one day at a time over an already weighted and
/// scaled series; yields `T - lag` samples.
pub fn make_windows(series: &SeriesTable, lag: usize) -> Result<WindowedDataset> {
    if lag == 0 {
        return Err(Error::param("lag must be at least 1"));
    }
    let t_len = series.len();
    if t_len <= lag {
        return Err(Error::InsufficientHistory { len: t_len, lag });
    }
    let l = series.grid_count();
    let rows = series.feature_rows();
    let n = t_len - lag;
    let mut input1 = Vec::with_capacity(n * lag * (2 * l + 1));
    let mut input2 = Vec::with_capacity(n * 2 * l);
    let mut target = Vec::with_capacity(n);
    for t in lag..t_len {
        for row in &rows[t - lag..t] {
            input1.extend_from_slice(row);
        }
        input2.extend_from_slice(&rows[t][..2 * l]);
        target.push(rows[t][2 * l]);
    }
    Ok(WindowedDataset {
        lag,
        grid_count: l,
        has_runoff: true,
        input1,
        input2,
        target,
        day_index: (lag..t_len).collect(),
        dates: series.dates[lag..].to_vec(),
    })
}

/// `(train, validation, test)` sizes: the first `floor(train_frac * n)`
/// samples are split again, `floor((1 - val_frac) * ·)` to training and the
/// remainder to validation; everything after goes to test.
pub fn split_counts(n: usize, train_frac: f64, val_frac_of_train: f64) -> Result<(usize, usize, usize)> {
    for (name, f) in [("train fraction", train_frac), ("validation fraction", val_frac_of_train)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::param(format!("{name} {f} outside [0, 1]")));
        }
    }
    // guards against 0.7 * 10 landing a hair under 7
    let floor = |x: f64| (x + 1e-9).floor() as usize;
    let n_fit = floor(train_frac * n as f64).min(n);
    let n_train = floor((1.0 - val_frac_of_train) * n_fit as f64).min(n_fit);
    Ok((n_train, n_fit - n_train, n - n_fit))
}

/// Chronological contiguous split; no shuffling.
pub fn split(
    ds: &WindowedDataset,
    train_frac: f64,
    val_frac_of_train: f64,
) -> Result<(WindowedDataset, WindowedDataset, WindowedDataset)> {
    let (a, b, _) = split_counts(ds.len(), train_frac, val_frac_of_train)?;
    Ok((ds.slice(0..a), ds.slice(a..a + b), ds.slice(a + b..ds.len())))
}
