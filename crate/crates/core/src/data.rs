//! Dataset ingestion, time-ordered splits, sliding windows and z-score
//! normalization.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

/// Contiguous, ordered, non-overlapping row ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn from_sizes(train: usize, validation: usize, test: usize) -> Self {
        Self {
            train: 0..train,
            validation: train..train + validation,
            test: train + validation..train + validation + test,
        }
    }

    /// Sizes from fractions of `rows`; the test split takes the remainder.
    pub fn from_fractions(rows: usize, train: f64, validation: f64) -> Result<Self> {
        if !(train > 0.0 && validation >= 0.0 && train + validation <= 1.0) {
            return Err(Error::config(format!(
                "split fractions train={train}, validation={validation} are invalid"
            )));
        }
        let tr = (rows as f64 * train).round() as usize;
        let va = (rows as f64 * validation).round() as usize;
        let va = va.min(rows - tr.min(rows));
        Ok(Self::from_sizes(tr.min(rows), va, rows - tr.min(rows) - va))
    }

    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Validation => self.validation.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    /// `[M × n]`
    pub exogenous: Tensor<f64>,
    /// `[M × d]`
    pub targets: Tensor<f64>,
    pub exogenous_names: Vec<String>,
    pub target_names: Vec<String>,
    pub splits: Splits,
}

impl SeriesDataset {
    pub fn new(
        exogenous: Tensor<f64>,
        targets: Tensor<f64>,
        exogenous_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        let (m, n) = exogenous.rows_cols();
        let (m2, d) = targets.rows_cols();
        if m != m2 || exogenous.shape().len() != 2 || targets.shape().len() != 2 {
            return Err(Error::Shape {
                op: "dataset",
                lhs: exogenous.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        if exogenous_names.len() != n || target_names.len() != d {
            return Err(Error::Data("column names do not match column counts".into()));
        }
        Ok(Self {
            exogenous,
            targets,
            exogenous_names,
            target_names,
            splits: Splits::from_sizes(m, 0, 0),
        })
    }

    pub fn rows(&self) -> usize {
        self.exogenous.rows_cols().0
    }

    pub fn n(&self) -> usize {
        self.exogenous.rows_cols().1
    }

    pub fn d(&self) -> usize {
        self.targets.rows_cols().1
    }

    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        let ordered = splits.train.start == 0
            && splits.train.end == splits.validation.start
            && splits.validation.end == splits.test.start
            && splits.test.end <= self.rows()
            && splits.train.start <= splits.train.end
            && splits.validation.start <= splits.validation.end
            && splits.test.start <= splits.test.end;
        if !ordered {
            return Err(Error::Data(format!(
                "splits {:?}/{:?}/{:?} are not contiguous and ordered within {} rows",
                splits.train,
                splits.validation,
                splits.test,
                self.rows()
            )));
        }
        if splits.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        self.splits = splits;
        Ok(self)
    }
}

/// Reads a CSV with a header row, `n` exogenous columns followed by `d`
/// target columns, one time step per row.
pub fn load_csv(path: impl AsRef<Path>, n: usize, d: usize) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: display.clone(),
            row: 0,
            column: 0,
            message: e.to_string(),
        })?
        .clone();
    if header.len() != n + d {
        return Err(Error::Csv {
            path: display,
            row: 0,
            column: header.len(),
            message: format!(
                "header has {} columns but n + d = {} + {} = {}",
                header.len(),
                n,
                d,
                n + d
            ),
        });
    }
    let names: Vec<String> = header.iter().map(str::to_owned).collect();
    let mut exo = Vec::new();
    let mut tgt = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Csv {
            path: display.clone(),
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != n + d {
            return Err(Error::Csv {
                path: display,
                row,
                column: record.len(),
                message: format!("expected {} columns, found {}", n + d, record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                path: display.clone(),
                row,
                column: j + 1,
                message: format!("non-numeric value `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    path: display.clone(),
                    row,
                    column: j + 1,
                    message: format!("non-finite value `{cell}`"),
                });
            }
            if j < n {
                exo.push(v);
            } else {
                tgt.push(v);
            }
        }
    }
    let m = exo.len() / n.max(1);
    if m == 0 {
        return Err(Error::Data(format!("{display}: no data rows")));
    }
    SeriesDataset::new(
        Tensor::matrix(m, n, exo)?,
        Tensor::matrix(m, d, tgt)?,
        names[..n].to_vec(),
        names[n..].to_vec(),
    )
}

pub fn write_csv(dataset: &SeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(dataset.exogenous_names.iter().chain(&dataset.target_names))
        .map_err(csv_err)?;
    for r in 0..dataset.rows() {
        let cells = dataset
            .exogenous
            .row(r)
            .iter()
            .chain(dataset.targets.row(r))
            .map(|v| format!("{v:?}"));
        w.write_record(cells).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// One sample: `T−1` consecutive input rows and the target at the next row.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `[(T−1) × n]`
    pub x: Tensor<f64>,
    /// `[(T−1) × d]`
    pub y: Tensor<f64>,
    pub target: Vec<f64>,
    /// Dataset row of the first input step.
    pub start: usize,
}

impl Window {
    pub fn steps(&self) -> usize {
        self.x.rows_cols().0
    }

    /// Dataset row of the target.
    pub fn target_row(&self) -> usize {
        self.start + self.steps()
    }
}

pub fn window_count(rows: usize, window: usize) -> usize {
    if rows >= window {
        rows - window + 1
    } else {
        0
    }
}

/// Stride-1 windows lying entirely inside `rows`.
pub fn make_windows_in(dataset: &SeriesDataset, rows: Range<usize>, window: usize, label: &str) -> Result<Vec<Window>> {
    if window < 2 {
        return Err(Error::config(format!("window size T must be at least 2, got {window}")));
    }
    if rows.len() < window {
        return Err(Error::SplitTooShort {
            split: label.to_owned(),
            len: rows.len(),
            window,
        });
    }
    let (n, d) = (dataset.n(), dataset.d());
    let steps = window - 1;
    let mut out = Vec::with_capacity(window_count(rows.len(), window));
    for start in rows.start..=rows.end - window {
        let x = dataset.exogenous.data()[start * n..(start + steps) * n].to_vec();
        let y = dataset.targets.data()[start * d..(start + steps) * d].to_vec();
        out.push(Window {
            x: Tensor::matrix(steps, n, x)?,
            y: Tensor::matrix(steps, d, y)?,
            target: dataset.targets.row(start + steps).to_vec(),
            start,
        });
    }
    Ok(out)
}

pub fn make_windows(dataset: &SeriesDataset, split: Split, window: usize) -> Result<Vec<Window>> {
    make_windows_in(dataset, dataset.splits.get(split), window, &split.to_string())
}

/// Per-feature mean and population standard deviation from the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub exogenous_mean: Vec<f64>,
    pub exogenous_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
    pub exogenous_constant: Vec<bool>,
    pub target_constant: Vec<bool>,
}

fn column_stats(t: &Tensor<f64>, rows: Range<usize>) -> (Vec<f64>, Vec<f64>) {
    let cols = t.rows_cols().1;
    let count = rows.len() as f64;
    let mut mean = vec![0.0; cols];
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(t.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; cols];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(t.row(r)).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let std = var.into_iter().map(|s| (s / count).sqrt()).collect();
    (mean, std)
}

impl NormalizationStats {
    pub fn from_training(dataset: &SeriesDataset) -> Self {
        let rows = dataset.splits.train.clone();
        let (exogenous_mean, exogenous_std) = column_stats(&dataset.exogenous, rows.clone());
        let (target_mean, target_std) = column_stats(&dataset.targets, rows);
        let flag = |s: &Vec<f64>| s.iter().map(|&v| v == 0.0).collect();
        Self {
            exogenous_constant: flag(&exogenous_std),
            target_constant: flag(&target_std),
            exogenous_mean,
            exogenous_std,
            target_mean,
            target_std,
        }
    }

    /// Maps raw-scale target vectors back from the normalized scale.
    pub fn denormalize_targets(&self, values: &[Vec<f64>]) -> Vec<Vec<f64>> {
        values
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.target_mean)
                    .zip(&self.target_std)
                    .map(|((v, m), s)| v * s + m)
                    .collect()
            })
            .collect()
    }
}

fn apply_zscore(t: &Tensor<f64>, mean: &[f64], std: &[f64]) -> Tensor<f64> {
    let cols = t.rows_cols().1;
    let mut out = t.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let j = i % cols;
        *v = if std[j] == 0.0 { 0.0 } else { (*v - mean[j]) / std[j] };
    }
    out
}

/// Z-scores both streams using statistics from the training split only.
/// Constant features map to zero.
pub fn normalize(dataset: &SeriesDataset) -> (SeriesDataset, NormalizationStats) {
    let stats = NormalizationStats::from_training(dataset);
    (normalize_with(dataset, &stats), stats)
}

/// Z-scores both streams with previously computed statistics.
pub fn normalize_with(dataset: &SeriesDataset, stats: &NormalizationStats) -> SeriesDataset {
    let mut out = dataset.clone();
    out.exogenous = apply_zscore(&dataset.exogenous, &stats.exogenous_mean, &stats.exogenous_std);
    out.targets = apply_zscore(&dataset.targets, &stats.target_mean, &stats.target_std);
    out
}

pub fn denormalize(predictions: &[Vec<f64>], stats: &NormalizationStats) -> Vec<Vec<f64>> {
    stats.denormalize_targets(predictions)
}
