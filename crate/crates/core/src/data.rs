//! Normalization, time-window flattening and chronological splitting of
//! multivariate process series.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math::sqrt;
use crate::matrix::Matrix;

/// `T × d` process measurements with one state label per timestep
/// (0 = normal, `f ≥ 1` = fault id).
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub values: Matrix,
    pub labels: Vec<usize>,
    pub variable_names: Vec<String>,
    /// Minutes between rows.
    pub sampling_interval: f64,
    /// Index of row 0 on the timeline of the series it was cut from.
    pub start: usize,
}

impl RawSeries {
    pub fn new(values: Matrix, labels: Vec<usize>, variable_names: Vec<String>) -> Result<Self> {
        let s = Self {
            values,
            labels,
            variable_names,
            sampling_interval: 1.0,
            start: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("label count", self.values.rows(), self.labels.len())?;
        check_dim("variable names", self.values.cols(), self.variable_names.len())?;
        if !self.values.is_finite() {
            return Err(Error::InvalidParameter("series contains NaN or infinite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.values.cols()
    }

    /// Rows `range`, keeping the timeline offset.
    pub fn slice(&self, from: usize, to: usize) -> RawSeries {
        let idx: Vec<usize> = (from..to).collect();
        RawSeries {
            values: self.values.select_rows(&idx),
            labels: self.labels[from..to].to_vec(),
            variable_names: self.variable_names.clone(),
            sampling_interval: self.sampling_interval,
            start: self.start + from,
        }
    }
}

/// Per-variable mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Columns whose standard deviation falls below this are stored with std 1.
pub const CONSTANT_COLUMN_STD: f64 = 1e-12;

impl Normalizer {
    /// Fits on the rows of every given series (training data only).
    pub fn fit(series: &[&RawSeries]) -> Result<Self> {
        let d = series.first().map(|s| s.dims()).ok_or(Error::Empty("series"))?;
        let rows: usize = series.iter().map(|s| s.len()).sum();
        if rows == 0 {
            return Err(Error::Empty("series"));
        }
        let mut mean = alloc::vec![0.0; d];
        for s in series {
            check_dim("variable count", d, s.dims())?;
            for r in s.values.iter_rows() {
                mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = alloc::vec![0.0; d];
        for s in series {
            for r in s.values.iter_rows() {
                for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = sqrt(v / rows as f64);
                if s < CONSTANT_COLUMN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, series: &RawSeries) -> Result<RawSeries> {
        check_dim("variable count", self.dims(), series.dims())?;
        let values = Matrix::from_fn(series.len(), series.dims(), |i, j| {
            (series.values.get(i, j) - self.mean[j]) / self.std[j]
        });
        Ok(RawSeries {
            values,
            ..series.clone()
        })
    }
}

/// How a window's label is derived from the labels it covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LabelRule {
    /// Label of the last timestep.
    #[default]
    Last,
    /// Latest non-normal label in the window, or normal if there is none.
    Any,
}

impl LabelRule {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelRule::Last => "last",
            LabelRule::Any => "any",
        }
    }
}

/// Stride-1 sliding windows flattened timestep-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    /// `(T − N + 1) × N·d`.
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub window_length: usize,
    pub source_dims: usize,
    /// Timeline index of each window's first row.
    pub window_starts: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Timeline index of each window's last row.
    pub fn window_ends(&self) -> Vec<usize> {
        self.window_starts.iter().map(|s| s + self.window_length - 1).collect()
    }

    /// Rows of the variables at offset `t` inside window `w`.
    pub fn timestep(&self, w: usize, t: usize) -> &[f64] {
        let d = self.source_dims;
        &self.samples.row(w)[t * d..(t + 1) * d]
    }

    pub fn select(&self, indices: &[usize]) -> WindowedDataset {
        WindowedDataset {
            samples: self.samples.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            window_length: self.window_length,
            source_dims: self.source_dims,
            window_starts: indices.iter().map(|&i| self.window_starts[i]).collect(),
        }
    }

    /// Windows whose label satisfies `keep`.
    pub fn filter_labels(&self, keep: impl Fn(usize) -> bool) -> WindowedDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.select(&idx)
    }

    /// Stacks datasets with the same window shape.
    pub fn concat(parts: &[WindowedDataset]) -> Result<WindowedDataset> {
        let first = parts.first().ok_or(Error::Empty("datasets"))?;
        let mats: Vec<&Matrix> = parts.iter().map(|p| &p.samples).collect();
        for p in parts {
            check_dim("window length", first.window_length, p.window_length)?;
        }
        Ok(WindowedDataset {
            samples: Matrix::vstack(&mats)?,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            window_length: first.window_length,
            source_dims: first.source_dims,
            window_starts: parts.iter().flat_map(|p| p.window_starts.iter().copied()).collect(),
        })
    }
}

pub fn window(series: &RawSeries, length: usize, rule: LabelRule) -> Result<WindowedDataset> {
    if length == 0 {
        return Err(Error::InvalidParameter("window length must be >= 1".into()));
    }
    let t = series.len();
    if length > t {
        return Err(Error::InvalidParameter(format!(
            "window length {length} exceeds series length {t}"
        )));
    }
    let d = series.dims();
    let count = t - length + 1;
    let mut data = Vec::with_capacity(count * length * d);
    let mut labels = Vec::with_capacity(count);
    for w in 0..count {
        for r in w..w + length {
            data.extend_from_slice(series.values.row(r));
        }
        let covered = &series.labels[w..w + length];
        labels.push(match rule {
            LabelRule::Last => covered[length - 1],
            LabelRule::Any => covered.iter().rev().copied().find(|&l| l != 0).unwrap_or(0),
        });
    }
    Ok(WindowedDataset {
        samples: Matrix::from_vec(count, length * d, data)?,
        labels,
        window_length: length,
        source_dims: d,
        window_starts: (series.start..series.start + count).collect(),
    })
}

/// Chronological split of a series: the first `floor(T·ratio)` rows train,
/// the rest test. Windowing each side separately keeps every window on one
/// side of the boundary.
pub fn split_series(series: &RawSeries, ratio: f64) -> Result<(RawSeries, RawSeries)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let cut = libm::floor(series.len() as f64 * ratio) as usize;
    if cut == 0 || cut == series.len() {
        return Err(Error::InvalidParameter(format!(
            "split of {} rows at ratio {ratio} leaves one side empty",
            series.len()
        )));
    }
    Ok((series.slice(0, cut), series.slice(cut, series.len())))
}
