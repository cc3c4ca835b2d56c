//! Time-series container, standardization, history/horizon splitting and
//! plausibility filtering.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered, strictly increasing integer time indices (e.g. month numbers).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct TimeGrid(Vec<i64>);

impl TimeGrid {
    pub fn new(points: Vec<i64>) -> Result<Self> {
        if points.is_empty() || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid);
        }
        Ok(Self(points))
    }

    /// `start, start+1, ..., start+len-1`
    pub fn range(start: i64, len: usize) -> Result<Self> {
        Self::new((0..len as i64).map(|k| start + k).collect())
    }

    pub fn points(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, t: i64) -> Option<usize> {
        self.0.binary_search(&t).ok()
    }

    /// Sorted union of two grids.
    pub fn union(&self, other: &TimeGrid) -> TimeGrid {
        let mut pts: Vec<i64> = self.0.iter().chain(&other.0).copied().collect();
        pts.sort_unstable();
        pts.dedup();
        TimeGrid(pts)
    }

    pub fn as_reals<S: Scalar>(&self) -> Vec<S> {
        self.0.iter().map(|&t| S::lit(t as f64)).collect()
    }
}

impl TryFrom<Vec<i64>> for TimeGrid {
    type Error = Error;

    fn try_from(v: Vec<i64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimeGrid> for Vec<i64> {
    fn from(g: TimeGrid) -> Self {
        g.0
    }
}

/// Dense `(individual, dim, time)` array of measurements with an observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesSet<S> {
    individual_ids: Vec<String>,
    dim_names: Vec<String>,
    grid: TimeGrid,
    values: Vec<S>,
    mask: Vec<bool>,
}

impl<S: Scalar> TimeSeriesSet<S> {
    /// Build a set from flat `(M, d, T)` row-major storage.
    pub fn new(
        individual_ids: Vec<String>,
        dim_names: Vec<String>,
        grid: TimeGrid,
        values: Vec<S>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let expected = individual_ids.len() * dim_names.len() * grid.len();
        if values.len() != expected || mask.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} entries, got {} values and {} mask flags",
                values.len(),
                mask.len()
            )));
        }
        if dim_names.is_empty() {
            return Err(Error::ShapeMismatch("at least one dimension required".into()));
        }
        if values.iter().zip(&mask).any(|(v, &m)| m && !v.is_finite()) {
            return Err(Error::InvalidArgument("observed values must be finite".into()));
        }
        Ok(Self { individual_ids, dim_names, grid, values, mask })
    }

    /// Fully observed set from `series[i][j][t]`.
    pub fn from_complete(grid: TimeGrid, series: &[Vec<Vec<S>>]) -> Result<Self> {
        let d = series.first().map_or(1, Vec::len);
        let ids = (0..series.len()).map(|i| format!("ind{i}")).collect();
        let dims = (0..d).map(|j| format!("dim{j}")).collect();
        let mut values = Vec::with_capacity(series.len() * d * grid.len());
        for s in series {
            if s.len() != d || s.iter().any(|row| row.len() != grid.len()) {
                return Err(Error::ShapeMismatch("ragged series".into()));
            }
            for row in s {
                values.extend_from_slice(row);
            }
        }
        let mask = vec![true; values.len()];
        Self::new(ids, dims, grid, values, mask)
    }

    pub fn n_individuals(&self) -> usize {
        self.individual_ids.len()
    }

    pub fn n_dims(&self) -> usize {
        self.dim_names.len()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn individual_ids(&self) -> &[String] {
        &self.individual_ids
    }

    pub fn dim_names(&self) -> &[String] {
        &self.dim_names
    }

    pub fn with_dim_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_dims() {
            return Err(Error::DimensionMismatch { expected: self.n_dims(), got: names.len() });
        }
        self.dim_names = names;
        Ok(self)
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.n_dims() + j) * self.grid.len()
    }

    /// Values of individual `i`, dimension `j` over the whole grid.
    pub fn series(&self, i: usize, j: usize) -> &[S] {
        let o = self.offset(i, j);
        &self.values[o..o + self.grid.len()]
    }

    pub fn series_mask(&self, i: usize, j: usize) -> &[bool] {
        let o = self.offset(i, j);
        &self.mask[o..o + self.grid.len()]
    }

    pub fn value(&self, i: usize, j: usize, t: usize) -> S {
        self.values[self.offset(i, j) + t]
    }

    pub fn is_observed(&self, i: usize, j: usize, t: usize) -> bool {
        self.mask[self.offset(i, j) + t]
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Observed `(time index, value)` pairs of one individual and dimension.
    pub fn observed(&self, i: usize, j: usize) -> (Vec<i64>, Vec<S>) {
        let mut ts = Vec::new();
        let mut ys = Vec::new();
        for (t, (&v, &m)) in self.series(i, j).iter().zip(self.series_mask(i, j)).enumerate() {
            if m {
                ts.push(self.grid.points()[t]);
                ys.push(v);
            }
        }
        (ts, ys)
    }

    /// One individual's complete `(d, T)` matrix as rows per dimension.
    pub fn individual(&self, i: usize) -> Vec<Vec<S>> {
        (0..self.n_dims()).map(|j| self.series(i, j).to_vec()).collect()
    }

    /// Subset of individuals, in the given order.
    pub fn select_individuals(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::new();
        let mut mask = Vec::new();
        let mut ids = Vec::new();
        for &i in idx {
            if i >= self.n_individuals() {
                return Err(Error::IndexOutOfRange { index: i, len: self.n_individuals() });
            }
            ids.push(self.individual_ids[i].clone());
            for j in 0..self.n_dims() {
                values.extend_from_slice(self.series(i, j));
                mask.extend_from_slice(self.series_mask(i, j));
            }
        }
        Self::new(ids, self.dim_names.clone(), self.grid.clone(), values, mask)
    }

    /// Keep a single dimension.
    pub fn select_dim(&self, j: usize) -> Result<Self> {
        if j >= self.n_dims() {
            return Err(Error::IndexOutOfRange { index: j, len: self.n_dims() });
        }
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for i in 0..self.n_individuals() {
            values.extend_from_slice(self.series(i, j));
            mask.extend_from_slice(self.series_mask(i, j));
        }
        Self::new(
            self.individual_ids.clone(),
            vec![self.dim_names[j].clone()],
            self.grid.clone(),
            values,
            mask,
        )
    }

    /// Restrict to the contiguous grid positions `range`.
    fn slice_time(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let grid = TimeGrid::new(self.grid.points()[range.clone()].to_vec())?;
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for i in 0..self.n_individuals() {
            for j in 0..self.n_dims() {
                values.extend_from_slice(&self.series(i, j)[range.clone()]);
                mask.extend_from_slice(&self.series_mask(i, j)[range.clone()]);
            }
        }
        Self::new(self.individual_ids.clone(), self.dim_names.clone(), grid, values, mask)
    }

    fn map_observed(&self, f: impl Fn(usize, S) -> S) -> Self {
        let mut out = self.clone();
        let (t, d) = (self.grid.len(), self.n_dims());
        for (k, (v, &m)) in out.values.iter_mut().zip(&self.mask).enumerate() {
            if m {
                *v = f((k / t) % d, *v);
            }
        }
        out
    }
}

/// Per-dimension mean and (unbiased) standard deviation of a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct StandardizationParams<S> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

impl<S: Scalar> StandardizationParams<S> {
    pub fn new(mean: Vec<S>, std: Vec<S>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: std.len() });
        }
        if let Some(dim) = std.iter().position(|&s| !(s > S::zero())) {
            return Err(Error::ZeroVariance { dim });
        }
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self { mean: vec![S::zero(); d], std: vec![S::one(); d] }
    }
}

/// Per-dimension mean and sample standard deviation over observed entries.
pub fn fit_standardizer<S: Scalar>(train: &TimeSeriesSet<S>) -> Result<StandardizationParams<S>> {
    let mut mean = Vec::with_capacity(train.n_dims());
    let mut std = Vec::with_capacity(train.n_dims());
    for j in 0..train.n_dims() {
        let vals: Vec<S> = (0..train.n_individuals())
            .flat_map(|i| {
                train
                    .series(i, j)
                    .iter()
                    .zip(train.series_mask(i, j))
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| v)
            })
            .collect();
        if vals.len() < 2 {
            return Err(Error::EmptyDimension { dim: j });
        }
        let n = S::from_usize_lossy(vals.len());
        let m = vals.iter().copied().sum::<S>() / n;
        let ss: S = vals.iter().map(|&v| (v - m) * (v - m)).sum();
        let s = (ss / (n - S::one())).sqrt();
        if !(s > S::zero()) {
            return Err(Error::ZeroVariance { dim: j });
        }
        mean.push(m);
        std.push(s);
    }
    Ok(StandardizationParams { mean, std })
}

pub fn standardize<S: Scalar>(
    data: &TimeSeriesSet<S>,
    params: &StandardizationParams<S>,
) -> Result<TimeSeriesSet<S>> {
    check_dims(data, params)?;
    Ok(data.map_observed(|j, x| (x - params.mean[j]) / params.std[j]))
}

pub fn destandardize<S: Scalar>(
    data: &TimeSeriesSet<S>,
    params: &StandardizationParams<S>,
) -> Result<TimeSeriesSet<S>> {
    check_dims(data, params)?;
    Ok(data.map_observed(|j, x| x * params.std[j] + params.mean[j]))
}

fn check_dims<S: Scalar>(data: &TimeSeriesSet<S>, params: &StandardizationParams<S>) -> Result<()> {
    if data.n_dims() != params.mean.len() {
        return Err(Error::DimensionMismatch { expected: params.mean.len(), got: data.n_dims() });
    }
    Ok(())
}

/// Number of leading grid points used as history and trailing points to forecast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub history_len: usize,
    pub horizon_len: usize,
}

impl SplitSpec {
    pub fn new(history_len: usize, horizon_len: usize) -> Result<Self> {
        if history_len == 0 || horizon_len == 0 {
            return Err(Error::InvalidSplit);
        }
        Ok(Self { history_len, horizon_len })
    }

    pub fn validate(&self, grid_len: usize) -> Result<()> {
        if self.history_len == 0 || self.horizon_len == 0 {
            return Err(Error::InvalidSplit);
        }
        if self.history_len + self.horizon_len > grid_len {
            return Err(Error::SplitTooLong {
                history: self.history_len,
                horizon: self.horizon_len,
                len: grid_len,
            });
        }
        Ok(())
    }
}

/// First `history_len` grid points and the following `horizon_len` points.
pub fn split_history_horizon<S: Scalar>(
    data: &TimeSeriesSet<S>,
    spec: SplitSpec,
) -> Result<(TimeSeriesSet<S>, TimeSeriesSet<S>)> {
    spec.validate(data.grid().len())?;
    let h = spec.history_len;
    Ok((data.slice_time(0..h)?, data.slice_time(h..h + spec.horizon_len)?))
}

/// Measurement families with plausibility bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DimKind {
    Bmi,
    SleepDurationMinutes,
}

impl DimKind {
    /// Recognizes `BMI` and `Sleep`/`SleepDurationMinutes` (case-insensitive).
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bmi" => Some(Self::Bmi),
            "sleep" | "sleepdurationminutes" | "sleep_duration_minutes" => {
                Some(Self::SleepDurationMinutes)
            }
            _ => None,
        }
    }
}

/// Closed-interval plausibility check: BMI in [10, 65], sleep in [45, 1200] minutes.
pub fn validate_record(kind: DimKind, value: f64) -> bool {
    let (lo, hi) = match kind {
        DimKind::Bmi => (10.0, 65.0),
        DimKind::SleepDurationMinutes => (45.0, 20.0 * 60.0),
    };
    value.is_finite() && (lo..=hi).contains(&value)
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    individual_id: String,
    dim_name: String,
    time_index: i64,
    value: f64,
}

/// Outcome of CSV ingestion.
#[derive(Debug)]
pub struct Ingested<S> {
    pub data: TimeSeriesSet<S>,
    pub dropped_rows: usize,
}

/// Read long-format CSV `individual_id,dim_name,time_index,value`.
///
/// Rows failing [`validate_record`] for a recognized dimension are dropped.
/// Individuals and dimensions keep first-appearance order; the grid is the
/// sorted set of all time indices, and absent cells are masked out.
pub fn read_csv<S: Scalar, R: Read>(reader: R) -> Result<Ingested<S>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut ids: Vec<String> = Vec::new();
    let mut id_pos: BTreeMap<String, usize> = BTreeMap::new();
    let mut dims: Vec<String> = Vec::new();
    let mut dim_pos: BTreeMap<String, usize> = BTreeMap::new();
    let mut cells: Vec<(usize, usize, i64, f64)> = Vec::new();
    let mut dropped = 0usize;
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        if let Some(kind) = DimKind::from_name(&row.dim_name) {
            if !validate_record(kind, row.value) {
                dropped += 1;
                continue;
            }
        } else if !row.value.is_finite() {
            dropped += 1;
            continue;
        }
        let i = *id_pos.entry(row.individual_id.clone()).or_insert_with(|| {
            ids.push(row.individual_id.clone());
            ids.len() - 1
        });
        let j = *dim_pos.entry(row.dim_name.clone()).or_insert_with(|| {
            dims.push(row.dim_name.clone());
            dims.len() - 1
        });
        cells.push((i, j, row.time_index, row.value));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} implausible rows during CSV ingestion");
    }
    if cells.is_empty() {
        return Err(Error::InvalidArgument("CSV contains no usable rows".into()));
    }
    let mut pts: Vec<i64> = cells.iter().map(|c| c.2).collect();
    pts.sort_unstable();
    pts.dedup();
    let grid = TimeGrid::new(pts)?;
    let (m, d, t) = (ids.len(), dims.len(), grid.len());
    let mut values = vec![S::zero(); m * d * t];
    let mut mask = vec![false; m * d * t];
    for (i, j, time, v) in cells {
        let k = (i * d + j) * t + grid.position(time).expect("grid built from cells");
        values[k] = S::lit(v);
        mask[k] = true;
    }
    Ok(Ingested { data: TimeSeriesSet::new(ids, dims, grid, values, mask)?, dropped_rows: dropped })
}

/// Write the observed cells in the long CSV format read by [`read_csv`].
pub fn write_csv<S: Scalar, W: Write>(data: &TimeSeriesSet<S>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for i in 0..data.n_individuals() {
        for j in 0..data.n_dims() {
            for (t, &time) in data.grid().points().iter().enumerate() {
                if data.is_observed(i, j, t) {
                    w.serialize(CsvRow {
                        individual_id: data.individual_ids()[i].clone(),
                        dim_name: data.dim_names()[j].clone(),
                        time_index: time,
                        value: data.value(i, j, t).as_f64(),
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
