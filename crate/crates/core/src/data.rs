//! Synthetic datasets and CSV time-series ingestion.

use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgpError, Result};
use crate::gp::{DataSegment, GaussianBelief};
use crate::kernel::{inputs_1d, KernelSpec};
use crate::mc::standard_normal;
use crate::model::{GpModel, MeanSpec};
use crate::psd::{cholesky_jittered, PsdMatrix};

/// Largest grid side for which the random field is sampled by dense Cholesky.
pub const MAX_GRID_SIDE: usize = 64;

/// Draws latent values and noisy observations from a GP prior at fixed inputs.
///
/// The Cholesky factor is computed once, so repeated draws only cost a
/// triangular product each.
#[derive(Debug, Clone)]
pub struct GpSampler {
    x: DMatrix<f64>,
    mean: DVector<f64>,
    l: DMatrix<f64>,
    noise_sd: f64,
}

impl GpSampler {
    pub fn new(model: &GpModel, x: &DMatrix<f64>) -> Result<Self> {
        model.check_inputs(x)?;
        let f = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.gram(x)?))?;
        Ok(GpSampler {
            x: x.clone(),
            mean: model.mean.eval(x),
            l: f.l().clone(),
            noise_sd: model.kernel.noise_var().sqrt(),
        })
    }

    /// One joint draw; identical for identical seeds.
    pub fn draw(&self, seed: u64) -> SimulatedData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.mean.len();
        let latent = &self.mean + &self.l * standard_normal(&mut rng, n);
        let y = &latent + standard_normal(&mut rng, n) * self.noise_sd;
        SimulatedData {
            x: self.x.clone(),
            latent,
            y,
            train_idx: (0..n).collect(),
            test_idx: Vec::new(),
        }
    }
}

/// One simulated dataset with a train/test split over its points.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub x: DMatrix<f64>,
    pub latent: DVector<f64>,
    pub y: DVector<f64>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl SimulatedData {
    fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.x.ncols(), |i, j| self.x[(idx[i], j)])
    }

    fn pick(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
    }

    /// Leading `n_train` points for training and the rest for testing.
    pub fn split_tail(mut self, n_train: usize) -> Result<Self> {
        let n = self.y.len();
        if n_train == 0 || n_train > n {
            return Err(CgpError::InvalidInput(format!("cannot train on {n_train} of {n} points")));
        }
        self.train_idx = (0..n_train).collect();
        self.test_idx = (n_train..n).collect();
        Ok(self)
    }

    pub fn train(&self) -> Result<DataSegment> {
        DataSegment::new(self.rows(&self.train_idx), Self::pick(&self.y, &self.train_idx))
    }

    pub fn test_x(&self) -> DMatrix<f64> {
        self.rows(&self.test_idx)
    }

    pub fn test_latent(&self) -> DVector<f64> {
        Self::pick(&self.latent, &self.test_idx)
    }

    pub fn test_y(&self) -> DVector<f64> {
        Self::pick(&self.y, &self.test_idx)
    }
}

/// Series at `t = 0, 1, …, n_train + n_test − 1`; the last `n_test` points are held out.
pub fn simulate_gp_series(model: &GpModel, n_train: usize, n_test: usize, seed: u64) -> Result<SimulatedData> {
    let t: Vec<f64> = (0..n_train + n_test).map(|i| i as f64).collect();
    GpSampler::new(model, &inputs_1d(&t))?.draw(seed).split_tail(n_train)
}

/// Grid cells `(row, col)` of the centered test block: `side/4` rows by `side/2` columns.
pub fn grf_test_block(side: usize) -> Vec<(usize, usize)> {
    let (h, w) = ((side / 4).max(1), (side / 2).max(1));
    let (r0, c0) = ((side - h) / 2, (side - w) / 2);
    (r0..r0 + h)
        .flat_map(|r| (c0..c0 + w).map(move |c| (r, c)))
        .collect()
}

/// Configuration of a Gaussian random field draw on a `side × side` unit grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfConfig {
    pub side: usize,
    pub alpha: f64,
    pub theta1: f64,
    pub theta2: f64,
    #[serde(default = "GrfConfig::default_noise")]
    pub noise_var: f64,
}

impl GrfConfig {
    fn default_noise() -> f64 {
        0.01
    }

    pub fn model(&self) -> Result<GpModel> {
        Ok(GpModel::zero_mean(KernelSpec::se2d_ard(
            self.alpha,
            self.theta1,
            self.theta2,
            self.noise_var,
        )?))
    }

    /// Cell coordinates, row-major; row index in the first column.
    pub fn inputs(&self) -> DMatrix<f64> {
        let s = self.side;
        DMatrix::from_fn(s * s, 2, |i, j| if j == 0 { (i / s) as f64 } else { (i % s) as f64 })
    }
}

/// One field draw with the centered block held out for testing.
pub fn simulate_grf(cfg: &GrfConfig, seed: u64) -> Result<SimulatedData> {
    if cfg.side == 0 || cfg.side > MAX_GRID_SIDE {
        return Err(CgpError::InvalidInput(format!(
            "grid side must be in 1..={MAX_GRID_SIDE}, got {}",
            cfg.side
        )));
    }
    let mut data = GpSampler::new(&cfg.model()?, &cfg.inputs())?.draw(seed);
    let s = cfg.side;
    let mut is_test = vec![false; s * s];
    for (r, c) in grf_test_block(s) {
        is_test[r * s + c] = true;
    }
    data.test_idx = (0..s * s).filter(|&i| is_test[i]).collect();
    data.train_idx = (0..s * s).filter(|&i| !is_test[i]).collect();
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    Log,
}

/// Observed values on the original scale, strictly increasing in `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub transform: Transform,
}

impl TimeSeries {
    pub fn new(t: Vec<f64>, y: Vec<f64>, transform: Transform) -> Result<Self> {
        if t.len() != y.len() {
            return Err(CgpError::mismatch("time series length", t.len(), y.len()));
        }
        if t.is_empty() {
            return Err(CgpError::EmptySeries);
        }
        if t.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CgpError::InvalidInput("timestamps must be strictly increasing".into()));
        }
        if transform == Transform::Log && y.iter().any(|v| !(*v > 0.0)) {
            return Err(CgpError::InvalidInput("log transform needs positive values".into()));
        }
        Ok(TimeSeries { t, y, transform })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Values on the modeling scale (logarithms under [`Transform::Log`]).
    pub fn modeled_values(&self) -> DVector<f64> {
        match self.transform {
            Transform::None => DVector::from_column_slice(&self.y),
            Transform::Log => DVector::from_iterator(self.y.len(), self.y.iter().map(|v| v.ln())),
        }
    }

    pub fn to_segment(&self) -> Result<DataSegment> {
        DataSegment::new(inputs_1d(&self.t), self.modeled_values())
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub series: TimeSeries,
    /// Rows skipped for missing or (under the log transform) non-positive values.
    pub dropped: usize,
}

fn parse_timestamp(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let secs = if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        d.timestamp()
    } else if let Ok(d) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        d.and_utc().timestamp()
    } else if let Ok(d) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        d.and_utc().timestamp()
    } else if let Ok(d) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M") {
        d.and_utc().timestamp()
    } else {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?.and_hms_opt(0, 0, 0)?.and_utc().timestamp()
    };
    Some(secs as f64 / 3600.0)
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan" | "null")
}

/// Reads a time series from a headed CSV file.
///
/// Timestamps are numbers (taken as hours) or ISO-8601 date-times
/// (converted to hours since the Unix epoch). Rows are sorted by time.
pub fn ingest_csv(path: &Path, timestamp_column: &str, value_column: &str, transform: Transform) -> Result<Ingested> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| CgpError::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (tc, vc) = (col(timestamp_column)?, col(value_column)?);
    let mut rows = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let t = parse_timestamp(field(tc)).ok_or_else(|| CgpError::Parse {
            line,
            message: format!("bad timestamp {:?}", field(tc)),
        })?;
        let raw = field(vc);
        if is_missing(raw) {
            dropped += 1;
            continue;
        }
        let v: f64 = raw.parse().map_err(|_| CgpError::Parse {
            line,
            message: format!("bad value {raw:?}"),
        })?;
        if !v.is_finite() || (transform == Transform::Log && v <= 0.0) {
            dropped += 1;
            continue;
        }
        rows.push((t, v));
    }
    if rows.is_empty() {
        return Err(CgpError::EmptySeries);
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (t, y) = rows.into_iter().unzip();
    Ok(Ingested {
        series: TimeSeries::new(t, y, transform)?,
        dropped,
    })
}

fn csv_error(e: csv::Error) -> CgpError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CgpError::Io(io),
        other => CgpError::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes `t,y` rows with shortest round-trip decimal formatting.
pub fn write_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,y")?;
    for (t, y) in series.t.iter().zip(&series.y) {
        writeln!(w, "{t},{y}")?;
    }
    w.flush()?;
    Ok(())
}

/// Median and central 95% interval on the original scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RawScaleSummary {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Maps a belief over log-values back to the original scale, per point.
pub fn back_transform(belief: &GaussianBelief, transform: Transform) -> Result<Vec<RawScaleSummary>> {
    if transform != Transform::Log {
        return Err(CgpError::InvalidTransform);
    }
    Ok(belief
        .mean()
        .iter()
        .zip(belief.variances().iter())
        .map(|(m, v)| {
            let sd = v.max(0.0).sqrt();
            RawScaleSummary {
                median: m.exp(),
                lower: (m - 1.96 * sd).exp(),
                upper: (m + 1.96 * sd).exp(),
            }
        })
        .collect())
}

/// Hourly positive series whose logarithm is a GP draw with a daily period.
pub fn synthetic_lognormal_series(n: usize, seed: u64) -> Result<TimeSeries> {
    let model = lognormal_model()?;
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let draw = GpSampler::new(&model, &inputs_1d(&t))?.draw(seed);
    TimeSeries::new(t, draw.y.iter().map(|v| v.exp()).collect(), Transform::Log)
}

/// Generating model of [`synthetic_lognormal_series`], on the log scale.
pub fn lognormal_model() -> Result<GpModel> {
    Ok(GpModel::new(
        KernelSpec::periodic_plus_se(24.0, 0.5, 1.0, 0.4, 48.0, 0.05)?,
        MeanSpec::Linear { a: 0.0, b: 3.0 },
    ))
}
