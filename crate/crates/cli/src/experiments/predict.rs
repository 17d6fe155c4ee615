//! Shared GP / CGP / SGP prediction and the tables written for it.

use cgpkit::cgp::cgp_run;
use cgpkit::data::{back_transform, RawScaleSummary};
use cgpkit::fitc::{fitc_posterior, InducingSet};
use cgpkit::gp::{gp_posterior, DataSegment, GaussianBelief};
use cgpkit::model::GpModel;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Segmentation;
use crate::error::{from_core, CliError, CliResult, Context};
use crate::output::{num, OutDir, Table, Timings};

use super::MethodRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gp,
    Cgp,
    Sgp,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Gp => "gp",
            Method::Cgp => "cgp",
            Method::Sgp => "sgp",
        }
    }
}

pub fn default_methods() -> Vec<Method> {
    vec![Method::Gp, Method::Cgp, Method::Sgp]
}

pub fn check_methods(methods: &[Method], inducing_count: Option<usize>) -> CliResult<()> {
    if methods.is_empty() {
        return Err(CliError::config("/methods", "at least one method is required"));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(CliError::config(format!("/methods/{i}"), format!("duplicate method `{}`", m.label())));
        }
    }
    match inducing_count {
        None if methods.contains(&Method::Sgp) => {
            Err(CliError::config("/inducing_count", "required when methods include sgp"))
        }
        Some(0) => Err(CliError::config("/inducing_count", "must be at least 1")),
        _ => Ok(()),
    }
}

pub fn split(train: &DataSegment, seg: Segmentation) -> CliResult<Vec<DataSegment>> {
    match seg {
        Segmentation::Count(k) => train.split_even(k).map_err(|e| from_core("segmentation", "/segment_count", e)),
        Segmentation::Size(s) => train.split_by_size(s).map_err(|e| from_core("segmentation", "/segment_size", e)),
    }
}

pub struct Problem {
    pub model: GpModel,
    pub segments: Vec<DataSegment>,
    pub test_x: DMatrix<f64>,
    /// Held-out observations on the modeled scale.
    pub test_y: DVector<f64>,
    pub inducing: Option<InducingSet>,
}

pub struct Prediction {
    pub method: Method,
    pub belief: GaussianBelief,
}

fn solve(p: &Problem, method: Method, pooled: &DataSegment) -> CliResult<GaussianBelief> {
    match method {
        Method::Gp => gp_posterior(&p.model, &p.segments, &p.test_x).ctx("gp posterior"),
        Method::Cgp => cgp_run(&p.model, &p.segments, &p.test_x)
            .map(|r| r.state.current().clone())
            .ctx("cgp posterior"),
        Method::Sgp => {
            let u = p.inducing.as_ref().expect("inducing set checked with the config");
            fitc_posterior(&p.model, pooled, u, &p.test_x).ctx("fitc posterior")
        }
    }
}

pub fn predict_all(p: &Problem, methods: &[Method], repeats: usize, timings: &mut Timings) -> CliResult<Vec<Prediction>> {
    let pooled = DataSegment::concat(&p.segments).ctx("pooling segments")?.expect("segments are nonempty");
    methods
        .iter()
        .map(|&m| {
            let belief = timings.measure(m.label(), repeats, || solve(p, m, &pooled))?;
            Ok(Prediction { method: m, belief })
        })
        .collect()
}

pub fn rmse(pred: &DVector<f64>, obs: &DVector<f64>) -> f64 {
    ((pred - obs).norm_squared() / obs.len() as f64).sqrt()
}

/// Column names for the input coordinates.
pub fn x_header(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".into()]
    } else {
        (1..=dim).map(|j| format!("x{j}")).collect()
    }
}

/// Raw-scale held-out observations of a log-transformed series.
pub struct RawScale<'a> {
    pub observed: &'a [f64],
}

pub struct Written {
    pub methods: Vec<Value>,
    pub rows: Vec<MethodRow>,
}

/// Writes predictions.csv, variance.csv and, with `inducing`, inducing.csv.
/// `x_offset` is added back to the first input coordinate on output.
pub fn write_predictions(
    out: &OutDir,
    p: &Problem,
    preds: &[Prediction],
    timings: &Timings,
    x_offset: f64,
    raw: Option<RawScale>,
) -> CliResult<Written> {
    let dim = p.test_x.ncols();
    let mut header: Vec<String> = vec!["config_hash".into(), "method".into(), "point".into()];
    header.extend(x_header(dim));
    header.extend(["observed", "mean", "sd"].map(String::from));
    if raw.is_some() {
        header.extend(["observed_raw", "median", "lower", "upper"].map(String::from));
    }
    let mut table = Table::new(&header);
    let mut cov = Table::new(&["config_hash", "method", "i", "j", "value"]);
    let mut methods = Vec::new();
    let mut rows = Vec::new();
    for pr in preds {
        let b = &pr.belief;
        let var = b.variances();
        let summary: Option<Vec<RawScaleSummary>> = match raw {
            Some(_) => Some(back_transform(b, cgpkit::data::Transform::Log).ctx("back-transform")?),
            None => None,
        };
        for i in 0..b.dim() {
            let mut row = vec![out.hash.clone(), pr.method.label().into(), i.to_string()];
            for j in 0..dim {
                let v = p.test_x[(i, j)] + if j == 0 { x_offset } else { 0.0 };
                row.push(num(v));
            }
            row.extend([num(p.test_y[i]), num(b.mean()[i]), num(var[i].max(0.0).sqrt())]);
            if let (Some(r), Some(s)) = (&raw, &summary) {
                row.extend([num(r.observed[i]), num(s[i].median), num(s[i].lower), num(s[i].upper)]);
            }
            table.push(row);
        }
        let c = b.cov().as_matrix();
        for i in 0..b.dim() {
            for j in i..b.dim() {
                cov.push(vec![out.hash.clone(), pr.method.label().into(), i.to_string(), j.to_string(), num(c[(i, j)])]);
            }
        }
        let err = rmse(b.mean(), &p.test_y);
        let mut entry = json!({
            "method": pr.method.label(),
            "rmse": err,
            "mean_variance": var.mean(),
        });
        let mut reported = err;
        if let (Some(r), Some(s)) = (&raw, &summary) {
            let med = DVector::from_iterator(s.len(), s.iter().map(|v| v.median));
            let obs = DVector::from_column_slice(r.observed);
            let raw_err = rmse(&med, &obs);
            entry["rmse_raw"] = json!(raw_err);
            reported = raw_err;
        }
        methods.push(entry);
        rows.push(MethodRow {
            method: pr.method.label().into(),
            rmse: Some(reported),
            seconds: timings.seconds(pr.method.label()).unwrap_or(f64::NAN),
        });
    }
    out.table("predictions.csv", &table)?;
    out.table("variance.csv", &cov)?;
    if let Some(u) = &p.inducing {
        let mut t = Table::new(&[vec!["config_hash".to_string(), "index".into()], x_header(dim)].concat());
        for i in 0..u.len() {
            let mut row = vec![out.hash.clone(), i.to_string()];
            for j in 0..dim {
                row.push(num(u.locations()[(i, j)] + if j == 0 { x_offset } else { 0.0 }));
            }
            t.push(row);
        }
        out.table("inducing.csv", &t)?;
    }
    Ok(Written { methods, rows })
}
