//! Batch prediction on an ingested (or synthetic log-normal) series, with
//! optional fused hyperparameter learning on the training part.

use std::path::PathBuf;

use cgpkit::cgp::learn_fused;
use cgpkit::data::{ingest_csv, synthetic_lognormal_series, TimeSeries, Transform};
use cgpkit::fitc::place_uniform;
use cgpkit::gp::{DataSegment, MlOptions};
use cgpkit::kernel::inputs_1d;
use cgpkit::model::GpModel;
use nalgebra::DVector;
use serde::Deserialize;
use serde_json::{json, Value};

use super::fusion::natural_params;
use super::predict::{
    check_methods, default_methods, predict_all, split, write_predictions, Method, Problem, RawScale,
};
use super::{check_repeats, Ctx, MethodRow};
use crate::config::{default_repeats, parse, segmentation};
use crate::error::{from_core, CliError, CliResult, Context};
use crate::output::{num, Table, Timings};

fn default_t() -> String {
    "t".into()
}

fn default_y() -> String {
    "y".into()
}

fn default_transform() -> Transform {
    Transform::Log
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    seed: u64,
    /// CSV file, relative to the config file's directory.
    input: Option<PathBuf>,
    /// Length of a generated log-normal series, used when `input` is absent.
    synthetic_points: Option<usize>,
    #[serde(default = "default_t")]
    timestamp_column: String,
    #[serde(default = "default_y")]
    value_column: String,
    #[serde(default = "default_transform")]
    transform: Transform,
    model: GpModel,
    #[serde(default)]
    learn: bool,
    n_test: usize,
    segment_count: Option<usize>,
    segment_size: Option<usize>,
    inducing_count: Option<usize>,
    #[serde(default = "default_methods")]
    methods: Vec<Method>,
    #[serde(default = "default_repeats")]
    timing_repeats: usize,
}

fn load_series(ctx: &Ctx, c: &Config) -> CliResult<(TimeSeries, usize)> {
    match (&c.input, c.synthetic_points) {
        (Some(_), Some(_)) => Err(CliError::config("/synthetic_points", "give input or synthetic_points, not both")),
        (None, None) => Err(CliError::config("/input", "one of input or synthetic_points is required")),
        (Some(p), None) => {
            let path = ctx.base_dir.join(p);
            let got = ingest_csv(&path, &c.timestamp_column, &c.value_column, c.transform)
                .map_err(|e| from_core(&path.display().to_string(), "/input", e))?;
            Ok((got.series, got.dropped))
        }
        (None, Some(n)) => {
            if c.transform != Transform::Log {
                return Err(CliError::config("/transform", "the synthetic series is log-normal; use transform \"log\""));
            }
            let s = synthetic_lognormal_series(n, c.seed)
                .map_err(|e| from_core("synthetic series", "/synthetic_points", e))?;
            let mut table = Table::new(&["t", "y"]);
            for (t, y) in s.t.iter().zip(&s.y) {
                table.push(vec![num(*t), num(*y)]);
            }
            ctx.dataset(&table, c.seed, json!({ "kind": "lognormal_series", "points": n }))?;
            Ok((s, 0))
        }
    }
}

pub fn run(ctx: &Ctx, v: &Value) -> CliResult<Vec<MethodRow>> {
    let c: Config = parse(v)?;
    let seg = segmentation(c.segment_count, c.segment_size)?;
    check_methods(&c.methods, c.inducing_count)?;
    check_repeats(c.timing_repeats)?;
    if c.model.input_dim() != 1 {
        return Err(CliError::config("/model/kernel/family", "a time series needs a 1-D kernel"));
    }
    let (series, dropped) = load_series(ctx, &c)?;
    let n = series.len();
    if c.n_test == 0 || c.n_test >= n {
        return Err(CliError::config("/n_test", format!("must be in 1..{n} for a series of {n} points")));
    }
    let n_train = n - c.n_test;
    // Inputs are hours since the first timestamp.
    let origin = series.t[0];
    let x = inputs_1d(&series.t.iter().map(|t| t - origin).collect::<Vec<_>>());
    let y = series.modeled_values();
    let train = DataSegment::new(x.rows(0, n_train).into_owned(), y.rows(0, n_train).into_owned()).ctx("training split")?;
    let segments = split(&train, seg)?;

    let mut timings = Timings::default();
    let mut fused = None;
    let model = if c.learn {
        let run = timings.measure("fusion", c.timing_repeats, || {
            learn_fused(&c.model, &segments, &MlOptions::default()).ctx("fused learning")
        })?;
        fused = Some(json!({
            "parameters": natural_params(&run.model, &run.model.param_vector()),
            "not_converged": run.steps.iter().filter(|s| s.estimate.termination != cgpkit::optim::Termination::Converged).count(),
        }));
        run.model
    } else {
        c.model.clone()
    };

    let inducing = match c.inducing_count {
        Some(m) if c.methods.contains(&Method::Sgp) => Some(
            place_uniform(&[(0.0, x[(n_train - 1, 0)])], m)
                .map_err(|e| from_core("placing inducing inputs", "/inducing_count", e))?,
        ),
        _ => None,
    };
    let problem = Problem {
        model,
        segments,
        test_x: x.rows(n_train, c.n_test).into_owned(),
        test_y: DVector::from_iterator(c.n_test, y.iter().skip(n_train).copied()),
        inducing,
    };
    let preds = predict_all(&problem, &c.methods, c.timing_repeats, &mut timings)?;
    let raw = (c.transform == Transform::Log).then(|| RawScale {
        observed: &series.y[n_train..],
    });
    let written = write_predictions(&ctx.out, &problem, &preds, &timings, origin, raw)?;
    timings.write(&ctx.out)?;
    ctx.results(
        "csv-predict",
        c.seed,
        json!({
            "points": n,
            "dropped_rows": dropped,
            "train_points": n_train,
            "time_origin": origin,
            "segments": problem.segments.len(),
            "fused": fused,
            "methods": written.methods,
        }),
    )?;
    Ok(written.rows)
}
