//! Simulated 1-D series: exact GP, CGP and FITC on the same held-out tail.

use cgpkit::analysis::info_gap;
use cgpkit::data::simulate_gp_series;
use cgpkit::fitc::place_uniform;
use cgpkit::model::GpModel;
use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::{json, Value};

use super::predict::{check_methods, default_methods, predict_all, split, write_predictions, Method, Problem};
use super::{check_repeats, Ctx, MethodRow};
use crate::config::{default_repeats, parse, segmentation};
use crate::error::{from_core, CliError, CliResult, Context};
use crate::output::{num, Table, Timings};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    seed: u64,
    model: GpModel,
    n_train: usize,
    n_test: usize,
    segment_count: Option<usize>,
    segment_size: Option<usize>,
    inducing_count: Option<usize>,
    #[serde(default = "default_methods")]
    methods: Vec<Method>,
    #[serde(default = "default_repeats")]
    timing_repeats: usize,
}

pub fn run(ctx: &Ctx, v: &Value) -> CliResult<Vec<MethodRow>> {
    let c: Config = parse(v)?;
    let seg = segmentation(c.segment_count, c.segment_size)?;
    check_methods(&c.methods, c.inducing_count)?;
    check_repeats(c.timing_repeats)?;
    if c.n_test == 0 {
        return Err(CliError::config("/n_test", "must be at least 1"));
    }
    if c.model.input_dim() != 1 {
        return Err(CliError::config("/model/kernel/family", "a time series needs a 1-D kernel"));
    }
    let data = simulate_gp_series(&c.model, c.n_train, c.n_test, c.seed)
        .map_err(|e| from_core("simulating series", "/n_train", e))?;

    let mut table = Table::new(&["index", "t", "latent", "y", "split"]);
    for i in 0..data.y.len() {
        let split = if i < c.n_train { "train" } else { "test" };
        table.push(vec![i.to_string(), num(data.x[(i, 0)]), num(data.latent[i]), num(data.y[i]), split.into()]);
    }
    ctx.dataset(&table, c.seed, json!({ "kind": "gp_series", "model": c.model, "n_train": c.n_train, "n_test": c.n_test }))?;

    let train = data.train().ctx("training split")?;
    let segments = split(&train, seg)?;
    let inducing = match c.inducing_count {
        Some(m) if c.methods.contains(&Method::Sgp) => Some(
            place_uniform(&[(0.0, (c.n_train - 1) as f64)], m)
                .map_err(|e| from_core("placing inducing inputs", "/inducing_count", e))?,
        ),
        _ => None,
    };
    let problem = Problem {
        model: c.model.clone(),
        segments,
        test_x: data.test_x(),
        test_y: data.test_y(),
        inducing,
    };
    let mut timings = Timings::default();
    let preds = predict_all(&problem, &c.methods, c.timing_repeats, &mut timings)?;
    let written = write_predictions(&ctx.out, &problem, &preds, &timings, 0.0, None)?;

    let info = if c.methods.contains(&Method::Gp) && c.methods.contains(&Method::Cgp) && problem.segments.len() > 1 {
        let xs: Vec<DMatrix<f64>> = problem.segments.iter().map(|s| s.x().clone()).collect();
        Some(info_gap(&c.model, &xs, &problem.test_x).ctx("information gap")?)
    } else {
        None
    };
    timings.write(&ctx.out)?;
    ctx.results(
        "timeseries",
        c.seed,
        json!({
            "segments": problem.segments.len(),
            "segment_lengths": problem.segments.iter().map(|s| s.len()).collect::<Vec<_>>(),
            "methods": written.methods,
            "info": info,
        }),
    )?;
    Ok(written.rows)
}
