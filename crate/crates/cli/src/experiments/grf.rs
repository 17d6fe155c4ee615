//! Gaussian random field on a square grid with a held-out central block.

use cgpkit::data::{simulate_grf, GrfConfig};
use cgpkit::fitc::place_uniform;
use serde::Deserialize;
use serde_json::{json, Value};

use super::predict::{check_methods, default_methods, predict_all, split, write_predictions, Method, Problem};
use super::{check_repeats, Ctx, MethodRow};
use crate::config::{default_repeats, parse, segmentation};
use crate::error::{from_core, CliResult, Context};
use crate::output::{num, Table, Timings};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    seed: u64,
    field: GrfConfig,
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
    let model = c.field.model().map_err(|e| from_core("field model", "/field", e))?;
    let data = simulate_grf(&c.field, c.seed).map_err(|e| from_core("simulating field", "/field/side", e))?;

    let mut is_test = vec![false; data.y.len()];
    for &i in &data.test_idx {
        is_test[i] = true;
    }
    let mut table = Table::new(&["index", "row", "col", "latent", "y", "split"]);
    for i in 0..data.y.len() {
        table.push(vec![
            i.to_string(),
            num(data.x[(i, 0)]),
            num(data.x[(i, 1)]),
            num(data.latent[i]),
            num(data.y[i]),
            if is_test[i] { "test" } else { "train" }.into(),
        ]);
    }
    ctx.dataset(&table, c.seed, json!({ "kind": "grf", "field": c.field }))?;

    let train = data.train().ctx("training split")?;
    let segments = split(&train, seg)?;
    let side = (c.field.side - 1) as f64;
    let inducing = match c.inducing_count {
        Some(m) if c.methods.contains(&Method::Sgp) => Some(
            place_uniform(&[(0.0, side), (0.0, side)], m)
                .map_err(|e| from_core("placing inducing inputs", "/inducing_count", e))?,
        ),
        _ => None,
    };
    let problem = Problem {
        model,
        segments,
        test_x: data.test_x(),
        test_y: data.test_y(),
        inducing,
    };
    let mut timings = Timings::default();
    let preds = predict_all(&problem, &c.methods, c.timing_repeats, &mut timings)?;
    let written = write_predictions(&ctx.out, &problem, &preds, &timings, 0.0, None)?;
    timings.write(&ctx.out)?;
    ctx.results(
        "grf",
        c.seed,
        json!({
            "train_points": train.len(),
            "test_points": problem.test_y.len(),
            "segments": problem.segments.len(),
            "methods": written.methods,
        }),
    )?;
    Ok(written.rows)
}
