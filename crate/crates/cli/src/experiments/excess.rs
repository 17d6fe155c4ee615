//! Excess MSE of the two-segment composite predictor over the held-out block
//! of a random-field grid.

use cgpkit::analysis::{excess_mse_closed_form, excess_mse_monte_carlo, ExcessMseMc};
use cgpkit::data::{grf_test_block, GrfConfig};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{check_repeats, Ctx, MethodRow};
use crate::config::{default_repeats, parse};
use crate::error::{from_core, CliError, CliResult, Context};
use crate::output::{num, Table, Timings};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    seed: u64,
    field: GrfConfig,
    /// Monte-Carlo draws per cell; 0 skips the simulation check.
    #[serde(default)]
    n_draws: usize,
    #[serde(default = "default_repeats")]
    timing_repeats: usize,
}

pub fn run(ctx: &Ctx, v: &Value) -> CliResult<Vec<MethodRow>> {
    let c: Config = parse(v)?;
    check_repeats(c.timing_repeats)?;
    if c.n_draws != 0 && c.n_draws < 1000 {
        return Err(CliError::config("/n_draws", "use 0 or at least 1000 draws"));
    }
    if c.field.side < 2 || c.field.side > cgpkit::data::MAX_GRID_SIDE {
        return Err(CliError::config("/field/side", format!("must be in 2..={}", cgpkit::data::MAX_GRID_SIDE)));
    }
    let model = c.field.model().map_err(|e| from_core("field model", "/field", e))?;
    let x = c.field.inputs();
    let s = c.field.side;
    let mut is_test = vec![false; s * s];
    let cells = grf_test_block(s);
    for &(r, col) in &cells {
        is_test[r * s + col] = true;
    }
    let train: Vec<usize> = (0..s * s).filter(|&i| !is_test[i]).collect();
    let half = train.len().div_ceil(2);
    let rows = |idx: &[usize]| DMatrix::from_fn(idx.len(), 2, |i, j| x[(idx[i], j)]);
    let (seg1, seg2) = (rows(&train[..half]), rows(&train[half..]));
    let test: Vec<DMatrix<f64>> = cells.iter().map(|&(r, col)| rows(&[r * s + col])).collect();

    let mut timings = Timings::default();
    let closed: Vec<f64> = timings.measure("closed_form", c.timing_repeats, || {
        test.par_iter()
            .map(|tx| excess_mse_closed_form(&model, &seg1, &seg2, tx).map(|r| r.closed_form))
            .collect::<Result<Vec<_>, _>>()
            .ctx("excess MSE closed form")
    })?;
    let mut grid = Table::new(&["config_hash", "x", "y", "value"]);
    for (tx, v) in test.iter().zip(&closed) {
        grid.push(vec![ctx.out.hash.clone(), num(tx[(0, 0)]), num(tx[(0, 1)]), num(*v)]);
    }
    ctx.out.table("excess_grid.csv", &grid)?;

    let mut mc_summary = Value::Null;
    if c.n_draws > 0 {
        let segs = [seg1.clone(), seg2.clone()];
        let mc: Vec<ExcessMseMc> = timings.measure("monte_carlo", c.timing_repeats, || {
            test.iter()
                .enumerate()
                .map(|(i, tx)| excess_mse_monte_carlo(&model, &segs, tx, c.n_draws, c.seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>, _>>()
                .ctx("excess MSE simulation")
        })?;
        let mut t = Table::new(&[
            "config_hash", "x", "y", "closed_form", "mean", "std_err", "approx_mse", "gp_mse", "posterior_var",
        ]);
        let mut within = 0;
        for ((tx, m), cf) in test.iter().zip(&mc).zip(&closed) {
            if m.excess.within(*cf, 3.0) {
                within += 1;
            }
            t.push(vec![
                ctx.out.hash.clone(),
                num(tx[(0, 0)]),
                num(tx[(0, 1)]),
                num(*cf),
                num(m.excess.mean),
                num(m.excess.std_err),
                num(m.approx_mse.mean),
                num(m.gp_mse.mean),
                num(m.posterior_var),
            ]);
        }
        ctx.out.table("excess_mc.csv", &t)?;
        mc_summary = json!({ "draws_per_cell": c.n_draws, "within_3se": within, "cells": mc.len() });
    }
    timings.write(&ctx.out)?;
    let max = closed.iter().copied().fold(0.0, f64::max);
    let mean = closed.iter().sum::<f64>() / closed.len() as f64;
    ctx.results(
        "excess-mse",
        c.seed,
        json!({
            "segment_points": [seg1.nrows(), seg2.nrows()],
            "test_cells": closed.len(),
            "closed_form": { "max": max, "mean": mean },
            "monte_carlo": mc_summary,
        }),
    )?;
    Ok(["closed_form", "monte_carlo"]
        .iter()
        .filter_map(|l| {
            timings.seconds(l).map(|s| MethodRow {
                method: l.to_string(),
                rmse: None,
                seconds: s,
            })
        })
        .collect())
}
