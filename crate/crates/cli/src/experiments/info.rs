//! Information gap between the joint data and its segments on a series layout,
//! with the resulting variance distortion and optional sampled KLD checks.

use cgpkit::analysis::{cgp_kld_check, info_gap, kld_identity_check, DataAverage};
use cgpkit::cgp::cgp_run;
use cgpkit::gp::{gp_posterior, DataSegment};
use cgpkit::kernel::inputs_1d;
use cgpkit::model::GpModel;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{json, Value};

use super::predict::split;
use super::{check_repeats, Ctx, MethodRow};
use crate::config::{default_repeats, parse, segmentation};
use crate::error::{CliError, CliResult, Context};
use crate::output::Timings;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    seed: u64,
    model: GpModel,
    n_train: usize,
    n_test: usize,
    segment_count: Option<usize>,
    segment_size: Option<usize>,
    /// Data draws for the sampled KLD checks; 0 skips them.
    #[serde(default)]
    kld_draws: usize,
    #[serde(default = "default_repeats")]
    timing_repeats: usize,
}

pub fn run(ctx: &Ctx, v: &Value) -> CliResult<Vec<MethodRow>> {
    let c: Config = parse(v)?;
    let seg = segmentation(c.segment_count, c.segment_size)?;
    check_repeats(c.timing_repeats)?;
    if c.model.input_dim() != 1 {
        return Err(CliError::config("/model/kernel/family", "the series layout needs a 1-D kernel"));
    }
    if c.n_train == 0 || c.n_test == 0 {
        return Err(CliError::config("/n_train", "n_train and n_test must be at least 1"));
    }
    if c.kld_draws != 0 && c.kld_draws < 1000 {
        return Err(CliError::config("/kld_draws", "use 0 or at least 1000 draws"));
    }
    let t: Vec<f64> = (0..c.n_train + c.n_test).map(|i| i as f64).collect();
    let train_x = inputs_1d(&t[..c.n_train]);
    let test_x = inputs_1d(&t[c.n_train..]);
    // Posterior covariances do not depend on the observed values.
    let placeholder = DataSegment::new(train_x.clone(), DVector::zeros(c.n_train)).ctx("training inputs")?;
    let segments = split(&placeholder, seg)?;
    if segments.len() < 2 {
        return Err(CliError::config("/segment_count", "the information gap needs at least two segments"));
    }
    let xs: Vec<DMatrix<f64>> = segments.iter().map(|s| s.x().clone()).collect();

    let mut timings = Timings::default();
    let report = timings.measure("info_gap", c.timing_repeats, || info_gap(&c.model, &xs, &test_x).ctx("information gap"))?;
    let gp_var = gp_posterior(&c.model, &segments, &test_x).ctx("gp posterior")?.variances().mean();
    let cgp_var = cgp_run(&c.model, &segments, &test_x)
        .ctx("cgp posterior")?
        .state
        .current()
        .variances()
        .mean();

    let kld = if c.kld_draws > 0 {
        let gp = kld_identity_check(&c.model, &train_x, &test_x, c.kld_draws, c.seed).ctx("sampled KLD")?;
        let joint = cgp_kld_check(&c.model, &xs, &test_x, DataAverage::Joint, c.kld_draws, c.seed).ctx("sampled KLD")?;
        let composite =
            cgp_kld_check(&c.model, &xs, &test_x, DataAverage::Composite, c.kld_draws, c.seed).ctx("sampled KLD")?;
        json!({ "gp": gp, "cgp_joint_average": joint, "cgp_composite_average": composite })
    } else {
        Value::Null
    };
    timings.write(&ctx.out)?;
    ctx.results(
        "info-gap",
        c.seed,
        json!({
            "segments": segments.len(),
            "info": report,
            "mean_variance": { "gp": gp_var, "cgp": cgp_var },
            "kld": kld,
        }),
    )?;
    Ok(vec![MethodRow {
        method: "info_gap".into(),
        rmse: None,
        seconds: timings.seconds("info_gap").unwrap_or(f64::NAN),
    }])
}
