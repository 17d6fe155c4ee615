//! Fisher-weighted fusion of per-segment maximum-likelihood estimates, one
//! trajectory per segment size.

use cgpkit::cgp::learn_fused;
use cgpkit::data::simulate_gp_series;
use cgpkit::gp::MlOptions;
use cgpkit::model::GpModel;
use cgpkit::optim::Termination;
use nalgebra::DVector;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use super::{check_repeats, Ctx, MethodRow};
use crate::config::{default_repeats, parse};
use crate::error::{from_core, CliError, CliResult, Context};
use crate::output::{num, Table, Timings};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    seed: u64,
    truth: GpModel,
    /// Starting point of every per-segment fit; defaults to all log-parameters
    /// and mean coefficients at zero.
    init: Option<GpModel>,
    n_train: usize,
    segment_sizes: Vec<usize>,
    #[serde(default = "default_repeats")]
    timing_repeats: usize,
}

/// Parameter names without the `log_` prefix, and values mapped back to
/// their natural scale.
pub fn named_natural(model: &GpModel, theta: &DVector<f64>) -> Vec<(String, f64)> {
    model
        .param_names()
        .into_iter()
        .zip(theta.iter())
        .map(|(n, v)| match n.strip_prefix("log_") {
            Some(base) => (base.to_string(), v.exp()),
            None => (n, *v),
        })
        .collect()
}

pub fn natural_params(model: &GpModel, theta: &DVector<f64>) -> Value {
    Value::Object(named_natural(model, theta).into_iter().map(|(n, v)| (n, json!(v))).collect::<Map<_, _>>())
}

pub fn run(ctx: &Ctx, v: &Value) -> CliResult<Vec<MethodRow>> {
    let c: Config = parse(v)?;
    check_repeats(c.timing_repeats)?;
    if c.segment_sizes.is_empty() {
        return Err(CliError::config("/segment_sizes", "at least one segment size is required"));
    }
    if let Some(i) = c.segment_sizes.iter().position(|&s| s == 0) {
        return Err(CliError::config(format!("/segment_sizes/{i}"), "must be at least 1"));
    }
    let init = match c.init {
        Some(m) => {
            if m.n_params() != c.truth.n_params() || m.kernel.family() != c.truth.kernel.family() {
                return Err(CliError::config("/init", "init must have the same kernel family and mean as truth"));
            }
            m
        }
        None => c
            .truth
            .with_param_vector(&DVector::zeros(c.truth.n_params()))
            .ctx("default init")?,
    };
    let data = simulate_gp_series(&c.truth, c.n_train, 0, c.seed)
        .map_err(|e| from_core("simulating series", "/n_train", e))?;
    let mut table = Table::new(&["index", "t", "latent", "y"]);
    for i in 0..data.y.len() {
        table.push(vec![i.to_string(), num(data.x[(i, 0)]), num(data.latent[i]), num(data.y[i])]);
    }
    ctx.dataset(&table, c.seed, json!({ "kind": "gp_series", "model": c.truth, "n_train": c.n_train, "n_test": 0 }))?;
    let train = data.train().ctx("training data")?;
    let truth_theta = c.truth.param_vector();
    let truth_named = named_natural(&c.truth, &truth_theta);

    let mut timings = Timings::default();
    let mut rows = Vec::new();
    let mut per_size = Vec::new();
    for (si, &size) in c.segment_sizes.iter().enumerate() {
        let segments = train
            .split_by_size(size)
            .map_err(|e| from_core("segmentation", &format!("/segment_sizes/{si}"), e))?;
        let label = format!("fusion_nk{size}");
        let run = timings.measure(&label, c.timing_repeats, || {
            learn_fused(&init, &segments, &MlOptions::default()).ctx(&format!("fused learning with segments of {size}"))
        })?;

        let mut t = Table::new(&["config_hash", "k", "parameter", "estimate", "fused", "fused_sd", "truth", "converged"]);
        let mut state = cgpkit::cgp::FusionState::new(init.n_params());
        for (k, step) in run.steps.iter().enumerate() {
            state = state.update(&step.estimate.theta, &step.fim).ctx("fusion")?;
            let sd_log = state.fused_covariance().ctx("fused covariance")?.diagonal().map(|v| v.max(0.0).sqrt());
            let est = named_natural(&init, &step.estimate.theta);
            let fused = named_natural(&init, &step.fused);
            let names = init.param_names();
            for p in 0..est.len() {
                // delta method for log-parameters
                let sd = if names[p].starts_with("log_") { fused[p].1 * sd_log[p] } else { sd_log[p] };
                t.push(vec![
                    ctx.out.hash.clone(),
                    (k + 1).to_string(),
                    est[p].0.clone(),
                    num(est[p].1),
                    num(fused[p].1),
                    num(sd),
                    num(truth_named[p].1),
                    (step.estimate.termination == Termination::Converged).to_string(),
                ]);
            }
        }
        ctx.out.table(&format!("fusion_nk{size}.csv"), &t)?;

        let theta = run.state.fused_theta().ctx("fused estimate")?;
        let cov = run.state.fused_covariance().ctx("fused covariance")?;
        let diff = &theta - &truth_theta;
        let dist = cov
            .clone()
            .cholesky()
            .map(|ch| diff.dot(&ch.solve(&diff)).sqrt())
            .unwrap_or(f64::NAN);
        per_size.push(json!({
            "segment_size": size,
            "segments": segments.len(),
            "fused": natural_params(&init, &theta),
            "mahalanobis_to_truth": dist,
            "not_converged": run.steps.iter().filter(|s| s.estimate.termination != Termination::Converged).count(),
        }));
        rows.push(MethodRow {
            method: label.clone(),
            rmse: None,
            seconds: timings.seconds(&label).unwrap_or(f64::NAN),
        });
    }
    timings.write(&ctx.out)?;
    ctx.results(
        "learn-fusion",
        c.seed,
        json!({
            "truth": natural_params(&c.truth, &truth_theta),
            "init": natural_params(&init, &init.param_vector()),
            "runs": per_size,
        }),
    )?;
    Ok(rows)
}
