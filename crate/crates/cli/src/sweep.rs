//! One experiment run per value of the single list-valued config field.

use std::path::Path;

use serde_json::Value;

use crate::config::{canonical, list_fields};
use crate::error::{CliError, CliResult};
use crate::experiments::{self, native_lists, MethodRow};
use crate::output::{num, OutDir, Table};

#[derive(Debug)]
pub struct SweepPoint {
    pub value: Value,
    pub config: Value,
}

#[derive(Debug)]
pub struct SweepPlan {
    pub experiment: String,
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

/// Splits a sweep config into its experiment name and one config per axis value.
pub fn plan(config: &Value) -> CliResult<SweepPlan> {
    let mut rest = config.clone();
    let experiment = match rest.as_object_mut().and_then(|m| m.remove("experiment")) {
        Some(Value::String(s)) => s,
        Some(_) => return Err(CliError::config("/experiment", "must be a string")),
        None => return Err(CliError::config("/experiment", "a sweep config names its experiment")),
    };
    experiments::check_name(&experiment)?;
    let axes = list_fields(&rest, native_lists(&experiment));
    let axis = match axes.as_slice() {
        [] => return Err(CliError::config("", "a sweep needs exactly one list-valued field, found none")),
        [one] => one.clone(),
        [_, second, ..] => {
            return Err(CliError::config(
                second.clone(),
                format!("a sweep needs exactly one list-valued field, found {}: {}", axes.len(), axes.join(", ")),
            ))
        }
    };
    let values = rest.pointer(&axis).and_then(Value::as_array).cloned().unwrap_or_default();
    if values.is_empty() {
        return Err(CliError::config(axis, "sweep axis is empty"));
    }
    let points = values
        .into_iter()
        .map(|value| {
            let mut c = rest.clone();
            *c.pointer_mut(&axis).expect("axis pointer exists") = value.clone();
            SweepPoint { value, config: c }
        })
        .collect();
    Ok(SweepPlan { experiment, axis, points })
}

/// Runs every point into `out/points/NNN` and writes the aggregate `out/sweep.csv`.
pub fn run(config: &Value, base_dir: &Path, out: &Path) -> CliResult<Vec<(String, MethodRow)>> {
    let plan = plan(config)?;
    let dir = OutDir::create(out, String::new())?;
    let mut table = Table::new(&["experiment", "axis", "value", "method", "rmse", "seconds", "config_hash"]);
    let mut all = Vec::new();
    for (i, p) in plan.points.iter().enumerate() {
        let summary = experiments::run(&plan.experiment, &p.config, base_dir, &out.join("points").join(format!("{i:03}")))?;
        for row in summary.rows {
            table.push(vec![
                plan.experiment.clone(),
                plan.axis.clone(),
                canonical(&p.value),
                row.method.clone(),
                row.rmse.map(num).unwrap_or_default(),
                num(row.seconds),
                summary.config_hash.clone(),
            ]);
            all.push((canonical(&p.value), row));
        }
    }
    dir.table("sweep.csv", &table)?;
    Ok(all)
}
