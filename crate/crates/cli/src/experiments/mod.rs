//! Experiment dispatch. Each experiment parses its own config section, runs the
//! numerics and writes its tables into the output directory.

mod csv_predict;
mod excess;
mod fusion;
mod grf;
mod info;
pub mod predict;
mod timeseries;

use std::path::Path;

use serde_json::{Map, Value};

use crate::config::{check_schema, config_hash};
use crate::error::{CliError, CliResult};
use crate::output::{OutDir, Table};

pub const EXPERIMENTS: [&str; 6] = ["learn-fusion", "timeseries", "grf", "excess-mse", "info-gap", "csv-predict"];

/// One row of a run's summary: a method with its error and timing.
#[derive(Debug, Clone)]
pub struct MethodRow {
    pub method: String,
    pub rmse: Option<f64>,
    pub seconds: f64,
}

pub struct RunSummary {
    pub config_hash: String,
    pub rows: Vec<MethodRow>,
}

pub struct Ctx<'a> {
    pub out: OutDir,
    pub base_dir: &'a Path,
    pub config: &'a Value,
}

impl Ctx<'_> {
    /// The common header of results.json followed by `body`.
    pub fn results(&self, name: &str, seed: u64, body: Value) -> CliResult<()> {
        let mut m = Map::new();
        m.insert("experiment".into(), name.into());
        m.insert("config_hash".into(), self.out.hash.clone().into());
        m.insert("seed".into(), seed.into());
        m.insert("config".into(), self.config.clone());
        if let Value::Object(b) = body {
            m.extend(b);
        }
        self.out.json("results.json", &Value::Object(m))
    }

    /// Writes `dataset.csv` with its sidecar naming the generator and seed.
    pub fn dataset(&self, table: &Table, seed: u64, generator: Value) -> CliResult<()> {
        self.out.table("dataset.csv", table)?;
        self.out.json(
            "dataset.json",
            &serde_json::json!({ "config_hash": self.out.hash, "seed": seed, "generator": generator }),
        )
    }
}

pub fn check_name(name: &str) -> CliResult<()> {
    if EXPERIMENTS.contains(&name) {
        Ok(())
    } else {
        Err(CliError::config(
            "",
            format!("unknown experiment `{name}`; expected one of {}", EXPERIMENTS.join(", ")),
        ))
    }
}

/// Config fields that are lists by design and therefore never a sweep axis.
pub fn native_lists(name: &str) -> &'static [&'static str] {
    match name {
        "learn-fusion" => &["/methods", "/segment_sizes"],
        _ => &["/methods"],
    }
}

/// Config with the schema marker removed, ready for typed parsing.
fn body(config: &Value) -> Value {
    let mut v = config.clone();
    if let Value::Object(m) = &mut v {
        m.remove("schema");
    }
    v
}

pub fn run(name: &str, config: &Value, base_dir: &Path, out_dir: &Path) -> CliResult<RunSummary> {
    check_name(name)?;
    check_schema(config)?;
    let hash = config_hash(config);
    let ctx = Ctx {
        out: OutDir::create(out_dir, hash.clone())?,
        base_dir,
        config,
    };
    let v = body(config);
    let rows = match name {
        "learn-fusion" => fusion::run(&ctx, &v)?,
        "timeseries" => timeseries::run(&ctx, &v)?,
        "grf" => grf::run(&ctx, &v)?,
        "excess-mse" => excess::run(&ctx, &v)?,
        "info-gap" => info::run(&ctx, &v)?,
        "csv-predict" => csv_predict::run(&ctx, &v)?,
        _ => unreachable!("name checked above"),
    };
    Ok(RunSummary { config_hash: hash, rows })
}

pub fn check_repeats(n: usize) -> CliResult<()> {
    if n == 0 {
        Err(CliError::config("/timing_repeats", "must be at least 1"))
    } else {
        Ok(())
    }
}
