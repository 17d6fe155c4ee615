use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn cgpkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgpkit"))
        .args(args)
        .env_remove("CGPKIT_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn run(name: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", name, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cgpkit(&args)
}

fn sweep(config: &Path, out: &Path) -> Output {
    cgpkit(&["sweep", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn read_csv(p: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(p).unwrap().records().map(Result::unwrap).collect()
}

fn header(p: &Path) -> Vec<String> {
    csv::Reader::from_path(p).unwrap().headers().unwrap().iter().map(str::to_string).collect()
}

fn se_model() -> Value {
    json!({"kernel": {"family": "squared_exponential", "params": {"amplitude": 1.0, "lengthscale": 2.0}, "noise_var": 0.1}})
}

fn series_model() -> Value {
    json!({
        "kernel": {"family": "periodic_plus_se",
                   "params": {"period": 128, "alpha1": 1, "theta1": 1, "alpha2": 1, "theta2": 32},
                   "noise_var": 0.01},
        "mean": {"family": "linear", "a": 0.001, "b": 0}
    })
}

fn small_timeseries(seed: u64) -> Value {
    json!({"schema": 1, "seed": seed, "model": se_model(), "n_train": 120, "n_test": 10,
           "segment_count": 3, "inducing_count": 12, "timing_repeats": 1})
}

fn timing(dir: &Path, method: &str) -> f64 {
    let p = dir.join("timing.csv");
    let h = header(&p);
    let (m, s) = (h.iter().position(|c| c == "method").unwrap(), h.iter().position(|c| c == "seconds").unwrap());
    read_csv(&p).iter().find(|r| &r[m] == method).map(|r| r[s].parse().unwrap()).unwrap()
}

#[test]
fn unknown_experiment_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_timeseries(1));
    let o = run("no-such-experiment", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown experiment"));
}

#[test]
fn unknown_field_is_reported_with_its_pointer() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_timeseries(1);
    c["model"]["kernel"]["nosie_var"] = json!(0.1);
    let cfg = write_config(tmp.path(), "c.json", &c);
    let o = run("timeseries", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/model/kernel/nosie_var"), "{}", stderr(&o));
}

#[test]
fn wrong_schema_and_bad_values_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_timeseries(1);
    c["schema"] = json!(2);
    let o = run("timeseries", &write_config(tmp.path(), "a.json", &c), &tmp.path().join("a"), &[]);
    assert_eq!(o.status.code(), Some(2));

    let mut c = small_timeseries(1);
    c["model"]["kernel"]["params"]["lengthscale"] = json!(-2.0);
    let o = run("timeseries", &write_config(tmp.path(), "b.json", &c), &tmp.path().join("b"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/model/kernel"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let o = run("grf", &tmp.path().join("absent.json"), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn failed_factorization_is_a_numeric_error() {
    let tmp = TempDir::new().unwrap();
    let c = json!({"schema": 1, "seed": 1, "n_train": 16, "n_test": 3, "segment_count": 2,
                   "model": {"kernel": {"family": "squared_exponential",
                                        "params": {"amplitude": 1e200, "lengthscale": 2.0},
                                        "noise_var": 1e-300}}});
    let o = run("info-gap", &write_config(tmp.path(), "c.json", &c), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_timeseries(1));
    let o = Command::new(env!("CARGO_BIN_EXE_cgpkit"))
        .args(["run", "timeseries", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()])
        .env("CGPKIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical_and_rows_carry_the_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_timeseries(7));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&run("timeseries", &cfg, &a, &[]));
    ok(&run("timeseries", &cfg, &b, &[]));
    for f in ["results.json", "predictions.csv", "variance.csv", "inducing.csv", "dataset.csv", "dataset.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let hash = read_json(&a.join("results.json"))["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 16);
    for f in ["predictions.csv", "variance.csv", "inducing.csv", "timing.csv"] {
        let p = a.join(f);
        let col = header(&p).iter().position(|c| c == "config_hash").expect("hash column");
        let rows = read_csv(&p);
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r[col] == hash), "{f}");
    }
    let methods: Vec<String> = read_csv(&a.join("predictions.csv")).iter().map(|r| r[1].to_string()).collect();
    for m in ["gp", "cgp", "sgp"] {
        assert_eq!(methods.iter().filter(|x| *x == m).count(), 10);
    }
}

#[test]
fn seed_override_changes_data_and_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_timeseries(7));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&run("timeseries", &cfg, &a, &[]));
    ok(&run("timeseries", &cfg, &b, &["--seed", "8"]));
    let (ra, rb) = (read_json(&a.join("results.json")), read_json(&b.join("results.json")));
    assert_ne!(ra["config_hash"], rb["config_hash"]);
    assert_eq!(rb["seed"], json!(8));
    assert_eq!(rb["config"]["seed"], json!(8));
    assert_ne!(fs::read(a.join("dataset.csv")).unwrap(), fs::read(b.join("dataset.csv")).unwrap());
}

#[test]
fn composite_is_faster_than_exact_on_the_series_benchmark() {
    let tmp = TempDir::new().unwrap();
    let c = json!({"schema": 1, "seed": 0, "model": series_model(), "n_train": 4096, "n_test": 128,
                   "segment_size": 1024, "inducing_count": 128, "timing_repeats": 1});
    let out = tmp.path().join("out");
    ok(&run("timeseries", &write_config(tmp.path(), "c.json", &c), &out, &[]));
    let (gp, cgp) = (timing(&out, "gp"), timing(&out, "cgp"));
    assert!(cgp < gp, "cgp {cgp}s vs gp {gp}s");
    let r = read_json(&out.join("results.json"));
    assert_eq!(r["segments"], json!(4));
}

#[test]
fn fusion_writes_one_trajectory_per_segment_size() {
    let tmp = TempDir::new().unwrap();
    let c = json!({"schema": 1, "seed": 3, "truth": se_model(), "n_train": 5000,
                   "segment_sizes": [50, 100, 200], "timing_repeats": 1});
    let out = tmp.path().join("out");
    ok(&run("learn-fusion", &write_config(tmp.path(), "c.json", &c), &out, &[]));
    for (size, k) in [(50, 100), (100, 50), (200, 25)] {
        let p = out.join(format!("fusion_nk{size}.csv"));
        let rows = read_csv(&p);
        // three parameters per step
        assert_eq!(rows.len(), 3 * k);
        let last = &rows[rows.len() - 3..];
        for r in last {
            let (fused, truth): (f64, f64) = (r[4].parse().unwrap(), r[6].parse().unwrap());
            assert!((fused - truth).abs() < 0.3 * truth.max(0.1), "{r:?}");
        }
    }
    assert_eq!(read_json(&out.join("results.json"))["runs"].as_array().unwrap().len(), 3);
}

#[test]
fn single_point_sweep_matches_a_direct_run() {
    let tmp = TempDir::new().unwrap();
    let direct = small_timeseries(5);
    let mut sw = direct.clone();
    sw["experiment"] = json!("timeseries");
    sw["segment_count"] = json!([3]);
    let (d, s) = (tmp.path().join("direct"), tmp.path().join("sweep"));
    ok(&run("timeseries", &write_config(tmp.path(), "d.json", &direct), &d, &[]));
    ok(&sweep(&write_config(tmp.path(), "s.json", &sw), &s));
    let point = s.join("points").join("000");
    for f in ["results.json", "predictions.csv"] {
        assert_eq!(fs::read(d.join(f)).unwrap(), fs::read(point.join(f)).unwrap(), "{f} differs");
    }
    let rows = read_csv(&s.join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| &r[1] == "/segment_count" && &r[2] == "3"));
}

#[test]
fn sweep_needs_exactly_one_nonempty_axis() {
    let tmp = TempDir::new().unwrap();
    let mut empty = small_timeseries(5);
    empty["experiment"] = json!("timeseries");
    empty["segment_count"] = json!([]);
    let o = sweep(&write_config(tmp.path(), "e.json", &empty), &tmp.path().join("e"));
    assert_eq!(o.status.code(), Some(2));

    let mut two = empty.clone();
    two["segment_count"] = json!([2, 3]);
    two["n_test"] = json!([5, 10]);
    let o = sweep(&write_config(tmp.path(), "t.json", &two), &tmp.path().join("t"));
    assert_eq!(o.status.code(), Some(2));

    let mut none = small_timeseries(5);
    none["experiment"] = json!("timeseries");
    let o = sweep(&write_config(tmp.path(), "n.json", &none), &tmp.path().join("n"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn composite_error_shrinks_with_batch_size() {
    let sizes = [256, 512, 1024, 2048];
    let tmp = TempDir::new().unwrap();
    let mut total = [0.0; 4];
    let seeds = 10;
    for seed in 0..seeds {
        let c = json!({"experiment": "timeseries", "schema": 1, "seed": seed, "model": series_model(),
                       "n_train": 4096, "n_test": 128, "segment_size": sizes, "methods": ["cgp"],
                       "timing_repeats": 1});
        let out = tmp.path().join(format!("s{seed}"));
        ok(&sweep(&write_config(tmp.path(), &format!("s{seed}.json"), &c), &out));
        let rows = read_csv(&out.join("sweep.csv"));
        assert_eq!(rows.len(), sizes.len());
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r[2].parse::<usize>().unwrap(), sizes[i]);
            total[i] += r[4].parse::<f64>().unwrap() / seeds as f64;
        }
    }
    let improving = total.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(improving >= 2, "seed-mean rmse by batch size {total:?}");
    assert!(total[3] < total[0], "{total:?}");
}

#[test]
fn log_csv_drops_nonpositive_values() {
    let tmp = TempDir::new().unwrap();
    let mut body = String::from("t,y\n");
    for i in 0..80 {
        let v = if i == 17 { -1.0 } else { (0.5 * (i as f64 / 6.0).sin()).exp() * 10.0 };
        body.push_str(&format!("{i},{v}\n"));
    }
    fs::write(tmp.path().join("series.csv"), body).unwrap();
    let c = json!({"schema": 1, "seed": 2, "input": "series.csv", "n_test": 8, "segment_count": 2,
                   "inducing_count": 10, "timing_repeats": 1, "model": se_model()});
    let out = tmp.path().join("out");
    ok(&run("csv-predict", &write_config(tmp.path(), "c.json", &c), &out, &[]));
    let r = read_json(&out.join("results.json"));
    assert_eq!(r["dropped_rows"], json!(1), "{r}");
    let h = header(&out.join("predictions.csv"));
    for col in ["median", "lower", "upper", "observed_raw"] {
        assert!(h.iter().any(|c| c == col), "{h:?}");
    }
}

#[test]
fn other_experiments_write_their_tables() {
    let tmp = TempDir::new().unwrap();
    let grf = json!({"schema": 1, "seed": 1, "segment_count": 2, "inducing_count": 16, "timing_repeats": 1,
                     "field": {"side": 12, "alpha": 1.0, "theta1": 3.0, "theta2": 3.0}});
    let out = tmp.path().join("grf");
    ok(&run("grf", &write_config(tmp.path(), "g.json", &grf), &out, &[]));
    assert_eq!(header(&out.join("predictions.csv"))[3..5], ["x1".to_string(), "x2".to_string()]);

    let ex = json!({"schema": 1, "seed": 1, "timing_repeats": 1,
                    "field": {"side": 8, "alpha": 1.0, "theta1": 2.0, "theta2": 2.0}});
    let out = tmp.path().join("ex");
    ok(&run("excess-mse", &write_config(tmp.path(), "e.json", &ex), &out, &[]));
    let cells = read_csv(&out.join("excess_grid.csv"));
    assert!(!cells.is_empty());
    assert!(cells.iter().all(|r| r[3].parse::<f64>().unwrap() >= -1e-12));

    let info = json!({"schema": 1, "seed": 1, "model": se_model(), "n_train": 40, "n_test": 5,
                      "segment_count": 2, "timing_repeats": 1});
    let out = tmp.path().join("info");
    ok(&run("info-gap", &write_config(tmp.path(), "i.json", &info), &out, &[]));
    let r = read_json(&out.join("results.json"));
    assert!(r["info"]["verdict"].is_string());
}
