#![allow(dead_code)]

use std::io::Write;
use std::sync::Mutex;

use cgpkit::kernel::{inputs_1d, KernelSpec};
use cgpkit::model::{GpModel, MeanSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Timing-sensitive checks hold this so they do not overlap with other tests.
pub static SERIAL: Mutex<()> = Mutex::new(());

pub fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One result line per criterion, written past the test harness's capture.
pub fn report(id: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{id}: {verdict} ({detail})");
}

/// `max|a − b| / max|b|`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

pub const FAMILIES: [&str; 3] = ["squared_exponential", "periodic_plus_se", "se2d_ard"];

/// Random kernel of the given family with a random mean for 1-D families.
pub fn random_model(family: usize, rng: &mut ChaCha8Rng) -> GpModel {
    let noise = rng.random_range(0.01..0.3);
    let kernel = match family {
        0 => KernelSpec::squared_exponential(rng.random_range(0.5..2.0), rng.random_range(1.0..4.0), noise),
        1 => KernelSpec::periodic_plus_se(
            rng.random_range(8.0..20.0),
            rng.random_range(0.5..1.5),
            rng.random_range(0.7..1.5),
            rng.random_range(0.5..1.5),
            rng.random_range(5.0..30.0),
            noise,
        ),
        _ => KernelSpec::se2d_ard(
            rng.random_range(0.5..2.0),
            rng.random_range(1.0..3.0),
            rng.random_range(1.0..3.0),
            noise,
        ),
    }
    .unwrap();
    let mean = if family == 2 {
        MeanSpec::Zero
    } else {
        MeanSpec::Linear {
            a: rng.random_range(-0.05..0.05),
            b: rng.random_range(-1.0..1.0),
        }
    };
    GpModel::new(kernel, mean)
}

/// `n` uniform points in `[0, span)` per input coordinate.
pub fn random_inputs(dim: usize, n: usize, span: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, dim, |_, _| rng.random_range(0.0..span))
}

/// `m` test points, one per stratum of `[0, span)`, so they stay apart.
pub fn spread_inputs(dim: usize, m: usize, span: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let w = span / m as f64;
    let mut x = DMatrix::zeros(m, dim);
    for i in 0..m {
        x[(i, 0)] = w * (i as f64 + rng.random_range(0.3..0.7));
        for j in 1..dim {
            x[(i, j)] = w * (((i * 7 + 3 * j) % m) as f64 + rng.random_range(0.3..0.7));
        }
    }
    x
}

pub fn grid_1d(lo: usize, hi: usize) -> DMatrix<f64> {
    inputs_1d(&(lo..hi).map(|i| i as f64).collect::<Vec<_>>())
}

/// Desk-scale version of the periodic series configuration.
pub fn periodic_series_model() -> GpModel {
    GpModel::new(
        KernelSpec::periodic_plus_se(128.0, 1.0, 1.0, 1.0, 32.0, 0.01).unwrap(),
        MeanSpec::Linear { a: 1e-3, b: 0.0 },
    )
}
