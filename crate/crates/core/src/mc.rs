//! Seeded Monte-Carlo plumbing.
//!
//! Draws are split into fixed-size chunks; chunk `i` uses the ChaCha stream
//! `i` of the generator seeded with `seed`. Chunks may run on any number of
//! threads, and their partial sums are combined in chunk order, so results
//! are bit-identical for a given seed regardless of parallelism.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::psd::{cholesky_jittered, PsdMatrix};

pub const CHUNK: usize = 4096;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl McEstimate {
    /// `|mean − target| ≤ k · std_err`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_err
    }
}

/// Running sums for one scalar quantity.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: usize,
    sum: f64,
    sumsq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
    }

    pub fn estimate(&self) -> McEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sumsq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        McEstimate {
            mean,
            std_err: (var / n).sqrt(),
            n: self.n,
        }
    }
}

pub fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Runs `draw` `n_draws` times and accumulates the `width` values it returns
/// into one [`Moments`] each.
pub fn accumulate<F>(n_draws: usize, seed: u64, width: usize, draw: F) -> Vec<Moments>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let chunks = n_draws.div_ceil(CHUNK);
    let parts: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let count = CHUNK.min(n_draws - c * CHUNK);
            let mut acc = vec![Moments::default(); width];
            let mut out = vec![0.0; width];
            for _ in 0..count {
                draw(&mut rng, &mut out);
                for (a, v) in acc.iter_mut().zip(&out) {
                    a.push(*v);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::default(); width];
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    total
}

pub fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Draws from `N(mean, cov)` through a jittered Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    l: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &PsdMatrix) -> Result<Self> {
        let f = cholesky_jittered(cov)?;
        Ok(GaussianSampler {
            mean,
            l: f.l().clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        &self.mean + &self.l * standard_normal(rng, self.mean.len())
    }
}
