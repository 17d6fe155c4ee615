//! Exact GP inference: posterior, marginal likelihood, ML estimation and
//! Slepian-Bangs Fisher information.

use nalgebra::{DMatrix, DVector};

use crate::error::{CgpError, Result};
use crate::model::GpModel;
use crate::optim::{self, BfgsOptions, Termination};
use crate::psd::{at_b, cholesky_jittered, PsdMatrix};

/// Mean vector and covariance over a set of latent values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: PsdMatrix,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: PsdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(CgpError::mismatch("GaussianBelief covariance", mean.len(), cov.dim()));
        }
        if mean.iter().chain(cov.as_matrix().iter()).any(|v| !v.is_finite()) {
            return Err(CgpError::InvalidInput("non-finite belief moments".into()));
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &PsdMatrix {
        &self.cov
    }

    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One block `{X_k, y_k}` of training data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSegment {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl DataSegment {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(CgpError::InvalidInput("data segment is empty".into()));
        }
        if x.nrows() != y.len() {
            return Err(CgpError::mismatch("segment observations", x.nrows(), y.len()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(CgpError::InvalidInput("non-finite value in data segment".into()));
        }
        Ok(DataSegment { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Stacks segments in order. `None` when `segments` is empty.
    pub fn concat(segments: &[DataSegment]) -> Result<Option<DataSegment>> {
        let Some(first) = segments.first() else {
            return Ok(None);
        };
        let d = first.x.ncols();
        let n: usize = segments.iter().map(|s| s.len()).sum();
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        let mut at = 0;
        for s in segments {
            if s.x.ncols() != d {
                return Err(CgpError::mismatch("segment input dimension", d, s.x.ncols()));
            }
            x.rows_mut(at, s.len()).copy_from(&s.x);
            y.rows_mut(at, s.len()).copy_from(&s.y);
            at += s.len();
        }
        Ok(Some(DataSegment { x, y }))
    }

    /// Splits into `count` contiguous blocks whose sizes differ by at most one.
    pub fn split_even(&self, count: usize) -> Result<Vec<DataSegment>> {
        if count == 0 || count > self.len() {
            return Err(CgpError::InvalidInput(format!(
                "cannot split {} points into {count} segments",
                self.len()
            )));
        }
        let (base, extra) = (self.len() / count, self.len() % count);
        let sizes: Vec<usize> = (0..count).map(|k| base + usize::from(k < extra)).collect();
        Ok(self.split_sizes(&sizes))
    }

    /// Splits into contiguous blocks of `size`; the last block may be short.
    pub fn split_by_size(&self, size: usize) -> Result<Vec<DataSegment>> {
        if size == 0 {
            return Err(CgpError::InvalidInput("segment size must be positive".into()));
        }
        let mut sizes = vec![size; self.len() / size];
        if self.len() % size != 0 {
            sizes.push(self.len() % size);
        }
        Ok(self.split_sizes(&sizes))
    }

    fn split_sizes(&self, sizes: &[usize]) -> Vec<DataSegment> {
        let mut at = 0;
        sizes
            .iter()
            .map(|&n| {
                let s = DataSegment {
                    x: self.x.rows(at, n).into_owned(),
                    y: self.y.rows(at, n).into_owned(),
                };
                at += n;
                s
            })
            .collect()
    }
}

/// Exact posterior over the latent values at `test_x` given all `segments` jointly.
///
/// With no segments the prior is returned unchanged.
pub fn gp_posterior(
    model: &GpModel,
    segments: &[DataSegment],
    test_x: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let prior = model.prior(test_x)?;
    let Some(data) = DataSegment::concat(segments)? else {
        return Ok(prior);
    };
    model.check_inputs(data.x())?;
    let f = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.train_cov(data.x())?))?;
    let a = f.solve_lower(&model.kernel.cross(data.x(), test_x)?);
    let r = f.solve_lower_vec(&(data.y() - model.mean.eval(data.x())));
    let mean = prior.mean() + a.tr_mul(&r);
    let cov = prior.cov().as_matrix() - at_b(&a, &a);
    GaussianBelief::new(mean, PsdMatrix::symmetrized(cov))
}

/// Posterior mean as an affine function of the stacked observations:
/// `mean(y) = offset + weights · y`.
#[derive(Debug, Clone)]
pub struct PredictorMap {
    pub offset: DVector<f64>,
    pub weights: DMatrix<f64>,
}

impl PredictorMap {
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.weights * y
    }
}

/// Affine map from stacked observations at `train_x` to the exact posterior mean.
pub fn gp_predictor_map(
    model: &GpModel,
    train_x: &DMatrix<f64>,
    test_x: &DMatrix<f64>,
) -> Result<PredictorMap> {
    model.check_inputs(train_x)?;
    let prior_mean = model.mean.eval(test_x);
    if train_x.nrows() == 0 {
        return Ok(PredictorMap {
            offset: prior_mean,
            weights: DMatrix::zeros(test_x.nrows(), 0),
        });
    }
    let f = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.train_cov(train_x)?))?;
    let weights = f.solve(&model.kernel.cross(train_x, test_x)?).transpose();
    let offset = prior_mean - &weights * model.mean.eval(train_x);
    Ok(PredictorMap { offset, weights })
}

/// Log marginal likelihood and its gradient with respect to the parameter vector.
#[derive(Debug, Clone)]
pub struct LogMarginal {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// `log N(y; μ_y, K + σ²_ε I)` and its analytic gradient in the model's parameter layout.
pub fn log_marginal_likelihood(model: &GpModel, segment: &DataSegment) -> Result<LogMarginal> {
    let x = segment.x();
    model.check_inputs(x)?;
    let n = segment.len() as f64;
    let f = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.train_cov(x)?))?;
    let resid = segment.y() - model.mean.eval(x);
    let alpha = f.solve_vec(&resid);
    let value = -0.5 * resid.dot(&alpha)
        - 0.5 * f.logdet()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln();

    let (dcov, dmean) = model.train_derivatives(x)?;
    let inv = f.inverse();
    let gradient = DVector::from_iterator(
        dcov.len(),
        dcov.iter().zip(&dmean).map(|(dc, dm)| match (dc, dm) {
            (Some(d), _) => 0.5 * alpha.dot(&(d * &alpha)) - 0.5 * inv.component_mul(d).sum(),
            (None, Some(m)) => m.dot(&alpha),
            (None, None) => 0.0,
        }),
    );
    Ok(LogMarginal { value, gradient })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MlOptions {
    pub bfgs: BfgsOptions,
}

/// Result of maximizing the marginal likelihood on one segment.
#[derive(Debug, Clone)]
pub struct MlEstimate {
    pub model: GpModel,
    pub theta: DVector<f64>,
    pub log_likelihood: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// `MaxIterations` flags a best-so-far iterate rather than a converged one.
    pub termination: Termination,
}

/// Maximum marginal-likelihood estimate of every model parameter, started from `init`.
pub fn ml_estimate(init: &GpModel, segment: &DataSegment, opts: &MlOptions) -> Result<MlEstimate> {
    init.check_inputs(segment.x())?;
    let objective = |theta: &DVector<f64>| {
        let m = init.with_param_vector(theta).ok()?;
        let lm = log_marginal_likelihood(&m, segment).ok()?;
        Some((-lm.value, -lm.gradient))
    };
    let min = optim::minimize(objective, init.param_vector(), &opts.bfgs)?;
    Ok(MlEstimate {
        model: init.with_param_vector(&min.x)?,
        log_likelihood: -min.value,
        grad_norm: min.grad.norm(),
        iterations: min.iterations,
        termination: min.termination,
        theta: min.x,
    })
}

/// Fisher information in the model's parameter coordinates.
#[derive(Debug, Clone)]
pub struct FisherInfo {
    pub matrix: PsdMatrix,
    pub theta: DVector<f64>,
    pub names: Vec<String>,
}

/// Slepian-Bangs Fisher information at `model`'s parameters for inputs `x`:
/// `J_ij = ∂μᵢᵀ Σ⁻¹ ∂μⱼ + ½ tr(Σ⁻¹ ∂Σᵢ Σ⁻¹ ∂Σⱼ)`.
pub fn fisher_information(model: &GpModel, x: &DMatrix<f64>) -> Result<FisherInfo> {
    model.check_inputs(x)?;
    let f = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.train_cov(x)?))?;
    let (dcov, dmean) = model.train_derivatives(x)?;
    let w: Vec<Option<DMatrix<f64>>> = dcov.iter().map(|d| d.as_ref().map(|d| f.solve(d))).collect();
    let sm: Vec<Option<DVector<f64>>> =
        dmean.iter().map(|m| m.as_ref().map(|m| f.solve_vec(m))).collect();
    let p = dcov.len();
    let mut j = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..=a {
            let mut v = 0.0;
            if let (Some(wa), Some(wb)) = (&w[a], &w[b]) {
                v += 0.5 * wa.component_mul(&wb.transpose()).sum();
            }
            if let (Some(ma), Some(sb)) = (&dmean[a], &sm[b]) {
                v += ma.dot(sb);
            }
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    Ok(FisherInfo {
        matrix: PsdMatrix::new(j)?,
        theta: model.param_vector(),
        names: model.param_names(),
    })
}
