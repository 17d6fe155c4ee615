//! Mean functions and the full parameter vector of a GP model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CgpError, Result};
use crate::gp::GaussianBelief;
use crate::kernel::KernelSpec;
use crate::psd::PsdMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanSpec {
    #[default]
    Zero,
    /// `a·t + b` on the first input coordinate.
    Linear { a: f64, b: f64 },
}

impl MeanSpec {
    pub fn n_params(&self) -> usize {
        match self {
            MeanSpec::Zero => 0,
            MeanSpec::Linear { .. } => 2,
        }
    }

    pub fn eval(&self, x: &DMatrix<f64>) -> DVector<f64> {
        match *self {
            MeanSpec::Zero => DVector::zeros(x.nrows()),
            MeanSpec::Linear { a, b } => DVector::from_fn(x.nrows(), |i, _| a * x[(i, 0)] + b),
        }
    }

    /// `∂μ/∂a` and `∂μ/∂b` for a linear mean; empty for the zero mean.
    pub fn grad(&self, x: &DMatrix<f64>) -> Vec<DVector<f64>> {
        match self {
            MeanSpec::Zero => Vec::new(),
            MeanSpec::Linear { .. } => vec![
                DVector::from_fn(x.nrows(), |i, _| x[(i, 0)]),
                DVector::from_element(x.nrows(), 1.0),
            ],
        }
    }
}

/// Mean vectors at both point sets and the latent cross-covariance between them.
#[derive(Debug, Clone)]
pub struct Gram {
    pub mean: DVector<f64>,
    pub mean2: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// A kernel together with its mean function.
///
/// The parameter vector used for learning and fusion is laid out as
/// `[kernel log-params…, log σ²_ε, mean params…]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub kernel: KernelSpec,
    #[serde(default)]
    pub mean: MeanSpec,
}

impl GpModel {
    pub fn new(kernel: KernelSpec, mean: MeanSpec) -> Self {
        GpModel { kernel, mean }
    }

    pub fn zero_mean(kernel: KernelSpec) -> Self {
        GpModel {
            kernel,
            mean: MeanSpec::Zero,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.kernel.n_params() + 1 + self.mean.n_params()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .kernel
            .params()
            .names()
            .iter()
            .map(|n| format!("log_{n}"))
            .collect();
        names.push("log_noise_var".into());
        if let MeanSpec::Linear { .. } = self.mean {
            names.extend(["mean_a".to_string(), "mean_b".to_string()]);
        }
        names
    }

    pub fn param_vector(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.kernel.params().log_values().to_vec();
        v.push(self.kernel.params().noise_logvar());
        if let MeanSpec::Linear { a, b } = self.mean {
            v.extend([a, b]);
        }
        DVector::from_vec(v)
    }

    pub fn with_param_vector(&self, theta: &DVector<f64>) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(CgpError::mismatch("parameter vector", self.n_params(), theta.len()));
        }
        let nk = self.kernel.n_params();
        let kernel = self
            .kernel
            .with_log_params(&theta.as_slice()[..nk], theta[nk])?;
        let mean = match self.mean {
            MeanSpec::Zero => MeanSpec::Zero,
            MeanSpec::Linear { .. } => {
                let (a, b) = (theta[nk + 1], theta[nk + 2]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(CgpError::InvalidInput("non-finite mean parameter".into()));
                }
                MeanSpec::Linear { a, b }
            }
        };
        Ok(GpModel { kernel, mean })
    }

    pub fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(CgpError::mismatch("input dimension", self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    /// Means at `x` and `x2` and the latent cross-covariance `k(x, x2)`.
    pub fn gram(&self, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Gram> {
        if x.nrows() == 0 || x2.nrows() == 0 {
            return Err(CgpError::InvalidInput("gram requires nonempty point sets".into()));
        }
        Ok(Gram {
            mean: self.mean.eval(x),
            mean2: self.mean.eval(x2),
            cov: self.kernel.cross(x, x2)?,
        })
    }

    /// Prior belief `N(μ_z, Σ_z)` over the latent values at `test_x`.
    pub fn prior(&self, test_x: &DMatrix<f64>) -> Result<GaussianBelief> {
        self.check_inputs(test_x)?;
        GaussianBelief::new(
            self.mean.eval(test_x),
            PsdMatrix::symmetrized(self.kernel.gram(test_x)?),
        )
    }

    /// `∂Σ_y/∂θᵢ` and `∂μ_y/∂θᵢ` for every entry of the parameter vector.
    pub(crate) fn train_derivatives(
        &self,
        x: &DMatrix<f64>,
    ) -> Result<(Vec<Option<DMatrix<f64>>>, Vec<Option<DVector<f64>>>)> {
        let mut dcov: Vec<Option<DMatrix<f64>>> =
            self.kernel.train_cov_grad(x)?.into_iter().map(Some).collect();
        let mut dmean: Vec<Option<DVector<f64>>> = vec![None; dcov.len()];
        for g in self.mean.grad(x) {
            dcov.push(None);
            dmean.push(Some(g));
        }
        Ok((dcov, dmean))
    }
}
