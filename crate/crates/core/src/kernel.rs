//! Stationary covariance functions with analytic log-parameter derivatives.
//!
//! All positive hyperparameters are stored as natural logarithms. Inputs are
//! passed as matrices whose rows are points.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{CgpError, Result};

/// Kernel family. The period of the periodic component is fixed, not learned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// `α² exp(−(x−x′)²/ℓ²)`, parameters `[amplitude, lengthscale]`.
    SquaredExponential,
    /// `α₁² exp(−2 sin²(π|t−t′|/T)/θ₁²) + α₂² exp(−(t−t′)²/θ₂²)`,
    /// parameters `[alpha1, theta1, alpha2, theta2]`.
    PeriodicPlusSe { period: f64 },
    /// `α² exp(−(x₁−x₁′)²/θ₁² − (x₂−x₂′)²/θ₂²)`, parameters `[amplitude, theta1, theta2]`.
    Se2dArd,
}

impl KernelFamily {
    pub fn input_dim(&self) -> usize {
        match self {
            KernelFamily::Se2dArd => 2,
            _ => 1,
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            KernelFamily::SquaredExponential => &["amplitude", "lengthscale"],
            KernelFamily::PeriodicPlusSe { .. } => &["alpha1", "theta1", "alpha2", "theta2"],
            KernelFamily::Se2dArd => &["amplitude", "theta1", "theta2"],
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "squared_exponential",
            KernelFamily::PeriodicPlusSe { .. } => "periodic_plus_se",
            KernelFamily::Se2dArd => "se2d_ard",
        }
    }
}

/// Log-space kernel parameters plus the log observation-noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    names: Vec<String>,
    values: Vec<f64>,
    noise_logvar: f64,
}

impl Hyperparams {
    pub fn from_log(names: Vec<String>, values: Vec<f64>, noise_logvar: f64) -> Result<Self> {
        if names.len() != values.len() {
            return Err(CgpError::mismatch("Hyperparams names", values.len(), names.len()));
        }
        let ok = |v: f64| v.is_finite() && v.exp().is_finite() && v.exp() > 0.0;
        if !values.iter().copied().all(ok) || !ok(noise_logvar) {
            return Err(CgpError::InvalidInput(
                "hyperparameters must exponentiate to finite positive values".into(),
            ));
        }
        Ok(Hyperparams {
            names,
            values,
            noise_logvar,
        })
    }

    pub fn from_natural(names: &[&str], values: &[f64], noise_var: f64) -> Result<Self> {
        if values.iter().chain([&noise_var]).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(CgpError::InvalidInput(
                "hyperparameters must be finite and positive".into(),
            ));
        }
        Self::from_log(
            names.iter().map(|s| s.to_string()).collect(),
            values.iter().map(|v| v.ln()).collect(),
            noise_var.ln(),
        )
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn log_values(&self) -> &[f64] {
        &self.values
    }

    pub fn natural(&self, i: usize) -> f64 {
        self.values[i].exp()
    }

    pub fn noise_logvar(&self) -> f64 {
        self.noise_logvar
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_logvar.exp()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelConfig", into = "KernelConfig")]
pub struct KernelSpec {
    family: KernelFamily,
    params: Hyperparams,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, params: Hyperparams) -> Result<Self> {
        let n = family.param_names().len();
        if params.len() != n {
            return Err(CgpError::mismatch("kernel parameter count", n, params.len()));
        }
        if let KernelFamily::PeriodicPlusSe { period } = family {
            if !(period > 0.0 && period.is_finite()) {
                return Err(CgpError::InvalidInput("period must be positive".into()));
            }
        }
        Ok(KernelSpec { family, params })
    }

    pub fn squared_exponential(amplitude: f64, lengthscale: f64, noise_var: f64) -> Result<Self> {
        let f = KernelFamily::SquaredExponential;
        Self::new(
            f,
            Hyperparams::from_natural(f.param_names(), &[amplitude, lengthscale], noise_var)?,
        )
    }

    pub fn periodic_plus_se(
        period: f64,
        alpha1: f64,
        theta1: f64,
        alpha2: f64,
        theta2: f64,
        noise_var: f64,
    ) -> Result<Self> {
        let f = KernelFamily::PeriodicPlusSe { period };
        Self::new(
            f,
            Hyperparams::from_natural(f.param_names(), &[alpha1, theta1, alpha2, theta2], noise_var)?,
        )
    }

    pub fn se2d_ard(amplitude: f64, theta1: f64, theta2: f64, noise_var: f64) -> Result<Self> {
        let f = KernelFamily::Se2dArd;
        Self::new(
            f,
            Hyperparams::from_natural(f.param_names(), &[amplitude, theta1, theta2], noise_var)?,
        )
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn noise_var(&self) -> f64 {
        self.params.noise_var()
    }

    pub fn input_dim(&self) -> usize {
        self.family.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Same family with new log parameters.
    pub fn with_log_params(&self, values: &[f64], noise_logvar: f64) -> Result<Self> {
        Self::new(
            self.family,
            Hyperparams::from_log(self.params.names.clone(), values.to_vec(), noise_logvar)?,
        )
    }

    /// Prior variance of the latent process, `k(x, x)`.
    pub fn variance(&self) -> f64 {
        let p = &self.params;
        match self.family {
            KernelFamily::PeriodicPlusSe { .. } => p.natural(0).powi(2) + p.natural(2).powi(2),
            _ => p.natural(0).powi(2),
        }
    }

    /// Kernel value at a pair of points.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        let d = self.input_dim();
        for p in [x, x2] {
            if p.len() != d {
                return Err(CgpError::mismatch("kernel_eval point dimension", d, p.len()));
            }
        }
        Ok(self.eval_with_grad(x, x2, None))
    }

    /// Kernel value; when `grad` is given it receives `∂k/∂(log param)` for each kernel parameter.
    fn eval_with_grad(&self, x: &[f64], x2: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let p = &self.params;
        match self.family {
            KernelFamily::SquaredExponential => {
                let (a2, l) = (p.natural(0).powi(2), p.natural(1));
                let r2 = (x[0] - x2[0]).powi(2) / (l * l);
                let k = a2 * (-r2).exp();
                if let Some(g) = grad {
                    g[0] = 2.0 * k;
                    g[1] = 2.0 * r2 * k;
                }
                k
            }
            KernelFamily::PeriodicPlusSe { period } => {
                let (a1, t1, a2, t2) = (
                    p.natural(0).powi(2),
                    p.natural(1),
                    p.natural(2).powi(2),
                    p.natural(3),
                );
                let tau = (x[0] - x2[0]).abs();
                let s2 = (PI * tau / period).sin().powi(2);
                let u = 2.0 * s2 / (t1 * t1);
                let kp = a1 * (-u).exp();
                let r2 = tau * tau / (t2 * t2);
                let ks = a2 * (-r2).exp();
                if let Some(g) = grad {
                    g[0] = 2.0 * kp;
                    g[1] = 2.0 * u * kp;
                    g[2] = 2.0 * ks;
                    g[3] = 2.0 * r2 * ks;
                }
                kp + ks
            }
            KernelFamily::Se2dArd => {
                let (a2, t1, t2) = (p.natural(0).powi(2), p.natural(1), p.natural(2));
                let r1 = (x[0] - x2[0]).powi(2) / (t1 * t1);
                let r2 = (x[1] - x2[1]).powi(2) / (t2 * t2);
                let k = a2 * (-(r1 + r2)).exp();
                if let Some(g) = grad {
                    g[0] = 2.0 * k;
                    g[1] = 2.0 * r1 * k;
                    g[2] = 2.0 * r2 * k;
                }
                k
            }
        }
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(CgpError::mismatch("input dimension", self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    /// Cross-covariance `k(X, X′)` of the latent process (no noise).
    pub fn cross(&self, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(x)?;
        self.check_inputs(x2)?;
        let rows: Vec<RowDVector<f64>> = x.row_iter().map(|r| r.into_owned()).collect();
        let cols: Vec<RowDVector<f64>> = x2.row_iter().map(|r| r.into_owned()).collect();
        Ok(DMatrix::from_fn(x.nrows(), x2.nrows(), |i, j| {
            self.eval_with_grad(rows[i].as_slice(), cols[j].as_slice(), None)
        }))
    }

    /// Symmetric latent Gram `k(X, X)`, filled from the lower triangle.
    pub fn gram(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(x)?;
        let n = x.nrows();
        let rows: Vec<RowDVector<f64>> = x.row_iter().map(|r| r.into_owned()).collect();
        let mut g = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.eval_with_grad(rows[i].as_slice(), rows[j].as_slice(), None);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    /// Observation covariance `k(X, X) + σ²_ε I`.
    pub fn train_cov(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut g = self.gram(x)?;
        let s2 = self.noise_var();
        for i in 0..g.nrows() {
            g[(i, i)] += s2;
        }
        Ok(g)
    }

    /// `∂k(X, X′)/∂(log θᵢ)` for each kernel parameter.
    pub fn cross_grad(&self, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_inputs(x)?;
        self.check_inputs(x2)?;
        let np = self.n_params();
        let mut out = vec![DMatrix::zeros(x.nrows(), x2.nrows()); np];
        let mut g = vec![0.0; np];
        let rows: Vec<RowDVector<f64>> = x.row_iter().map(|r| r.into_owned()).collect();
        let cols: Vec<RowDVector<f64>> = x2.row_iter().map(|r| r.into_owned()).collect();
        for (j, c) in cols.iter().enumerate() {
            for (i, r) in rows.iter().enumerate() {
                self.eval_with_grad(r.as_slice(), c.as_slice(), Some(&mut g));
                for (m, gv) in out.iter_mut().zip(&g) {
                    m[(i, j)] = *gv;
                }
            }
        }
        Ok(out)
    }

    /// Derivatives of `k(X, X) + σ²_ε I`: one matrix per kernel parameter, then the noise term.
    pub fn train_cov_grad(&self, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let mut out = self.cross_grad(x, x)?;
        out.push(DMatrix::identity(x.nrows(), x.nrows()) * self.noise_var());
        Ok(out)
    }
}

/// JSON form of a kernel: natural-space values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: String,
    pub params: BTreeMap<String, f64>,
    pub noise_var: f64,
}

impl TryFrom<KernelConfig> for KernelSpec {
    type Error = CgpError;

    fn try_from(c: KernelConfig) -> Result<Self> {
        let mut params = c.params.clone();
        let family = match c.family.as_str() {
            "squared_exponential" => KernelFamily::SquaredExponential,
            "se2d_ard" => KernelFamily::Se2dArd,
            "periodic_plus_se" => {
                let period = params.remove("period").ok_or_else(|| {
                    CgpError::InvalidInput("periodic_plus_se requires params.period".into())
                })?;
                KernelFamily::PeriodicPlusSe { period }
            }
            other => {
                return Err(CgpError::InvalidInput(format!("unknown kernel family `{other}`")))
            }
        };
        let names = family.param_names();
        let mut values = Vec::with_capacity(names.len());
        for n in names {
            values.push(params.remove(*n).ok_or_else(|| {
                CgpError::InvalidInput(format!("kernel `{}` is missing params.{n}", c.family))
            })?);
        }
        if let Some(extra) = params.keys().next() {
            return Err(CgpError::InvalidInput(format!("unknown kernel parameter `{extra}`")));
        }
        KernelSpec::new(family, Hyperparams::from_natural(names, &values, c.noise_var)?)
    }
}

impl From<KernelSpec> for KernelConfig {
    fn from(k: KernelSpec) -> Self {
        let mut params: BTreeMap<String, f64> = k
            .params
            .names
            .iter()
            .zip(&k.params.values)
            .map(|(n, v)| (n.clone(), v.exp()))
            .collect();
        if let KernelFamily::PeriodicPlusSe { period } = k.family {
            params.insert("period".into(), period);
        }
        KernelConfig {
            family: k.family.tag().into(),
            params,
            noise_var: k.noise_var(),
        }
    }
}

/// Column matrix of 1-D inputs.
pub fn inputs_1d(t: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(t.len(), 1, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn se() -> KernelSpec {
        KernelSpec::squared_exponential(1.0, 2.0, 0.1).unwrap()
    }

    fn periodic() -> KernelSpec {
        KernelSpec::periodic_plus_se(128.0, 1.0, 1.0, 1.0, 32.0, 0.01).unwrap()
    }

    #[test]
    fn se_unit_amplitude_at_zero_lag() {
        assert_eq!(se().eval(&[3.0], &[3.0]).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_in_lag() {
        for k in [se(), periodic()] {
            assert_eq!(k.eval(&[1.0], &[4.5]).unwrap(), k.eval(&[4.5], &[1.0]).unwrap());
        }
        let k = KernelSpec::se2d_ard(1.0, 8.0, 3.0, 0.1).unwrap();
        assert_eq!(
            k.eval(&[1.0, 2.0], &[4.0, -1.0]).unwrap(),
            k.eval(&[4.0, -1.0], &[1.0, 2.0]).unwrap()
        );
    }

    #[test]
    fn periodic_component_repeats() {
        // Switch off the SE component by giving it a negligible amplitude.
        let k = KernelSpec::periodic_plus_se(128.0, 1.3, 0.7, 1e-150, 32.0, 0.01).unwrap();
        let at0 = k.eval(&[0.0], &[0.0]).unwrap();
        let at128 = k.eval(&[0.0], &[128.0]).unwrap();
        assert!((at0 - at128).abs() < 1e-14, "{at0} vs {at128}");
        assert!((at0 - 1.69).abs() < 1e-12);
    }

    #[test]
    fn eval_rejects_wrong_dimension() {
        assert!(matches!(
            se().eval(&[1.0, 2.0], &[1.0]),
            Err(CgpError::DimensionMismatch { .. })
        ));
        let x = DMatrix::zeros(3, 2);
        assert!(se().gram(&x).is_err());
    }

    #[test]
    fn single_point_and_duplicates() {
        let k = se();
        let g = k.gram(&inputs_1d(&[0.3])).unwrap();
        assert_eq!(g[(0, 0)], k.variance());
        let g = k.gram(&inputs_1d(&[0.3, 0.3])).unwrap();
        assert!(g.iter().all(|&v| v == 1.0));
        assert!(g.clone().symmetric_eigenvalues().iter().any(|e| e.abs() < 1e-15));
    }

    #[test]
    fn gram_matches_entrywise_eval() {
        let k = periodic();
        let t = [0.0, 17.5, 64.0, 100.25, 300.0];
        let g = k.gram(&inputs_1d(&t)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(g[(i, j)], k.eval(&[t[i]], &[t[j]]).unwrap());
            }
        }
    }

    #[test]
    fn log_amplitude_derivative_is_twice_gram() {
        let k = se();
        let x = inputs_1d(&[0.0, 1.0, 2.5]);
        let g = k.cross_grad(&x, &x).unwrap();
        assert_eq!(g[0], k.gram(&x).unwrap() * 2.0);
        // lengthscale derivative vanishes on the diagonal (zero lag)
        assert!((0..3).all(|i| g[1][(i, i)] == 0.0));
        let tg = k.train_cov_grad(&x).unwrap();
        assert_eq!(tg.len(), 3);
        assert!((&tg[2] - DMatrix::identity(3, 3) * 0.1).amax() < 1e-16);
    }

    #[test]
    fn json_round_trip_uses_natural_values() {
        let k = periodic();
        let s = serde_json::to_string(&k).unwrap();
        assert!(s.contains("\"period\":128.0"));
        let back: KernelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back.family(), k.family());
        for (a, b) in back.params().log_values().iter().zip(k.params().log_values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let bad = r#"{"family":"squared_exponential","params":{"amplitude":1},"noise_var":0.1}"#;
        assert!(serde_json::from_str::<KernelSpec>(bad).is_err());
        let neg = r#"{"family":"squared_exponential","params":{"amplitude":1,"lengthscale":-2},"noise_var":0.1}"#;
        assert!(serde_json::from_str::<KernelSpec>(neg).is_err());
    }

    proptest! {
        #[test]
        fn gram_is_psd_up_to_jitter(
            amp in 0.2f64..3.0, ls in 0.3f64..10.0,
            pts in proptest::collection::vec(-20.0f64..20.0, 1..25)
        ) {
            let k = KernelSpec::squared_exponential(amp, ls, 0.1).unwrap();
            let g = crate::psd::PsdMatrix::new(k.gram(&inputs_1d(&pts)).unwrap()).unwrap();
            prop_assert!(crate::psd::cholesky_jittered(&g).is_ok());
            prop_assert!(g.min_eigenvalue() >= -1e-8 * g.trace() / g.dim() as f64);
        }
    }
}
