//! Composite GP: recursive posterior updates over data segments and
//! Fisher-information-weighted fusion of per-segment estimates.
//!
//! The posterior recursion conditions the running belief over the test
//! latents `z` on one segment at a time through the model conditional
//! `p(y_k | z)`. Internally the belief is carried in prior-whitened
//! coordinates `w = L⁻¹ (z − μ_z)` with `L Lᵀ = Σ_z`, so that
//!
//! ```text
//! H_k       = Σ_{y_k,z} Σ_z⁻¹        = Bᵀ L⁻¹,   B = L⁻¹ Σ_{z,y_k}
//! Σ_{y_k|z} = Σ_{y_k} + σ²I − Bᵀ B
//! G_k       = Σ_{y_k|z} + H_k Σ̃ H_kᵀ = Σ_{y_k|z} + Bᵀ P B,   Σ̃ = L P Lᵀ
//! ```
//!
//! which never multiplies by `Σ_z⁻¹` directly. Test sets of a few dozen
//! neighbouring points give very ill-conditioned `Σ_z`, and this keeps the
//! recursion accurate there.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CgpError, Result};
use crate::gp::{fisher_information, ml_estimate, DataSegment, FisherInfo, GaussianBelief, MlEstimate, MlOptions, PredictorMap};
use crate::model::GpModel;
use crate::psd::{at_b, cholesky_jittered, PsdFactor, PsdMatrix};

/// Running composite posterior over the latent values at fixed test inputs.
#[derive(Debug, Clone)]
pub struct CgpState {
    model: GpModel,
    test_x: DMatrix<f64>,
    prior: GaussianBelief,
    prior_chol: PsdFactor,
    w_mean: DVector<f64>,
    w_cov: DMatrix<f64>,
    current: GaussianBelief,
    segments_seen: usize,
}

struct Step {
    b: DMatrix<f64>,
    gain: DMatrix<f64>,
    w_cov: DMatrix<f64>,
    mu_y: DVector<f64>,
}

impl CgpState {
    pub fn new(model: &GpModel, test_x: &DMatrix<f64>) -> Result<Self> {
        let prior = model.prior(test_x)?;
        let prior_chol = cholesky_jittered(prior.cov())?;
        let m = prior.dim();
        Ok(CgpState {
            model: model.clone(),
            test_x: test_x.clone(),
            current: prior.clone(),
            prior,
            prior_chol,
            w_mean: DVector::zeros(m),
            w_cov: DMatrix::identity(m, m),
            segments_seen: 0,
        })
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn test_x(&self) -> &DMatrix<f64> {
        &self.test_x
    }

    pub fn prior(&self) -> &GaussianBelief {
        &self.prior
    }

    pub fn current(&self) -> &GaussianBelief {
        &self.current
    }

    pub fn segments_seen(&self) -> usize {
        self.segments_seen
    }

    /// Everything in the update that does not depend on the observed values.
    fn step(&self, x: &DMatrix<f64>) -> Result<Step> {
        self.model.check_inputs(x)?;
        let b = self
            .prior_chol
            .solve_lower(&self.model.kernel.cross(&self.test_x, x)?);
        let cond = self.model.kernel.train_cov(x)? - at_b(&b, &b);
        let pb = &self.w_cov * &b;
        let g = PsdMatrix::symmetrized(cond + at_b(&b, &pb));
        let fg = cholesky_jittered(&g)?;
        let v = fg.solve_lower(&pb.transpose());
        let gain = fg.solve_upper(&v).transpose();
        let w_cov = PsdMatrix::symmetrized(&self.w_cov - at_b(&v, &v)).into_matrix();
        Ok(Step {
            b,
            gain,
            w_cov,
            mu_y: self.model.mean.eval(x),
        })
    }

    fn refresh_current(&mut self) -> Result<()> {
        let l = self.prior_chol.l();
        let mean = self.prior.mean() + l * &self.w_mean;
        let cov = l * &self.w_cov * l.transpose();
        self.current = GaussianBelief::new(mean, PsdMatrix::symmetrized(cov))?;
        Ok(())
    }

    /// Conditions the running belief on one more segment.
    pub fn update(&self, segment: &DataSegment) -> Result<CgpState> {
        let step = self.step(segment.x())?;
        let innovation = segment.y() - &step.mu_y - step.b.tr_mul(&self.w_mean);
        let mut next = self.clone();
        next.w_mean = &self.w_mean + &step.gain * innovation;
        next.w_cov = step.w_cov;
        next.segments_seen += 1;
        next.refresh_current()?;
        Ok(next)
    }

    pub fn snapshot(&self) -> CgpSnapshot {
        let m = self.current.dim();
        let cov = self.current.cov().as_matrix();
        CgpSnapshot {
            test_x: self.test_x.row_iter().map(|r| r.iter().copied().collect()).collect(),
            mean: self.current.mean().iter().copied().collect(),
            covariance: (0..m * m).map(|i| cov[(i / m, i % m)]).collect(),
            k: self.segments_seen,
        }
    }

    /// Rebuilds a state from a snapshot taken under the same model.
    pub fn restore(model: &GpModel, snap: &CgpSnapshot) -> Result<Self> {
        let d = model.input_dim();
        let m = snap.test_x.len();
        if snap.test_x.iter().any(|r| r.len() != d) {
            return Err(CgpError::mismatch("snapshot test_x dimension", d, snap.test_x[0].len()));
        }
        if snap.mean.len() != m || snap.covariance.len() != m * m {
            return Err(CgpError::mismatch("snapshot moments", m, snap.mean.len()));
        }
        let test_x = DMatrix::from_fn(m, d, |i, j| snap.test_x[i][j]);
        let mut state = CgpState::new(model, &test_x)?;
        if snap.k == 0 {
            return Ok(state);
        }
        let mean = DVector::from_column_slice(&snap.mean);
        let cov = DMatrix::from_row_slice(m, m, &snap.covariance);
        state.w_mean = state
            .prior_chol
            .solve_lower_vec(&(&mean - state.prior.mean()));
        let half = state.prior_chol.solve_lower(&cov);
        state.w_cov = PsdMatrix::symmetrized(state.prior_chol.solve_lower(&half.transpose()))
            .into_matrix();
        state.current = GaussianBelief::new(mean, PsdMatrix::new(cov)?)?;
        state.segments_seen = snap.k;
        Ok(state)
    }
}

/// JSON checkpoint of a [`CgpState`]; `covariance` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgpSnapshot {
    pub test_x: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub k: usize,
}

pub fn cgp_update(state: &CgpState, segment: &DataSegment) -> Result<CgpState> {
    state.update(segment)
}

#[derive(Debug, Clone)]
pub struct CgpRun {
    pub state: CgpState,
    pub step_times: Vec<Duration>,
}

/// Folds [`cgp_update`] over `segments` in order, timing each step.
pub fn cgp_run(model: &GpModel, segments: &[DataSegment], test_x: &DMatrix<f64>) -> Result<CgpRun> {
    if segments.is_empty() {
        return Err(CgpError::InvalidInput("cgp_run needs at least one segment".into()));
    }
    let mut state = CgpState::new(model, test_x)?;
    let mut step_times = Vec::with_capacity(segments.len());
    for (index, seg) in segments.iter().enumerate() {
        let t0 = Instant::now();
        state = state.update(seg).map_err(|e| CgpError::Segment {
            index,
            source: Box::new(e),
        })?;
        step_times.push(t0.elapsed());
    }
    Ok(CgpRun { state, step_times })
}

/// Affine map from the stacked observations of all segments to the composite posterior mean.
pub fn cgp_predictor_map(
    model: &GpModel,
    segments_x: &[DMatrix<f64>],
    test_x: &DMatrix<f64>,
) -> Result<PredictorMap> {
    let mut state = CgpState::new(model, test_x)?;
    let m = state.prior.dim();
    let n: usize = segments_x.iter().map(|x| x.nrows()).sum();
    let mut offset = DVector::zeros(m);
    let mut weights = DMatrix::zeros(m, n);
    let mut col = 0;
    for (index, x) in segments_x.iter().enumerate() {
        let step = state.step(x).map_err(|e| CgpError::Segment {
            index,
            source: Box::new(e),
        })?;
        offset += &step.gain * (-&step.mu_y - step.b.tr_mul(&offset));
        let bw = at_b(&step.b, &weights);
        weights -= &step.gain * bw;
        let mut block = weights.columns_mut(col, x.nrows());
        block += &step.gain;
        col += x.nrows();
        state.w_cov = step.w_cov;
    }
    let l = state.prior_chol.l();
    Ok(PredictorMap {
        offset: state.prior.mean() + l * offset,
        weights: l * weights,
    })
}

/// Accumulators `Λ_k = Σ Ĵ_j` and `s_k = Σ Ĵ_j θ̂_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    lambda: DMatrix<f64>,
    s: DVector<f64>,
    k: usize,
}

impl FusionState {
    pub fn new(dim: usize) -> Self {
        FusionState {
            lambda: DMatrix::zeros(dim, dim),
            s: DVector::zeros(dim),
            k: 0,
        }
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    pub fn update(&self, theta_hat: &DVector<f64>, fim: &FisherInfo) -> Result<FusionState> {
        let d = self.dim();
        if theta_hat.len() != d {
            return Err(CgpError::mismatch("fusion theta", d, theta_hat.len()));
        }
        if fim.matrix.dim() != d {
            return Err(CgpError::mismatch("fusion FIM", d, fim.matrix.dim()));
        }
        let j = fim.matrix.as_matrix();
        Ok(FusionState {
            lambda: &self.lambda + j,
            s: &self.s + j * theta_hat,
            k: self.k + 1,
        })
    }

    /// Combines accumulators built over disjoint sets of segments.
    pub fn merge(&self, other: &FusionState) -> Result<FusionState> {
        if other.dim() != self.dim() {
            return Err(CgpError::mismatch("fusion merge", self.dim(), other.dim()));
        }
        Ok(FusionState {
            lambda: &self.lambda + &other.lambda,
            s: &self.s + &other.s,
            k: self.k + other.k,
        })
    }

    /// `θ̄ = Λ⁻¹ s`.
    pub fn fused_theta(&self) -> Result<DVector<f64>> {
        let f = self.factor()?;
        Ok(f.solve_vec(&self.s))
    }

    /// `Λ⁻¹`, the asymptotic covariance of the fused estimate.
    pub fn fused_covariance(&self) -> Result<DMatrix<f64>> {
        Ok(self.factor()?.inverse())
    }

    fn factor(&self) -> Result<PsdFactor> {
        if self.k == 0 || self.lambda.trace() <= 0.0 {
            return Err(CgpError::FactorizationFailure {
                dim: self.dim(),
                last_jitter: 0.0,
            });
        }
        cholesky_jittered(&PsdMatrix::new(self.lambda.clone())?)
    }
}

pub fn fusion_update(fs: &FusionState, theta_hat: &DVector<f64>, fim: &FisherInfo) -> Result<FusionState> {
    fs.update(theta_hat, fim)
}

pub fn fused_theta(fs: &FusionState) -> Result<DVector<f64>> {
    fs.fused_theta()
}

/// Per-segment estimate and the fused estimate after including it.
#[derive(Debug, Clone)]
pub struct FusionStep {
    pub estimate: MlEstimate,
    pub fim: FisherInfo,
    pub fused: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct FusionRun {
    pub steps: Vec<FusionStep>,
    pub state: FusionState,
    /// `init` with the final fused parameters.
    pub model: GpModel,
}

/// Per-segment ML estimation and FIM evaluation at `θ̂_k`, fused in segment order.
///
/// The per-segment work runs in parallel; the fold is sequential, so the
/// result does not depend on the degree of parallelism.
pub fn learn_fused(init: &GpModel, segments: &[DataSegment], opts: &MlOptions) -> Result<FusionRun> {
    if segments.is_empty() {
        return Err(CgpError::InvalidInput("fusion needs at least one segment".into()));
    }
    let fits: Vec<Result<(MlEstimate, FisherInfo)>> = segments
        .par_iter()
        .enumerate()
        .map(|(index, seg)| {
            let wrap = |e| CgpError::Segment {
                index,
                source: Box::new(e),
            };
            let est = ml_estimate(init, seg, opts).map_err(wrap)?;
            let fim = fisher_information(&est.model, seg.x()).map_err(wrap)?;
            Ok((est, fim))
        })
        .collect();
    let mut state = FusionState::new(init.n_params());
    let mut steps = Vec::with_capacity(segments.len());
    for fit in fits {
        let (estimate, fim) = fit?;
        state = state.update(&estimate.theta, &fim)?;
        steps.push(FusionStep {
            fused: state.fused_theta()?,
            estimate,
            fim,
        });
    }
    let model = init.with_param_vector(&state.fused_theta()?)?;
    Ok(FusionRun { steps, state, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::gp_posterior;
    use crate::kernel::{inputs_1d, KernelSpec};

    fn model() -> GpModel {
        GpModel::zero_mean(KernelSpec::squared_exponential(1.0, 2.0, 0.1).unwrap())
    }

    fn fim(m: &[f64]) -> FisherInfo {
        let d = (m.len() as f64).sqrt() as usize;
        FisherInfo {
            matrix: PsdMatrix::new(DMatrix::from_row_slice(d, d, m)).unwrap(),
            theta: DVector::zeros(d),
            names: vec![String::new(); d],
        }
    }

    #[test]
    fn fresh_state_is_prior() {
        let tx = inputs_1d(&[0.0, 0.5, 1.0]);
        let s = CgpState::new(&model(), &tx).unwrap();
        assert_eq!(s.current(), s.prior());
        assert_eq!(s.segments_seen(), 0);
    }

    #[test]
    fn far_segment_leaves_belief_unchanged() {
        let tx = inputs_1d(&[0.0, 1.0]);
        let far = DataSegment::new(inputs_1d(&[500.0, 501.0]), DVector::from_vec(vec![3.0, -2.0])).unwrap();
        let s = CgpState::new(&model(), &tx).unwrap().update(&far).unwrap();
        assert!((s.current().mean() - s.prior().mean()).amax() <= 1e-6);
        assert!((s.current().cov().as_matrix() - s.prior().cov().as_matrix()).amax() <= 1e-6);
        assert_eq!(s.segments_seen(), 1);
    }

    #[test]
    fn single_segment_matches_exact() {
        let m = model();
        let tx = inputs_1d(&[0.3, 2.2, 4.1]);
        let seg = DataSegment::new(
            inputs_1d(&[0.0, 1.0, 2.0, 3.5, 5.0]),
            DVector::from_vec(vec![0.1, 0.5, -0.3, 0.8, 0.0]),
        )
        .unwrap();
        let run = cgp_run(&m, std::slice::from_ref(&seg), &tx).unwrap();
        let exact = gp_posterior(&m, &[seg], &tx).unwrap();
        assert!((run.state.current().mean() - exact.mean()).amax() < 1e-12);
        assert!((run.state.current().cov().as_matrix() - exact.cov().as_matrix()).amax() < 1e-12);
        assert_eq!(run.step_times.len(), 1);
    }

    #[test]
    fn predictor_map_reproduces_updates() {
        let m = model();
        let tx = inputs_1d(&[0.3, 2.2]);
        let s1 = DataSegment::new(inputs_1d(&[0.0, 1.0, 2.0]), DVector::from_vec(vec![0.1, 0.5, -0.3])).unwrap();
        let s2 = DataSegment::new(inputs_1d(&[1.5, 3.0]), DVector::from_vec(vec![0.4, 0.9])).unwrap();
        let run = cgp_run(&m, &[s1.clone(), s2.clone()], &tx).unwrap();
        let map = cgp_predictor_map(&m, &[s1.x().clone(), s2.x().clone()], &tx).unwrap();
        let y = DataSegment::concat(&[s1, s2]).unwrap().unwrap();
        assert!((map.apply(y.y()) - run.state.current().mean()).amax() < 1e-12);
    }

    #[test]
    fn run_errors_name_the_segment() {
        let m = model();
        let tx = inputs_1d(&[0.0]);
        let ok = DataSegment::new(inputs_1d(&[1.0]), DVector::zeros(1)).unwrap();
        let bad = DataSegment::new(DMatrix::zeros(1, 2), DVector::zeros(1)).unwrap();
        match cgp_run(&m, &[ok, bad], &tx) {
            Err(CgpError::Segment { index: 1, source }) => {
                assert!(matches!(*source, CgpError::DimensionMismatch { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(cgp_run(&m, &[], &tx).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let m = model();
        let tx = inputs_1d(&[0.0, 2.0]);
        let seg = DataSegment::new(inputs_1d(&[1.0, 3.0]), DVector::from_vec(vec![0.4, -0.1])).unwrap();
        let s = CgpState::new(&m, &tx).unwrap().update(&seg).unwrap();
        let json = serde_json::to_string(&s.snapshot()).unwrap();
        let back = CgpState::restore(&m, &serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.segments_seen(), 1);
        assert_eq!(back.current().mean(), s.current().mean());
        assert!((back.current().cov().as_matrix() - s.current().cov().as_matrix()).amax() < 1e-15);
        let seg2 = DataSegment::new(inputs_1d(&[0.5]), DVector::from_vec(vec![0.2])).unwrap();
        let a = s.update(&seg2).unwrap();
        let b = back.update(&seg2).unwrap();
        assert!((a.current().mean() - b.current().mean()).amax() < 1e-10);
    }

    #[test]
    fn fusion_single_and_equal_weights() {
        let j = fim(&[4.0, 1.0, 1.0, 3.0]);
        let t1 = DVector::from_vec(vec![0.5, -1.0]);
        let t2 = DVector::from_vec(vec![1.5, 2.0]);
        let one = FusionState::new(2).update(&t1, &j).unwrap();
        assert!((one.fused_theta().unwrap() - &t1).amax() < 1e-14);
        let two = one.update(&t2, &j).unwrap();
        assert!((two.fused_theta().unwrap() - (&t1 + &t2) / 2.0).amax() < 1e-14);
        assert_eq!(two.k(), 2);
    }

    #[test]
    fn fusion_rejects_empty_and_mismatched() {
        assert!(matches!(
            FusionState::new(2).fused_theta(),
            Err(CgpError::FactorizationFailure { .. })
        ));
        let j = fim(&[1.0]);
        assert!(FusionState::new(2).update(&DVector::zeros(2), &j).is_err());
    }
}
