//! Information and error diagnostics comparing the composite posterior to
//! the exact one: mutual information, the MSE lower bound, excess MSE of the
//! two-segment composite predictor, the information-gain gap, and
//! Monte-Carlo checks of the data-averaged KL divergence.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::cgp::{cgp_predictor_map, cgp_run};
use crate::error::{CgpError, Result};
use crate::gp::{gp_predictor_map, DataSegment, PredictorMap};
use crate::mc::{accumulate, standard_normal, GaussianSampler, McEstimate};
use crate::model::{GpModel, MeanSpec};
use crate::psd::{at_b, block_inverse_2x2, cholesky_jittered, PsdFactor, PsdMatrix};

const MI_CLAMP: f64 = 1e-10;
const GAP_TOL: f64 = 1e-9;
const MIN_DRAWS: usize = 1000;

fn ser_vec<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

fn ser_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()))
}

/// Row-wise concatenation of input blocks sharing a column count.
pub fn stack_inputs(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let d = blocks.first().map_or(0, |b| b.ncols());
    if let Some(b) = blocks.iter().find(|b| b.ncols() != d) {
        return Err(CgpError::mismatch("stacked input dimension", d, b.ncols()));
    }
    let n = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, d);
    let mut row = 0;
    for b in blocks {
        out.rows_mut(row, b.nrows()).copy_from(b);
        row += b.nrows();
    }
    Ok(out)
}

fn check_draws(n_draws: usize) -> Result<()> {
    if n_draws < MIN_DRAWS {
        return Err(CgpError::InvalidInput(format!(
            "at least {MIN_DRAWS} Monte-Carlo draws required, got {n_draws}"
        )));
    }
    Ok(())
}

fn zero_segments(blocks: &[DMatrix<f64>]) -> Result<Vec<DataSegment>> {
    blocks
        .iter()
        .map(|x| DataSegment::new(x.clone(), DVector::zeros(x.nrows())))
        .collect()
}

/// `I(z; y)` in nats for the observations at the stacked `segments_x`.
///
/// Evaluated as `½(log|Σ_y| − log|Σ_{y|z}|)`, which equals
/// `½(log|Σ_z| − log|Σ_{z|y}|)` but only factors noise-regularized
/// matrices. Values in `(−1e-10, 0)` are clamped to zero.
pub fn mutual_information(model: &GpModel, segments_x: &[DMatrix<f64>], test_x: &DMatrix<f64>) -> Result<f64> {
    let x = stack_inputs(segments_x)?;
    model.check_inputs(test_x)?;
    if x.nrows() == 0 {
        return Ok(0.0);
    }
    model.check_inputs(&x)?;
    let lz = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.gram(test_x)?))?;
    let b = lz.solve_lower(&model.kernel.cross(test_x, &x)?);
    let sy = model.kernel.train_cov(&x)?;
    let cond = PsdMatrix::symmetrized(&sy - at_b(&b, &b));
    let sy = PsdMatrix::symmetrized(sy);
    let mi = 0.5 * (cholesky_jittered(&sy)?.logdet() - cholesky_jittered(&cond)?.logdet());
    Ok(if mi < 0.0 && mi > -MI_CLAMP { 0.0 } else { mi })
}

/// Gaussian-case lower bound `σ²_z · exp(−2I)` on the MSE of any estimator of `z`.
pub fn mse_lower_bound(prior_var: f64, mi: f64) -> Result<f64> {
    if !(prior_var > 0.0) || !(mi >= 0.0) || !prior_var.is_finite() || !mi.is_finite() {
        return Err(CgpError::InvalidInput(format!(
            "mse_lower_bound needs prior_var > 0 and mi ≥ 0, got {prior_var}, {mi}"
        )));
    }
    Ok(prior_var * (-2.0 * mi).exp())
}

/// Data-averaged squared difference between the exact and composite
/// predictors at one test point, for two segments.
#[derive(Debug, Clone, Serialize)]
pub struct ExcessMseReport {
    pub closed_form: f64,
    pub monte_carlo: Option<ExcessMseMc>,
    #[serde(serialize_with = "ser_vec")]
    pub alpha1: DVector<f64>,
    #[serde(serialize_with = "ser_vec")]
    pub alpha2: DVector<f64>,
    #[serde(serialize_with = "ser_rows")]
    pub gp_coeffs: DMatrix<f64>,
    #[serde(serialize_with = "ser_rows")]
    pub cgp_coeffs: DMatrix<f64>,
}

fn scalar_test_point(model: &GpModel, test_x: &DMatrix<f64>) -> Result<()> {
    model.check_inputs(test_x)?;
    if test_x.nrows() != 1 {
        return Err(CgpError::InvalidInput(format!(
            "a single test point is required, got {}",
            test_x.nrows()
        )));
    }
    Ok(())
}

/// Closed-form excess MSE of the composite predictor over the exact one.
///
/// Both predictors are written as `Σ_{z,y}ᵀ M y` with coefficient blocks `M`.
/// For the exact GP `M` is the inverse of the joint data covariance; the
/// composite version replaces the cross block by `Σ_{y1,z} Σ_{z,y2} / σ²_z`.
/// The excess is `αᵀ Σ_y α` with `α = (M_gp − M_cgp)ᵀ Σ_{y,z}`.
/// Requires a zero prior mean and a single test point.
pub fn excess_mse_closed_form(
    model: &GpModel,
    seg1_x: &DMatrix<f64>,
    seg2_x: &DMatrix<f64>,
    test_x: &DMatrix<f64>,
) -> Result<ExcessMseReport> {
    if model.mean != MeanSpec::Zero {
        return Err(CgpError::InvalidInput("excess MSE closed form needs a zero-mean model".into()));
    }
    scalar_test_point(model, test_x)?;
    model.check_inputs(seg1_x)?;
    model.check_inputs(seg2_x)?;
    let (n1, n2) = (seg1_x.nrows(), seg2_x.nrows());
    if n1 == 0 || n2 == 0 {
        return Err(CgpError::InvalidInput("both segments must be nonempty".into()));
    }
    let k = &model.kernel;
    let var_z = k.gram(test_x)?[(0, 0)];
    let c1 = k.cross(seg1_x, test_x)?;
    let c2 = k.cross(seg2_x, test_x)?;
    let s11 = PsdMatrix::symmetrized(k.train_cov(seg1_x)?);
    let s22 = PsdMatrix::symmetrized(k.train_cov(seg2_x)?);
    let s12 = k.cross(seg1_x, seg2_x)?;
    let gp_coeffs = block_inverse_2x2(&s11, &s12, &s12.transpose(), &s22)?.assemble();

    let f11 = cholesky_jittered(&s11)?;
    let inv11 = f11.inverse();
    let post_var1 = var_z - (c1.transpose() * &inv11 * &c1)[(0, 0)];
    let approx21 = &c2 * c1.transpose() / var_z;
    let approx_schur = PsdMatrix::symmetrized(s22.as_matrix() - &approx21 * &inv11 * approx21.transpose());
    let schur_inv = cholesky_jittered(&approx_schur)?.inverse() * (post_var1 / var_z);
    let mut cgp_coeffs = DMatrix::zeros(n1 + n2, n1 + n2);
    cgp_coeffs.view_mut((0, 0), (n1, n1)).copy_from(&inv11);
    cgp_coeffs
        .view_mut((n1, 0), (n2, n1))
        .copy_from(&(-(&schur_inv * &approx21 * &inv11)));
    cgp_coeffs.view_mut((n1, n1), (n2, n2)).copy_from(&schur_inv);

    let c = stack_inputs(&[c1, c2])?;
    let alpha = at_b(&(&gp_coeffs - &cgp_coeffs), &c).column(0).into_owned();
    let mut joint = DMatrix::zeros(n1 + n2, n1 + n2);
    joint.view_mut((0, 0), (n1, n1)).copy_from(s11.as_matrix());
    joint.view_mut((0, n1), (n1, n2)).copy_from(&s12);
    joint.view_mut((n1, 0), (n2, n1)).copy_from(&s12.transpose());
    joint.view_mut((n1, n1), (n2, n2)).copy_from(s22.as_matrix());
    let lj = cholesky_jittered(&PsdMatrix::symmetrized(joint))?;
    let closed_form = lj.l().tr_mul(&alpha).norm_squared();
    Ok(ExcessMseReport {
        closed_form,
        monte_carlo: None,
        alpha1: alpha.rows(0, n1).into_owned(),
        alpha2: alpha.rows(n1, n2).into_owned(),
        gp_coeffs,
        cgp_coeffs,
    })
}

/// Monte-Carlo estimates over joint prior draws of `(z, y)` at one test point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExcessMseMc {
    /// `E[(ẑ_gp − ẑ_approx)²]`
    pub excess: McEstimate,
    /// `E[(z − ẑ_approx)²]`
    pub approx_mse: McEstimate,
    /// `E[(z − ẑ_gp)²]`
    pub gp_mse: McEstimate,
    /// Exact posterior variance `σ²_{z|y}`.
    pub posterior_var: f64,
    /// Per-draw `(z − ẑ_approx)² − σ²_{z|y} − (ẑ_gp − ẑ_approx)²`; zero in expectation.
    pub decomposition_residual: McEstimate,
}

/// Compares an arbitrary affine predictor of `z` against the exact GP one.
pub fn predictor_excess_mse(
    model: &GpModel,
    train_x: &DMatrix<f64>,
    test_x: &DMatrix<f64>,
    approx: &PredictorMap,
    n_draws: usize,
    seed: u64,
) -> Result<ExcessMseMc> {
    check_draws(n_draws)?;
    scalar_test_point(model, test_x)?;
    model.check_inputs(train_x)?;
    let n = train_x.nrows();
    if approx.weights.shape() != (1, n) {
        return Err(CgpError::mismatch("predictor weights", n, approx.weights.ncols()));
    }
    let exact = gp_predictor_map(model, train_x, test_x)?;
    let k = &model.kernel;
    let kzy = k.cross(test_x, train_x)?;
    let mut joint = DMatrix::zeros(n + 1, n + 1);
    joint[(0, 0)] = k.gram(test_x)?[(0, 0)];
    joint.view_mut((0, 1), (1, n)).copy_from(&kzy);
    joint.view_mut((1, 0), (n, 1)).copy_from(&kzy.transpose());
    joint.view_mut((1, 1), (n, n)).copy_from(&k.train_cov(train_x)?);
    let posterior_var = joint[(0, 0)] - (&exact.weights * kzy.transpose())[(0, 0)];
    let mut mean = DVector::zeros(n + 1);
    mean[0] = model.mean.eval(test_x)[0];
    mean.rows_mut(1, n).copy_from(&model.mean.eval(train_x));
    let sampler = GaussianSampler::new(mean, &PsdMatrix::symmetrized(joint))?;
    let (wg, wa) = (exact.weights.row(0), approx.weights.row(0));
    let (og, oa) = (exact.offset[0], approx.offset[0]);
    let m = accumulate(n_draws, seed, 4, |rng, out| {
        let v = sampler.sample(rng);
        let y = v.rows(1, n);
        let z = v[0];
        let zg = og + wg.dot(&y.transpose());
        let za = oa + wa.dot(&y.transpose());
        let d2 = (zg - za).powi(2);
        out[0] = d2;
        out[1] = (z - za).powi(2);
        out[2] = (z - zg).powi(2);
        out[3] = out[1] - posterior_var - d2;
    });
    Ok(ExcessMseMc {
        excess: m[0].estimate(),
        approx_mse: m[1].estimate(),
        gp_mse: m[2].estimate(),
        posterior_var,
        decomposition_residual: m[3].estimate(),
    })
}

/// Monte-Carlo excess MSE of the composite predictor over any number of segments.
pub fn excess_mse_monte_carlo(
    model: &GpModel,
    segments_x: &[DMatrix<f64>],
    test_x: &DMatrix<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<ExcessMseMc> {
    let approx = cgp_predictor_map(model, segments_x, test_x)?;
    predictor_excess_mse(model, &stack_inputs(segments_x)?, test_x, &approx, n_draws, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Redundant,
    Synergistic,
    Balanced,
}

#[derive(Debug, Clone, Serialize)]
pub struct InfoReport {
    pub mi_full: f64,
    pub mi_segments: Vec<f64>,
    /// `mi_full − Σ mi_segments`
    pub gap: f64,
    pub verdict: Verdict,
}

/// Joint information against the sum of per-segment informations.
///
/// A negative gap means the segments carry overlapping information and the
/// composite posterior is overconfident.
pub fn info_gap(model: &GpModel, segments_x: &[DMatrix<f64>], test_x: &DMatrix<f64>) -> Result<InfoReport> {
    if segments_x.len() < 2 {
        return Err(CgpError::InvalidInput("info_gap needs at least two segments".into()));
    }
    let mi_full = mutual_information(model, segments_x, test_x)?;
    let mi_segments = segments_x
        .iter()
        .map(|x| mutual_information(model, std::slice::from_ref(x), test_x))
        .collect::<Result<Vec<_>>>()?;
    let gap = mi_full - mi_segments.iter().sum::<f64>();
    let verdict = if gap < -GAP_TOL {
        Verdict::Redundant
    } else if gap > GAP_TOL {
        Verdict::Synergistic
    } else {
        Verdict::Balanced
    };
    Ok(InfoReport {
        mi_full,
        mi_segments,
        gap,
        verdict,
    })
}

/// `D(N(μ₁, Σ₁) ‖ N(μ₀, Σ₀))` in nats.
pub fn gaussian_kld(
    mean1: &DVector<f64>,
    cov1: &PsdMatrix,
    mean0: &DVector<f64>,
    cov0: &PsdMatrix,
) -> Result<f64> {
    let m = mean0.len();
    if mean1.len() != m || cov1.dim() != m || cov0.dim() != m {
        return Err(CgpError::mismatch("gaussian_kld dimension", m, mean1.len()));
    }
    let f0 = cholesky_jittered(cov0)?;
    let f1 = cholesky_jittered(cov1)?;
    let w = f0.solve_lower(f1.l());
    let d = f0.solve_lower_vec(&(mean1 - mean0));
    Ok(0.5 * (w.norm_squared() + d.norm_squared() - m as f64 + f0.logdet() - f1.logdet()))
}

/// Sampled data-average of a posterior-to-prior KLD next to its analytic target.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KldCheck {
    pub sampled: McEstimate,
    pub analytic: f64,
}

/// KLD between `N(offset + W y, post_cov)` and the prior `N(μ_z, prior)`,
/// averaged over `y = μ_y + data_factor · ε`. The posterior mean satisfies
/// `offset + W μ_y = μ_z` for both predictors, so only `W` matters.
fn sampled_kld(
    prior: &PsdFactor,
    post_cov: &PsdMatrix,
    weights: &DMatrix<f64>,
    data_factor: &DMatrix<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    let m = prior.dim();
    let fp = cholesky_jittered(post_cov)?;
    let w = prior.solve_lower(fp.l());
    let constant = 0.5 * (w.norm_squared() - m as f64 + prior.logdet() - fp.logdet());
    let t = prior.solve_lower(&(weights * data_factor));
    let n = t.ncols();
    let moments = accumulate(n_draws, seed, 1, |rng, out| {
        out[0] = constant + 0.5 * (&t * standard_normal(rng, n)).norm_squared();
    });
    Ok(moments[0].estimate())
}

/// Sampled `E_y[D(p(z|y) ‖ p(z))]` for the exact posterior, against `I(z; y)`.
pub fn kld_identity_check(
    model: &GpModel,
    train_x: &DMatrix<f64>,
    test_x: &DMatrix<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<KldCheck> {
    check_draws(n_draws)?;
    model.check_inputs(test_x)?;
    if train_x.nrows() == 0 {
        return Ok(KldCheck {
            sampled: McEstimate {
                mean: 0.0,
                std_err: 0.0,
                n: n_draws,
            },
            analytic: 0.0,
        });
    }
    model.check_inputs(train_x)?;
    let prior = PsdMatrix::symmetrized(model.kernel.gram(test_x)?);
    let fz = cholesky_jittered(&prior)?;
    let fy = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.train_cov(train_x)?))?;
    let a = fy.solve_lower(&model.kernel.cross(train_x, test_x)?);
    let post = PsdMatrix::symmetrized(prior.as_matrix() - at_b(&a, &a));
    let map = gp_predictor_map(model, train_x, test_x)?;
    let sampled = sampled_kld(&fz, &post, &map.weights, fy.l(), n_draws, seed)?;
    let analytic = mutual_information(model, std::slice::from_ref(train_x), test_x)?;
    Ok(KldCheck { sampled, analytic })
}

/// Distribution of the data used to average the composite posterior's KLD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataAverage {
    /// The model's joint marginal `p(y_{1:K})`.
    Joint,
    /// Independent segments, `Π_k p(y_k)`.
    SegmentProduct,
    /// The composite model `∫ p(z) Π_k p(y_k | z) dz`: exact blocks on the
    /// diagonal, `Σ_{y_j,z} Σ_z⁻¹ Σ_{z,y_k}` between segments.
    Composite,
}

#[derive(Debug, Clone, Serialize)]
pub struct CgpKldCheck {
    pub sampled: McEstimate,
    pub average: DataAverage,
    pub mi_full: f64,
    pub mi_segments_sum: f64,
}

/// Sampled data-averaged KLD of the composite posterior from the prior,
/// reported next to `Σ_k I(z; y_k)` and `I(z; y)`.
pub fn cgp_kld_check(
    model: &GpModel,
    segments_x: &[DMatrix<f64>],
    test_x: &DMatrix<f64>,
    average: DataAverage,
    n_draws: usize,
    seed: u64,
) -> Result<CgpKldCheck> {
    check_draws(n_draws)?;
    let report = info_gap(model, segments_x, test_x)?;
    let run = cgp_run(model, &zero_segments(segments_x)?, test_x)?;
    let map = cgp_predictor_map(model, segments_x, test_x)?;
    let x = stack_inputs(segments_x)?;
    let data_factor = match average {
        DataAverage::Joint => cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.train_cov(&x)?))?
            .l()
            .clone(),
        DataAverage::SegmentProduct => {
            let mut l = DMatrix::zeros(x.nrows(), x.nrows());
            let mut at = 0;
            for xs in segments_x {
                let f = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.train_cov(xs)?))?;
                l.view_mut((at, at), (xs.nrows(), xs.nrows())).copy_from(f.l());
                at += xs.nrows();
            }
            l
        }
        DataAverage::Composite => {
            let fz = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.gram(test_x)?))?;
            let b = fz.solve_lower(&model.kernel.cross(test_x, &x)?);
            let mut c = at_b(&b, &b);
            let mut at = 0;
            for xs in segments_x {
                let n = xs.nrows();
                c.view_mut((at, at), (n, n)).copy_from(&model.kernel.train_cov(xs)?);
                at += n;
            }
            cholesky_jittered(&PsdMatrix::symmetrized(c))?.l().clone()
        }
    };
    let fz = cholesky_jittered(run.state.prior().cov())?;
    let sampled = sampled_kld(&fz, run.state.current().cov(), &map.weights, &data_factor, n_draws, seed)?;
    Ok(CgpKldCheck {
        sampled,
        average,
        mi_full: report.mi_full,
        mi_segments_sum: report.mi_segments.iter().sum(),
    })
}
