//! Sparse GP baseline: FITC prediction with fixed inducing inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{CgpError, Result};
use crate::gp::{DataSegment, GaussianBelief, PredictorMap};
use crate::model::GpModel;
use crate::psd::{at_b, cholesky_jittered, PsdFactor, PsdMatrix};

const MIN_SEPARATION: f64 = 1e-9;

/// Distinct inducing input locations, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingSet {
    locations: DMatrix<f64>,
}

impl InducingSet {
    pub fn new(locations: DMatrix<f64>) -> Result<Self> {
        let n = locations.nrows();
        if n == 0 {
            return Err(CgpError::InvalidInput("inducing set is empty".into()));
        }
        if locations.iter().any(|v| !v.is_finite()) {
            return Err(CgpError::InvalidInput("non-finite inducing location".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (locations.row(i) - locations.row(j)).norm() <= MIN_SEPARATION {
                    return Err(CgpError::DegenerateInducing(j, i));
                }
            }
        }
        Ok(InducingSet { locations })
    }

    pub fn locations(&self) -> &DMatrix<f64> {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.nrows() == 0
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|i| if i == count - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Evenly spaced locations spanning each range, endpoints included.
///
/// One range gives a line; two give the grid whose side counts are the
/// factor pair of `count` closest to square (rows along the first axis).
/// A single point sits at the midpoint.
pub fn place_uniform(ranges: &[(f64, f64)], count: usize) -> Result<InducingSet> {
    if count == 0 {
        return Err(CgpError::InvalidRange("inducing count must be at least 1".into()));
    }
    for &(lo, hi) in ranges {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CgpError::InvalidRange(format!("[{lo}, {hi}]")));
        }
    }
    match ranges {
        [(lo, hi)] => InducingSet::new(DMatrix::from_column_slice(count, 1, &linspace(*lo, *hi, count))),
        [(lo1, hi1), (lo2, hi2)] => {
            let mut n1 = (count as f64).sqrt().floor() as usize;
            while count % n1 != 0 {
                n1 -= 1;
            }
            let n2 = count / n1;
            let (a, b) = (linspace(*lo1, *hi1, n1), linspace(*lo2, *hi2, n2));
            InducingSet::new(DMatrix::from_fn(count, 2, |i, j| {
                if j == 0 {
                    a[i / n2]
                } else {
                    b[i % n2]
                }
            }))
        }
        _ => Err(CgpError::InvalidRange(format!(
            "expected 1 or 2 input ranges, got {}",
            ranges.len()
        ))),
    }
}

/// Pieces shared by the posterior and the predictor map.
struct FitcSystem {
    /// `L_u⁻¹ K_{u*}`
    w_star: DMatrix<f64>,
    /// `A⁻¹ V Λ⁻¹`, with `V = L_u⁻¹ K_{uf}` and `A = I + V Λ⁻¹ Vᵀ`
    gain: DMatrix<f64>,
    a_chol: PsdFactor,
}

fn system(model: &GpModel, train_x: &DMatrix<f64>, inducing: &InducingSet, test_x: &DMatrix<f64>) -> Result<FitcSystem> {
    model.check_inputs(train_x)?;
    model.check_inputs(test_x)?;
    model.check_inputs(inducing.locations())?;
    let u = inducing.locations();
    let lu = cholesky_jittered(&PsdMatrix::symmetrized(model.kernel.gram(u)?))?;
    let v = lu.solve_lower(&model.kernel.cross(u, train_x)?);
    let noise = model.kernel.noise_var();
    let kii = model.kernel.variance();
    let lambda = DVector::from_fn(train_x.nrows(), |i, _| {
        (kii - v.column(i).norm_squared()).max(0.0) + noise
    });
    let mut v_scaled = v.clone();
    for (mut col, l) in v_scaled.column_iter_mut().zip(lambda.iter()) {
        col /= *l;
    }
    let m = u.nrows();
    let a = DMatrix::identity(m, m) + &v_scaled * v.transpose();
    let a_chol = cholesky_jittered(&PsdMatrix::symmetrized(a))?;
    let gain = a_chol.solve(&v_scaled);
    let w_star = lu.solve_lower(&model.kernel.cross(u, test_x)?);
    Ok(FitcSystem { w_star, gain, a_chol })
}

/// FITC predictive mean and covariance of the latent values at `test_x`.
///
/// The correction `diag(K_ff − Q_ff)` joins the noise on the training
/// diagonal; the test block keeps the exact conditional `K_** − Q_**`.
pub fn fitc_posterior(
    model: &GpModel,
    train: &DataSegment,
    inducing: &InducingSet,
    test_x: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let sys = system(model, train.x(), inducing, test_x)?;
    let resid = train.y() - model.mean.eval(train.x());
    let mean = model.mean.eval(test_x) + sys.w_star.tr_mul(&(&sys.gain * resid));
    let h = sys.a_chol.solve_lower(&sys.w_star);
    let cov = model.kernel.gram(test_x)? - at_b(&sys.w_star, &sys.w_star) + at_b(&h, &h);
    GaussianBelief::new(mean, PsdMatrix::symmetrized(cov))
}

/// Affine map from training observations to the FITC predictive mean.
pub fn fitc_predictor_map(
    model: &GpModel,
    train_x: &DMatrix<f64>,
    inducing: &InducingSet,
    test_x: &DMatrix<f64>,
) -> Result<PredictorMap> {
    let sys = system(model, train_x, inducing, test_x)?;
    let weights = at_b(&sys.w_star, &sys.gain);
    let offset = model.mean.eval(test_x) - &weights * model.mean.eval(train_x);
    Ok(PredictorMap { offset, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::gp_posterior;
    use crate::kernel::{inputs_1d, KernelSpec};

    fn model() -> GpModel {
        GpModel::zero_mean(KernelSpec::squared_exponential(1.0, 2.0, 0.1).unwrap())
    }

    #[test]
    fn uniform_placement() {
        let s = place_uniform(&[(0.0, 10.0)], 2).unwrap();
        assert_eq!(s.locations().as_slice(), &[0.0, 10.0]);
        let s = place_uniform(&[(0.0, 128.0)], 5).unwrap();
        assert_eq!(s.locations().as_slice(), &[0.0, 32.0, 64.0, 96.0, 128.0]);
        let s = place_uniform(&[(0.0, 4.0)], 1).unwrap();
        assert_eq!(s.locations().as_slice(), &[2.0]);
    }

    #[test]
    fn grid_placement() {
        let s = place_uniform(&[(0.0, 1.0), (0.0, 1.0)], 9).unwrap();
        assert_eq!(s.len(), 9);
        let xs: Vec<f64> = s.locations().column(0).iter().copied().collect();
        assert_eq!(xs, vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0]);
        let g = place_uniform(&[(0.0, 1.0), (0.0, 1.0)], 128).unwrap();
        let distinct = |c: usize| {
            let mut v: Vec<f64> = g.locations().column(c).iter().copied().collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.len()
        };
        assert_eq!((distinct(0), distinct(1)), (8, 16));
    }

    #[test]
    fn placement_errors() {
        assert!(matches!(place_uniform(&[(0.0, 1.0)], 0), Err(CgpError::InvalidRange(_))));
        assert!(matches!(place_uniform(&[(1.0, 1.0)], 3), Err(CgpError::InvalidRange(_))));
        assert!(matches!(place_uniform(&[(2.0, 1.0)], 3), Err(CgpError::InvalidRange(_))));
        assert!(matches!(place_uniform(&[], 3), Err(CgpError::InvalidRange(_))));
    }

    #[test]
    fn duplicate_inducing_rejected() {
        assert!(matches!(
            InducingSet::new(inputs_1d(&[0.0, 1.0, 1.0])),
            Err(CgpError::DegenerateInducing(1, 2))
        ));
    }

    #[test]
    fn single_point_matches_exact() {
        let m = model();
        let seg = DataSegment::new(inputs_1d(&[1.0]), DVector::from_element(1, 0.7)).unwrap();
        let tx = inputs_1d(&[0.0, 1.5]);
        let f = fitc_posterior(&m, &seg, &InducingSet::new(inputs_1d(&[1.0])).unwrap(), &tx).unwrap();
        let e = gp_posterior(&m, &[seg], &tx).unwrap();
        assert!((f.mean() - e.mean()).amax() < 1e-12);
        assert!((f.cov().as_matrix() - e.cov().as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn predictor_map_matches_mean() {
        let m = GpModel::new(
            KernelSpec::squared_exponential(1.0, 2.0, 0.1).unwrap(),
            crate::model::MeanSpec::Linear { a: 0.3, b: -1.0 },
        );
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let y = DVector::from_fn(12, |i, _| (i as f64 * 0.7).sin());
        let seg = DataSegment::new(inputs_1d(&x), y.clone()).unwrap();
        let u = place_uniform(&[(0.0, 11.0)], 4).unwrap();
        let tx = inputs_1d(&[2.5, 13.0]);
        let f = fitc_posterior(&m, &seg, &u, &tx).unwrap();
        let map = fitc_predictor_map(&m, seg.x(), &u, &tx).unwrap();
        assert!((map.apply(&y) - f.mean()).amax() < 1e-12);
    }
}
