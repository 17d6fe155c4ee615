//! Quasi-Newton minimization (BFGS with Armijo backtracking).

use nalgebra::{DMatrix, DVector};

use crate::error::{CgpError, Result};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once `‖g‖ ≤ grad_tol · (1 + |f|)`.
    pub grad_tol: f64,
    /// Largest coordinate change of a single step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            grad_tol: 1e-6,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    /// Iteration budget spent; the best iterate is returned.
    MaxIterations,
    /// No step along the search direction decreased the objective.
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Minimizes `f`, which returns the value and gradient or `None` where undefined.
///
/// Undefined or non-finite trial points are treated as `+∞` by the line search.
/// Fails only if the starting point itself is undefined.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, opts: &BfgsOptions) -> Result<Minimum>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let mut eval = |x: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        f(x).filter(|(v, g)| v.is_finite() && g.iter().all(|gi| gi.is_finite()))
    };
    let n = x0.len();
    let (mut fx, mut g) = eval(&x0).ok_or_else(|| {
        CgpError::OptimizerDiverged("objective is not finite at the initial point".into())
    })?;
    let mut x = x0;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < opts.max_iter {
        if g.norm() <= opts.grad_tol * (1.0 + fx.abs()) {
            termination = Termination::Converged;
            break;
        }
        let mut p = -(&h * &g);
        if p.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            fresh = true;
            p = -g.clone();
        }
        let biggest = p.amax();
        if biggest > opts.max_step {
            p *= opts.max_step / biggest;
        }
        let slope = p.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &p * step;
            if let Some((fnew, gnew)) = eval(&xn) {
                if fnew <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if fresh {
                termination = Termination::LineSearchStalled;
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        iterations += 1;
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, expanded
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        x = xn;
        fx = fnew;
        g = gnew;
    }
    if termination == Termination::MaxIterations
        && g.norm() <= opts.grad_tol * (1.0 + fx.abs())
    {
        termination = Termination::Converged;
    }
    Ok(Minimum {
        x,
        value: fx,
        grad: g,
        iterations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            Some((v, g))
        };
        let m = minimize(f, DVector::from_vec(vec![-1.2, 1.0]), &BfgsOptions::default()).unwrap();
        assert_eq!(m.termination, Termination::Converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn undefined_start_is_divergence() {
        let f = |_: &DVector<f64>| Some((f64::NAN, DVector::zeros(1)));
        assert!(matches!(
            minimize(f, DVector::zeros(1), &BfgsOptions::default()),
            Err(CgpError::OptimizerDiverged(_))
        ));
    }

    #[test]
    fn undefined_region_is_avoided() {
        // log-barrier: undefined for x <= 0
        let f = |x: &DVector<f64>| {
            (x[0] > 0.0).then(|| (x[0] - x[0].ln(), DVector::from_element(1, 1.0 - 1.0 / x[0])))
        };
        let m = minimize(f, DVector::from_element(1, 5.0), &BfgsOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }
}
