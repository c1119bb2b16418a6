//! Damped Newton minimization with Armijo backtracking.
//!
//! The objective callback returns `None` outside its domain (for barrier
//! functions, whenever a log argument would be non-positive). Such trial
//! points are treated like insufficient decrease, so the iterate never
//! leaves the domain.

use nalgebra::{DMatrix, DVector};

use super::{regularize_hessian, SolveDiagnostics, SolveStatus};
use crate::error::{Error, Result};

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Value, gradient and Hessian at a point of the domain.
pub struct SmoothEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Stop once `‖∇f‖∞ ≤ grad_tol`.
    pub grad_tol: f64,
    /// Stop once half the squared Newton decrement drops below this.
    pub decrement_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            decrement_tol: 1e-14,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub diagnostics: SolveDiagnostics,
}

pub fn newton_minimize<F>(mut f: F, x0: DVector<f64>, opts: &NewtonOptions) -> Result<NewtonResult>
where
    F: FnMut(&DVector<f64>) -> Option<SmoothEval>,
{
    let mut x = x0;
    let mut cur = f(&x).ok_or_else(|| Error::Contract("Newton start point is outside the domain".into()))?;
    if !cur.value.is_finite() {
        return Err(Error::Contract("objective is not finite at the start point".into()));
    }
    let mut last_step = 0.0;
    for iter in 0..opts.max_iter {
        let gnorm = cur.gradient.amax();
        if gnorm <= opts.grad_tol {
            return Ok(done(x, cur, iter, last_step, SolveStatus::Converged));
        }
        let (h, _) = regularize_hessian(&cur.hessian, 1e-300);
        let Some(chol) = h.cholesky() else {
            return Ok(done(x, cur, iter, last_step, SolveStatus::NumericalFailure));
        };
        let dir = chol.solve(&(-&cur.gradient));
        let slope = cur.gradient.dot(&dir);
        if -slope / 2.0 <= opts.decrement_tol {
            return Ok(done(x, cur, iter, last_step, SolveStatus::Converged));
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &dir * alpha;
            if let Some(e) = f(&trial) {
                if e.value.is_finite() && e.value <= cur.value + ARMIJO_C * alpha * slope {
                    accepted = Some((trial, e));
                    break;
                }
            }
            alpha *= BACKTRACK;
        }
        match accepted {
            Some((xn, e)) => {
                last_step = (&xn - &x).norm();
                x = xn;
                cur = e;
            }
            None => {
                // No decrease is representable; the point is as good as the
                // arithmetic allows when the decrement is already tiny.
                let status = if -slope < 1e-10 * (1.0 + cur.value.abs()) {
                    SolveStatus::Converged
                } else {
                    SolveStatus::NumericalFailure
                };
                return Ok(done(x, cur, iter, last_step, status));
            }
        }
    }
    let status = if cur.gradient.amax() <= opts.grad_tol {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIter
    };
    Ok(done(x, cur, opts.max_iter, last_step, status))
}

fn done(x: DVector<f64>, e: SmoothEval, iterations: usize, step: f64, status: SolveStatus) -> NewtonResult {
    NewtonResult {
        x,
        value: e.value,
        diagnostics: SolveDiagnostics {
            iterations,
            step_norm: step,
            kkt_residual: e.gradient.amax(),
            status,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_in_one_iteration() {
        let b = DVector::from_vec(vec![3.0, -1.0]);
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = newton_minimize(
            |x| {
                let d = x - &b;
                Some(SmoothEval {
                    value: 0.5 * d.dot(&(&h * &d)),
                    gradient: &h * &d,
                    hessian: h.clone(),
                })
            },
            DVector::zeros(2),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(r.diagnostics.status, SolveStatus::Converged);
        assert_eq!(r.diagnostics.iterations, 1);
        assert!((r.x - b).amax() < 1e-12);
    }

    #[test]
    fn one_dimensional_barrier() {
        let t = 10.0;
        let r = newton_minimize(
            |x| {
                let s = 1.0 - x[0];
                if s <= 0.0 {
                    return None;
                }
                Some(SmoothEval {
                    value: -x[0] - s.ln() / t,
                    gradient: DVector::from_element(1, -1.0 + 1.0 / (t * s)),
                    hessian: DMatrix::from_element(1, 1, 1.0 / (t * s * s)),
                })
            },
            DVector::from_element(1, -5.0),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((r.x[0] - 0.9).abs() < 1e-10);
        assert_eq!(r.diagnostics.status, SolveStatus::Converged);
    }

    #[test]
    fn rosenbrock() {
        let r = newton_minimize(
            |x| {
                let (a, b) = (x[0], x[1]);
                let value = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                Some(SmoothEval {
                    value,
                    gradient: DVector::from_vec(vec![
                        -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                        200.0 * (b - a * a),
                    ]),
                    hessian: DMatrix::from_row_slice(
                        2,
                        2,
                        &[2.0 - 400.0 * b + 1200.0 * a * a, -400.0 * a, -400.0 * a, 200.0],
                    ),
                })
            },
            DVector::from_vec(vec![-1.2, 1.0]),
            &NewtonOptions { max_iter: 500, ..NewtonOptions::default() },
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8, "{:?}", r.x);
    }

    #[test]
    fn accepted_values_never_increase() {
        // One iteration per call, so every accepted iterate is observed.
        let mut trace: Vec<(DVector<f64>, f64)> = Vec::new();
        let f = |x: &DVector<f64>| {
            let v = x[0].powi(4) + x[1].powi(2) * (1.0 + x[0].powi(2));
            Some(SmoothEval {
                value: v,
                gradient: DVector::from_vec(vec![4.0 * x[0].powi(3) + 2.0 * x[0] * x[1].powi(2), 2.0 * x[1] * (1.0 + x[0].powi(2))]),
                hessian: DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        12.0 * x[0].powi(2) + 2.0 * x[1].powi(2),
                        4.0 * x[0] * x[1],
                        4.0 * x[0] * x[1],
                        2.0 * (1.0 + x[0].powi(2)),
                    ],
                ),
            })
        };
        let mut x = DVector::from_vec(vec![2.0, -3.0]);
        for _ in 0..20 {
            let r = newton_minimize(f, x.clone(), &NewtonOptions { max_iter: 1, ..NewtonOptions::default() }).unwrap();
            trace.push((r.x.clone(), r.value));
            x = r.x;
        }
        for w in trace.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn start_outside_domain_is_rejected() {
        let r = newton_minimize(|_| None, DVector::zeros(1), &NewtonOptions::default());
        assert!(r.is_err());
    }
}
