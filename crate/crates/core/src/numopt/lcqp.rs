//! Dense linearly constrained QP by active-set enumeration.
//!
//! `min ½dᵀHd + gᵀd  s.t.  A_e d + c_e = 0,  A_i d + c_i ≤ 0`
//!
//! with a positive definite `H` and only a handful of inequality rows. Every
//! subset of the inequalities is tried as the active set; each KKT system is
//! solved directly and the best primal/dual feasible candidate wins.

use nalgebra::{DMatrix, DVector};

use super::{SolveDiagnostics, SolveStatus};
use crate::error::{Error, Result};

/// Most inequality rows accepted (2^m systems are solved).
const MAX_INEQUALITIES: usize = 12;

#[derive(Debug, Clone)]
pub struct QuadraticSubproblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_jacobian: DMatrix<f64>,
    pub eq_residuals: DVector<f64>,
    pub ineq_jacobian: DMatrix<f64>,
    pub ineq_residuals: DVector<f64>,
}

impl QuadraticSubproblem {
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let d = gradient.len();
        Self {
            hessian,
            gradient,
            eq_jacobian: DMatrix::zeros(0, d),
            eq_residuals: DVector::zeros(0),
            ineq_jacobian: DMatrix::zeros(0, d),
            ineq_residuals: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        let ok = self.hessian.nrows() == d
            && self.hessian.ncols() == d
            && self.eq_jacobian.ncols() == d
            && self.eq_jacobian.nrows() == self.eq_residuals.len()
            && self.ineq_jacobian.ncols() == d
            && self.ineq_jacobian.nrows() == self.ineq_residuals.len();
        if !ok {
            return Err(Error::Contract("inconsistent QP dimensions".into()));
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-10 * self.hessian.amax().max(1.0) {
            return Err(Error::Contract(format!("QP hessian is not symmetric (max asymmetry {asym:.3e})")));
        }
        if self.ineq_residuals.len() > MAX_INEQUALITIES {
            return Err(Error::Contract(format!(
                "at most {MAX_INEQUALITIES} inequality rows are supported"
            )));
        }
        Ok(())
    }

    pub fn objective(&self, d: &DVector<f64>) -> f64 {
        0.5 * d.dot(&(&self.hessian * d)) + self.gradient.dot(d)
    }
}

#[derive(Debug, Clone)]
pub struct LcqpSolution {
    pub step: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub diagnostics: SolveDiagnostics,
}

struct Candidate {
    step: DVector<f64>,
    eq: DVector<f64>,
    ineq: DVector<f64>,
    objective: f64,
}

fn solve_active(qp: &QuadraticSubproblem, active: &[usize]) -> Option<Candidate> {
    let d = qp.dim();
    let me = qp.eq_residuals.len();
    let rows = me + active.len();
    let n = d + rows;
    let mut kkt = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    kkt.view_mut((0, 0), (d, d)).copy_from(&qp.hessian);
    rhs.rows_mut(0, d).copy_from(&(-&qp.gradient));
    for r in 0..rows {
        let (row, c) = if r < me {
            (qp.eq_jacobian.row(r), qp.eq_residuals[r])
        } else {
            let i = active[r - me];
            (qp.ineq_jacobian.row(i), qp.ineq_residuals[i])
        };
        for j in 0..d {
            kkt[(d + r, j)] = row[j];
            kkt[(j, d + r)] = row[j];
        }
        rhs[d + r] = -c;
    }
    let sol = kkt.clone().lu().solve(&rhs).or_else(|| {
        // Dependent active rows: fall back to the least-squares solution.
        kkt.svd(true, true).solve(&rhs, 1e-14).ok()
    })?;
    if sol.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let step = sol.rows(0, d).into_owned();
    let eq = sol.rows(d, me).into_owned();
    let mut ineq = DVector::zeros(qp.ineq_residuals.len());
    for (k, &i) in active.iter().enumerate() {
        ineq[i] = sol[d + me + k];
    }
    let objective = qp.objective(&step);
    Some(Candidate { step, eq, ineq, objective })
}

fn kkt_residual(qp: &QuadraticSubproblem, c: &Candidate) -> f64 {
    let stat = &qp.hessian * &c.step
        + &qp.gradient
        + qp.eq_jacobian.transpose() * &c.eq
        + qp.ineq_jacobian.transpose() * &c.ineq;
    let eq = &qp.eq_jacobian * &c.step + &qp.eq_residuals;
    let ineq = &qp.ineq_jacobian * &c.step + &qp.ineq_residuals;
    let mut r = stat.amax().max(eq.amax());
    for i in 0..ineq.len() {
        r = r.max(ineq[i].max(0.0)).max((-c.ineq[i]).max(0.0)).max((c.ineq[i] * ineq[i]).abs());
    }
    r
}

/// Solves the QP to KKT accuracy `tol` (scaled by the problem magnitude).
pub fn solve_lcqp(qp: &QuadraticSubproblem, tol: f64) -> Result<LcqpSolution> {
    qp.validate()?;
    let mi = qp.ineq_residuals.len();
    let scale = 1.0
        + qp.gradient.amax()
        + qp.eq_residuals.amax()
        + qp.ineq_residuals.amax()
        + qp.hessian.amax();
    let feas_tol = tol * scale;
    let mut best: Option<Candidate> = None;
    let mut tried = 0;
    for mask in 0u32..(1u32 << mi) {
        let active: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        tried += 1;
        let Some(c) = solve_active(qp, &active) else { continue };
        let lin = &qp.ineq_jacobian * &c.step + &qp.ineq_residuals;
        let primal_ok = (0..mi).all(|i| lin[i] <= feas_tol);
        let eq_ok = (&qp.eq_jacobian * &c.step + &qp.eq_residuals).amax() <= feas_tol;
        let dual_ok = active.iter().all(|&i| c.ineq[i] >= -feas_tol);
        if !(primal_ok && eq_ok && dual_ok) {
            continue;
        }
        if best.as_ref().is_none_or(|b| c.objective < b.objective) {
            best = Some(c);
        }
    }
    match best {
        Some(mut c) => {
            for v in c.ineq.iter_mut() {
                *v = v.max(0.0);
            }
            let res = kkt_residual(qp, &c);
            let status = if res <= feas_tol.max(1e-9 * scale) {
                SolveStatus::Converged
            } else {
                SolveStatus::NumericalFailure
            };
            Ok(LcqpSolution {
                diagnostics: SolveDiagnostics {
                    iterations: tried,
                    step_norm: c.step.norm(),
                    kkt_residual: res,
                    status,
                },
                step: c.step,
                eq_multipliers: c.eq,
                ineq_multipliers: c.ineq,
            })
        }
        None => Ok(LcqpSolution {
            step: DVector::zeros(qp.dim()),
            eq_multipliers: DVector::zeros(qp.eq_residuals.len()),
            ineq_multipliers: DVector::zeros(mi),
            diagnostics: SolveDiagnostics {
                iterations: tried,
                step_norm: 0.0,
                kkt_residual: f64::INFINITY,
                status: SolveStatus::Infeasible,
            },
        }),
    }
}
