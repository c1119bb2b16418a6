//! Dense numerical kernels shared by the optimizers.

mod lcqp;
mod newton;

pub use lcqp::{solve_lcqp, LcqpSolution, QuadraticSubproblem};
pub use newton::{newton_minimize, NewtonOptions, NewtonResult, SmoothEval};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub step_norm: f64,
    pub kkt_residual: f64,
    pub status: SolveStatus,
}

/// Shifts a symmetric matrix by `(|λ_min| + ε)·I` when its smallest
/// eigenvalue is below `ε`, with `ε = max(1e−8·‖H‖_F, floor)`.
///
/// Returns the regularized matrix and the applied shift.
pub fn regularize_hessian(h: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, f64) {
    let sym = (h + h.transpose()) * 0.5;
    let eps = (1e-8 * sym.norm()).max(floor);
    let lmin = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    if lmin >= eps {
        return (sym, 0.0);
    }
    let shift = if lmin < 0.0 { -lmin + eps } else { eps - lmin };
    let n = sym.nrows();
    (sym + DMatrix::identity(n, n) * shift, shift)
}
