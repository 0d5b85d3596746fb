//! Small dense solvers for the two optimization stages.
//!
//! [`qp_solve`] handles convex quadratic programs with inequality rows
//! `A x + b >= 0`. [`sqp_solve`] wraps it in a quasi-Newton loop for
//! black-box costs such as rollout FITAVE.

mod qp;
mod sqp;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::safety::ConstraintRow;

pub use qp::{qp_solve, safety_projection, QpOptions, QpProblem, SafetyProjection, DEFAULT_RELAX_PENALTY};
pub use sqp::{finite_difference_gradient, sqp_solve, SqpOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data must be finite")]
    NonFiniteData,
    #[error("Hessian is not symmetric (asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("cost is non-finite at every probed starting point")]
    NonFiniteCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Iteration budget spent, or no further progress was possible.
    MaxIter,
    Infeasible,
    /// The hard problem was infeasible; soft rows were relaxed by a penalized slack.
    Relaxed,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Relaxed => "relaxed",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    /// One multiplier per row (QP only; empty for SQP).
    pub multipliers: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    /// Cost evaluations (SQP only).
    pub evaluations: usize,
    pub wall_time: Duration,
}

/// Inequalities `a x + b >= 0` stacked as `A x + b >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraints {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearConstraints {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, OptimizerError> {
        if a.nrows() != b.len() {
            return Err(OptimizerError::Dimension(format!("{} rows but {} offsets", a.nrows(), b.len())));
        }
        if !(a.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite())) {
            return Err(OptimizerError::NonFiniteData);
        }
        Ok(Self { a, b })
    }

    pub fn empty(n: usize) -> Self {
        Self { a: DMatrix::zeros(0, n), b: DVector::zeros(0) }
    }

    pub fn from_rows(rows: &[ConstraintRow]) -> Self {
        let n = crate::dynamics::INPUT_DIM;
        let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].a[j]);
        let b = DVector::from_fn(rows.len(), |i, _| rows[i].b);
        Self { a, b }
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// `A x + b`.
    pub fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    /// Per-coordinate bounds implied by rows with a single nonzero entry.
    pub fn coordinate_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dim();
        let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(n, f64::INFINITY);
        for r in 0..self.len() {
            let row = self.a.row(r);
            let mut nz = row.iter().enumerate().filter(|(_, v)| **v != 0.0);
            if let (Some((j, &coef)), None) = (nz.next(), nz.next()) {
                let bound = -self.b[r] / coef;
                if coef > 0.0 {
                    lo[j] = lo[j].max(bound);
                } else {
                    hi[j] = hi[j].min(bound);
                }
            }
        }
        (lo, hi)
    }
}
