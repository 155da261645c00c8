//! Convex kernel used by the trajectory and resource-allocation steps.
//!
//! Programs are stated in a single canonical form ([`ConvexProgram`]): a
//! linear objective to *maximize*, with affine equalities/inequalities,
//! second-order cones and exponential cones. Two backends are provided:
//!
//! - [`InteriorPoint`], the production path, hands the program to the
//!   Clarabel primal-dual interior-point solver;
//! - [`DenseBarrier`], a small dense log-barrier method kept as an
//!   independent reference for cross-checking.
//!
//! Both are deterministic: assembly iterates constraints in insertion order
//! and neither backend uses randomisation.

mod barrier;
mod interior;
mod program;

pub use barrier::DenseBarrier;
pub use interior::InteriorPoint;
pub use program::{Constraint, ConvexProgram, LinExpr, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

/// Outcome of a solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Full variable assignment, indexed by [`Var::index`].
    pub solution: Vec<f64>,
    /// Objective value (of the maximisation) at `solution`.
    pub objective_value: f64,
    /// Largest normalised constraint violation at `solution`.
    pub primal_residual: f64,
    /// Backend-reported dual residual (barrier: duality-gap bound).
    pub dual_residual: f64,
    pub iterations: u32,
}

impl SolveReport {
    pub fn value(&self, v: Var) -> f64 {
        self.solution[v.index()]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// A solver backend.
pub trait Backend {
    fn solve(&self, prog: &ConvexProgram, tol: f64) -> Result<SolveReport, KernelError>;
}

/// Residual ceiling applied to any report claiming optimality.
pub const OPTIMAL_RESIDUAL_MAX: f64 = 1e-7;

/// Solve with the default (interior-point) backend.
pub fn solve(prog: &ConvexProgram, tol: f64) -> Result<SolveReport, KernelError> {
    InteriorPoint::default().solve(prog, tol)
}
