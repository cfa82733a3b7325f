//! Primal-dual interior-point solver for bounded nonlinear programs.
//!
//! Problems are described through the [`NlpProblem`] trait, which follows the
//! usual sparse-callback layout: an objective with its gradient, a stacked
//! constraint vector (equalities first, then inequalities `g(x) <= 0`) with a
//! sparse Jacobian, and the sparse lower triangle of the Hessian of the
//! Lagrangian
//!
//! ```txt
//!     L(x, λ) = σ f(x) + Σ λ_i c_i(x)
//! ```
//!
//! where `σ` is the objective factor passed by the solver.
//!
//! The solver ([`solve`]) is a barrier method with damped Newton steps on the
//! perturbed KKT conditions, a fraction-to-the-boundary rule, a filter line
//! search on barrier objective and constraint violation with a second-order
//! correction, and inertia-correcting regularization of the KKT
//! factorization. When the first attempt does not
//! reach a feasible point, one elastic retry is made before the problem is
//! declared infeasible.

mod derivcheck;
mod elastic;
mod ipm;
pub mod ldl;

pub use derivcheck::{check_derivatives, DerivativeReport};
pub use ipm::{solve, solve_in, solve_with, Workspace};

use thiserror::Error;

/// Optimization direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sense {
    #[default]
    Minimize,
    Maximize,
}

/// A twice-differentiable nonlinear program with simple variable bounds.
///
/// Constraint rows are stacked: rows `0..num_eq()` are equalities `c(x) = 0`,
/// rows `num_eq()..num_eq()+num_ineq()` are inequalities `g(x) <= 0`. The
/// sparsity structures must not change between calls.
pub trait NlpProblem: Sync {
    fn num_vars(&self) -> usize;

    /// Lower and upper variable bounds; infinite values mean unbounded.
    fn bounds(&self, lo: &mut [f64], hi: &mut [f64]);

    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    /// Constant multiplier applied to the objective inside the solver.
    fn objective_scaling(&self) -> f64 {
        1.0
    }

    fn objective(&self, x: &[f64]) -> f64;

    fn objective_grad(&self, x: &[f64], grad: &mut [f64]);

    fn num_eq(&self) -> usize;

    fn num_ineq(&self) -> usize {
        0
    }

    /// Evaluates all constraint rows into `c` (length `num_eq() + num_ineq()`).
    fn constraints(&self, x: &[f64], c: &mut [f64]);

    /// `(row, col)` pairs of the constraint Jacobian.
    fn jacobian_structure(&self) -> Vec<(usize, usize)>;

    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]);

    /// `(row, col)` pairs with `row >= col` of the Lagrangian Hessian.
    fn hessian_structure(&self) -> Vec<(usize, usize)>;

    /// Values of `obj_factor * ∇²f(x) + Σ lambda_i ∇²c_i(x)` on the structure.
    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], vals: &mut [f64]);

    /// Optional `(constraint row, variable)` pairing used to form 2x2 pivots
    /// in the KKT factorization. Every constraint row should appear once and
    /// be paired with a variable it depends on. When `None`, a pairing is
    /// computed from the Jacobian at the starting point.
    fn pivot_pairs(&self) -> Option<Vec<(usize, usize)>> {
        None
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    MaxIterations,
    Infeasible,
}

/// One line of the optional iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Barrier objective at the accepted iterate (the filter's merit value).
    pub merit: f64,
    pub mu: f64,
    pub step: f64,
    pub kkt_error: f64,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    /// Objective value in the problem's own sense (not negated, not scaled).
    pub objective: f64,
    /// Final optimality error: max of scaled stationarity, primal
    /// infeasibility and complementarity.
    pub kkt_residual: f64,
    /// Largest absolute constraint violation at `x`.
    pub constraint_violation: f64,
    pub status: Status,
    pub iterations: usize,
    /// Constraint multipliers (sign convention of `L = σ f + λᵀ c`, in the
    /// solver's internal minimization scaling).
    pub lambda: Vec<f64>,
    pub elastic_used: bool,
    pub log: Vec<IterationLog>,
}

impl NlpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

#[derive(Debug, Clone)]
pub struct NlpOptions {
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    /// Linear factor of the monotone barrier update.
    pub barrier_reduction: f64,
    /// Relative distance used to push the starting point off its bounds.
    pub bound_push: f64,
    /// Make one elastic retry before declaring infeasibility.
    pub elastic_retry: bool,
    /// Penalty weight on elastic slacks (in scaled objective units).
    pub elastic_penalty: f64,
    /// Record an [`IterationLog`] entry per iteration.
    pub record_log: bool,
    /// Wall-clock cap; the best iterate so far is returned when exceeded.
    pub time_limit: Option<std::time::Duration>,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            kkt_tol: 1e-6,
            max_iter: 300,
            mu_init: 0.1,
            barrier_reduction: 0.2,
            bound_push: 1e-2,
            elastic_retry: true,
            elastic_penalty: 1e4,
            record_log: false,
            time_limit: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NlpError {
    #[error("starting point has length {got}, problem has {expected} variables")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable {index} has empty bounds [{lo}, {hi}]")]
    EmptyBounds { index: usize, lo: f64, hi: f64 },
    #[error("non-finite value returned by problem callback `{0}`")]
    NonFinite(&'static str),
    #[error("{0}")]
    BadStructure(String),
}
