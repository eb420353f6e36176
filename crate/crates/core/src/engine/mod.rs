//! Log-barrier interior-point solver for smooth convex programs
//!
//! ```text
//!     minimize f(z)   subject to   A z = b,   G z >= h
//! ```
//!
//! with dense Newton steps. Equality rows are reduced to an independent
//! subset up front; the Newton system is solved through a Cholesky factor of
//! the barrier Hessian and a Schur complement on the equality block. A
//! phase-I program finds a strictly feasible start when none is supplied,
//! and its multipliers certify infeasibility.
//!
//! The same machinery solves linear programs ([`solve_lp`]).

mod audit;
mod barrier;
mod linalg;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub use audit::{audit_derivatives, spot_check_convexity, DerivativeAudit};
pub use barrier::solve;

/// Sparse linear form `a·z` paired with a right-hand side. As an equality it
/// means `a·z = rhs`, as an inequality `a·z >= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
    pub rhs: f64,
}

impl Constraint {
    /// Repeated indices are summed; the stored indices are distinct and
    /// ascending.
    pub fn new(terms: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> Self {
        let mut merged = std::collections::BTreeMap::new();
        for (j, v) in terms {
            *merged.entry(j).or_insert(0.0) += v;
        }
        let (idx, val) = merged.into_iter().filter(|&(_, v)| v != 0.0).unzip();
        Self { idx, val, rhs }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&j, &v)| v * z[j]).sum()
    }

    /// `a·z - rhs`.
    pub fn slack(&self, z: &[f64]) -> f64 {
        self.eval(z) - self.rhs
    }
}

/// Smooth convex objective with an open domain. The domain must contain the
/// strict interior of the inequality set, since phase I does not see it.
pub trait Objective {
    fn dim(&self) -> usize;

    fn in_domain(&self, z: &[f64]) -> bool {
        z.iter().all(|v| v.is_finite())
    }

    fn value(&self, z: &[f64]) -> f64;

    /// Writes `∇f(z)` into `grad`.
    fn gradient(&self, z: &[f64], grad: &mut [f64]);

    /// Adds `scale · ∇²f(z)` into `hess`.
    fn add_hessian(&self, z: &[f64], scale: f64, hess: &mut DMatrix<f64>);
}

/// `f(z) = c·z`.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    pub c: Vec<f64>,
}

impl Objective for LinearObjective {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.c.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, _z: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(&self.c);
    }

    fn add_hessian(&self, _z: &[f64], _scale: f64, _hess: &mut DMatrix<f64>) {}
}

pub struct ConvexProgram<'a> {
    pub objective: &'a dyn Objective,
    pub equalities: Vec<Constraint>,
    pub inequalities: Vec<Constraint>,
    /// Strictly feasible starting point, if known.
    pub start: Option<Vec<f64>>,
}

impl<'a> ConvexProgram<'a> {
    pub fn new(objective: &'a dyn Objective) -> Self {
        Self { objective, equalities: Vec::new(), inequalities: Vec::new(), start: None }
    }

    pub fn with_equalities(mut self, rows: Vec<Constraint>) -> Self {
        self.equalities = rows;
        self
    }

    pub fn with_inequalities(mut self, rows: Vec<Constraint>) -> Self {
        self.inequalities = rows;
        self
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Self {
        self.start = Some(start);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Target duality measure `m·μ` (and centering accuracy when `m = 0`).
    pub tol: f64,
    pub mu0: f64,
    pub mu_factor: f64,
    /// Cap on Newton steps across all stages, phase I included.
    pub max_newton: usize,
    pub armijo_beta: f64,
    pub armijo_c: f64,
    pub ridge: f64,
    /// Iterates beyond this norm are reported as an unbounded direction.
    pub divergence_norm: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            mu0: 1.0,
            mu_factor: 10.0,
            max_newton: 500,
            armijo_beta: 0.5,
            armijo_c: 1e-4,
            ridge: 1e-12,
            divergence_norm: 1e12,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(self, tol: f64) -> Self {
        Self { tol, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    /// The last barrier stage stalled at the rounding floor; the point is
    /// the previous centered iterate, with duality measure at most `1e-6`.
    ReducedAccuracy,
    MaxIter,
    NumericalFailure,
    Infeasible,
    Unbounded,
}

impl Status {
    /// A usable optimum: `Optimal` or `ReducedAccuracy`.
    pub fn solved(self) -> bool {
        matches!(self, Status::Optimal | Status::ReducedAccuracy)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub mu: f64,
    pub objective: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal_feasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics {
    pub status: Status,
    pub objective: f64,
    pub barrier_path: Vec<Stage>,
    pub newton_steps: usize,
    pub phase1_steps: usize,
    pub max_ridge: f64,
    pub kkt: KktResiduals,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    /// `ν` in `∇f + Aᵀν - Gᵀλ = 0`, one per equality row as supplied.
    pub eq_multipliers: Vec<f64>,
    /// `λ ≥ 0`, one per inequality row.
    pub ineq_multipliers: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, Error)]
pub enum EngineError {
    #[error("no strictly feasible point (phase-I optimum {phase1_value:.3e})")]
    Infeasible {
        phase1_value: f64,
        /// Nonnegative weights on the inequality rows, summing to one, whose
        /// combination contradicts the constraint system.
        certificate: Vec<f64>,
    },
    #[error("equality constraints are inconsistent (residual {0:.3e})")]
    InconsistentEqualities(f64),
    #[error("objective unbounded below along the returned direction")]
    Unbounded { ray: Vec<f64> },
    #[error("Newton iteration cap reached ({steps} steps)")]
    MaxIterations { steps: usize, x: Vec<f64> },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("malformed program: {0}")]
    Malformed(String),
}

impl EngineError {
    pub fn status(&self) -> Status {
        match self {
            EngineError::Infeasible { .. } | EngineError::InconsistentEqualities(_) => Status::Infeasible,
            EngineError::Unbounded { .. } => Status::Unbounded,
            EngineError::MaxIterations { .. } => Status::MaxIter,
            EngineError::NumericalFailure(_) | EngineError::Malformed(_) => Status::NumericalFailure,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    /// Farkas weights when infeasible, a recession ray when unbounded.
    pub certificate: Vec<f64>,
    pub diagnostics: Option<SolveDiagnostics>,
}

/// Minimizes `c·z` over `{A z = b, G z >= h}`. Infeasibility and
/// unboundedness are reported through the status, not as errors.
pub fn solve_lp(
    c: &[f64],
    equalities: Vec<Constraint>,
    inequalities: Vec<Constraint>,
    start: Option<Vec<f64>>,
    options: &SolverOptions,
) -> Result<LpOutcome, EngineError> {
    let objective = LinearObjective { c: c.to_vec() };
    let mut program = ConvexProgram::new(&objective).with_equalities(equalities).with_inequalities(inequalities);
    program.start = start;
    match solve(&program, options) {
        Ok(sol) => Ok(LpOutcome {
            status: sol.diagnostics.status,
            objective: sol.diagnostics.objective,
            x: sol.x,
            eq_duals: sol.eq_multipliers,
            ineq_duals: sol.ineq_multipliers,
            certificate: Vec::new(),
            diagnostics: Some(sol.diagnostics),
        }),
        Err(EngineError::Infeasible { certificate, .. }) => Ok(LpOutcome {
            status: Status::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            eq_duals: Vec::new(),
            ineq_duals: Vec::new(),
            certificate,
            diagnostics: None,
        }),
        Err(EngineError::InconsistentEqualities(_)) => Ok(LpOutcome {
            status: Status::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            eq_duals: Vec::new(),
            ineq_duals: Vec::new(),
            certificate: Vec::new(),
            diagnostics: None,
        }),
        Err(EngineError::Unbounded { ray }) => Ok(LpOutcome {
            status: Status::Unbounded,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
            eq_duals: Vec::new(),
            ineq_duals: Vec::new(),
            certificate: ray,
            diagnostics: None,
        }),
        Err(e) => Err(e),
    }
}
