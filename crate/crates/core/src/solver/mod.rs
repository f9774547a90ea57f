//! SQP with a convex QP subsolver, Newton fast path and per-element
//! Hessian projection.

mod psd;
mod qp;
mod sqp;

pub use psd::project_psd;
pub use qp::{kkt_residuals, solve_qp, KktResiduals, QpOptions, QpProblem, QpSolution};
pub use sqp::{
    merit_line_search, sqp_minimize, Evaluation, IterationRecord, Objective, SolveResult,
    SolverOptions, StepPolicy, StepSolver,
};
