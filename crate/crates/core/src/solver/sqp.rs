//! Sequential quadratic programming over a smooth objective with pins and
//! half-space contact.

use nalgebra::DVector;
use nalgebra_sparse::CscMatrix;
use serde::Serialize;

use super::qp::{factor_spd, solve_qp, KktResiduals, QpOptions, QpProblem};
use crate::constraints::{linearize, Constraints};
use crate::error::{Result, SimError};

/// Objective evaluation at an iterate.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Symmetric positive semidefinite, full storage.
    pub hessian: CscMatrix<f64>,
}

/// Smooth objective minimized by [`sqp_minimize`].
pub trait Objective {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation>;

    /// Objective value used by the line search. Terms that are frozen per
    /// iteration (follower forces) are evaluated at `anchor`.
    /// [`SimError::Inversion`] marks `x` as outside the domain.
    fn value(&self, x: &DVector<f64>, anchor: &DVector<f64>) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "alpha")]
pub enum StepPolicy {
    LineSearch,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Stopping tolerance on `|dx|_inf` (m).
    pub tolerance: f64,
    pub max_iterations: usize,
    pub step: StepPolicy,
    /// Eigenvalue floor for per-element Hessian projection (N/m).
    pub psd_floor: f64,
    pub qp: QpOptions,
    /// Accepted steps may penetrate at most this far (m).
    pub penetration_tolerance: f64,
    pub max_halvings: usize,
    /// Route unconstrained problems through the QP instead of Newton.
    pub force_qp: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-6,
            max_iterations: 100,
            step: StepPolicy::LineSearch,
            psd_floor: 0.0,
            qp: QpOptions::default(),
            penetration_tolerance: 1e-6,
            max_halvings: 20,
            force_qp: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(SimError::invalid("solver tolerance", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(SimError::invalid("max_iterations", "must be at least 1"));
        }
        if let StepPolicy::Fixed(a) = self.step {
            if !(a > 0.0 && a <= 1.0) {
                return Err(SimError::invalid("step size", "must lie in (0, 1]"));
            }
        }
        if self.psd_floor < 0.0 {
            return Err(SimError::invalid("psd_floor", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSolver {
    Newton,
    Qp,
}

/// One record per SQP iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    pub gradient_norm: f64,
    pub step_norm: f64,
    pub active_set_size: usize,
    pub alpha: f64,
    pub solver: StepSolver,
    pub qp_iterations: usize,
    pub regularization: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub step_norm: f64,
    /// `max(0, -min gap)` at `x` (m).
    pub max_penetration: f64,
    pub active_set_size: usize,
    /// Contact pairs of the last subproblem.
    pub active_pairs: Vec<(usize, usize)>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    /// Residuals of the last QP subproblem.
    pub kkt: KktResiduals,
    pub diagnostics: Vec<IterationRecord>,
}

struct Subproblem {
    dx: DVector<f64>,
    pairs: Vec<(usize, usize)>,
    eq_duals: DVector<f64>,
    ineq_duals: DVector<f64>,
    kkt: KktResiduals,
    solver: StepSolver,
    qp_iterations: usize,
    regularization: f64,
}

fn solve_subproblem(
    eval: &Evaluation,
    constraints: &Constraints,
    x: &DVector<f64>,
    forced: &[(usize, usize)],
    opts: &SolverOptions,
) -> Result<Subproblem> {
    let mut pairs = constraints.detect(x);
    for p in forced {
        if !pairs.contains(p) {
            pairs.push(*p);
        }
    }
    pairs.sort_unstable();
    if pairs.is_empty() && constraints.pins.is_empty() && !opts.force_qp {
        let (chol, regularization) = factor_spd(&eval.hessian)?;
        let dx = -chol.solve(&eval.gradient).column(0).into_owned();
        return Ok(Subproblem {
            dx,
            pairs,
            eq_duals: DVector::zeros(0),
            ineq_duals: DVector::zeros(0),
            kkt: KktResiduals::default(),
            solver: StepSolver::Newton,
            qp_iterations: 0,
            regularization,
        });
    }
    let set = linearize(&constraints.pins, &constraints.planes, &pairs, x);
    let qp = QpProblem {
        hessian: eval.hessian.clone(),
        gradient: eval.gradient.clone(),
        eq_rows: set.eq_rows,
        eq_residual: set.eq_residual,
        ineq_rows: set.ineq_rows,
        ineq_residual: set.ineq_residual,
    };
    let sol = solve_qp(&qp, &opts.qp)?;
    Ok(Subproblem {
        dx: sol.dx,
        pairs,
        eq_duals: sol.eq_duals,
        ineq_duals: sol.ineq_duals,
        kkt: sol.residuals,
        solver: StepSolver::Qp,
        qp_iterations: sol.iterations,
        regularization: sol.regularization,
    })
}

/// Value of the merit function, `None` outside the domain.
fn merit(
    objective: &dyn Objective,
    constraints: &Constraints,
    x: &DVector<f64>,
    anchor: &DVector<f64>,
    rho: f64,
) -> Result<Option<f64>> {
    match objective.value(x, anchor) {
        Ok(v) if v.is_finite() => {
            Ok(Some(v + rho * (constraints.equality_violation(x) + constraints.penetration_sum(x))))
        }
        Ok(_) => Ok(None),
        Err(SimError::Inversion { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Backtracking on `E + rho (|f|_1 + |min(h, 0)|_1)` with Armijo decrease.
pub fn merit_line_search(
    objective: &dyn Objective,
    constraints: &Constraints,
    x: &DVector<f64>,
    dx: &DVector<f64>,
    gradient: &DVector<f64>,
    max_dual: f64,
    max_halvings: usize,
) -> Result<f64> {
    let rho = 10.0 * (1.0 + max_dual);
    let phi0 = merit(objective, constraints, x, x, rho)?.ok_or(SimError::NonFinite("merit"))?;
    let infeasibility = constraints.equality_violation(x) + constraints.penetration_sum(x);
    let slope = (gradient.dot(dx) - rho * infeasibility).min(0.0);
    let slack = 1e-13 * (1.0 + phi0.abs());
    let mut alpha = 1.0;
    for _ in 0..=max_halvings {
        let trial = x + alpha * dx;
        if let Some(phi) = merit(objective, constraints, &trial, x, rho)? {
            if phi <= phi0 + 1e-4 * alpha * slope + slack {
                return Ok(alpha);
            }
        }
        alpha *= 0.5;
    }
    Err(SimError::LineSearchFailure)
}

fn max_abs(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// Alternates QP subproblems and steps until `|dx|_inf < tolerance`.
///
/// Unconstrained problems take the Newton path `H dx = -g`. Contact pairs are
/// re-detected every iteration; a step that penetrates beyond the tolerance
/// is re-solved with the violating pairs forced into the subproblem.
pub fn sqp_minimize(
    objective: &dyn Objective,
    constraints: &Constraints,
    x0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    if x0.len() != objective.dim() {
        return Err(SimError::DimensionMismatch {
            what: "initial iterate",
            expected: objective.dim(),
            found: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite("initial iterate"));
    }
    let mut x = x0.clone();
    let mut forced: Vec<(usize, usize)> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut last: Option<Subproblem> = None;
    let mut step_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=opts.max_iterations {
        iterations = k;
        let eval = objective.evaluate(&x)?;
        if !eval.value.is_finite() || eval.gradient.iter().any(|g| !g.is_finite()) {
            return Err(SimError::NonFinite("energy"));
        }
        let mut sub = solve_subproblem(&eval, constraints, &x, &forced, opts)?;
        step_norm = max_abs(&sub.dx);
        let mut record = IterationRecord {
            iteration: k,
            energy: eval.value,
            gradient_norm: max_abs(&eval.gradient),
            step_norm,
            active_set_size: sub.pairs.len(),
            alpha: 1.0,
            solver: sub.solver,
            qp_iterations: sub.qp_iterations,
            regularization: sub.regularization,
        };
        if step_norm < opts.tolerance {
            x += &sub.dx;
            converged = true;
            log::trace!("{}", serde_json::to_string(&record).unwrap_or_default());
            diagnostics.push(record);
            last = Some(sub);
            break;
        }

        let mut alpha;
        let mut rounds = 0;
        loop {
            alpha = match opts.step {
                StepPolicy::Fixed(a) => a,
                StepPolicy::LineSearch => {
                    let max_dual = max_abs(&sub.eq_duals).max(max_abs(&sub.ineq_duals));
                    merit_line_search(
                        objective,
                        constraints,
                        &x,
                        &sub.dx,
                        &eval.gradient,
                        max_dual,
                        opts.max_halvings,
                    )?
                }
            };
            let trial = &x + alpha * &sub.dx;
            let violating: Vec<(usize, usize)> = constraints
                .violations(&trial, opts.penetration_tolerance)
                .into_iter()
                .filter(|p| !sub.pairs.contains(p))
                .collect();
            if violating.is_empty() || rounds == 3 {
                break;
            }
            rounds += 1;
            forced.extend(violating);
            forced.sort_unstable();
            forced.dedup();
            sub = solve_subproblem(&eval, constraints, &x, &forced, opts)?;
            step_norm = max_abs(&sub.dx);
        }
        x += alpha * &sub.dx;
        record.alpha = alpha;
        record.step_norm = step_norm;
        record.active_set_size = sub.pairs.len();
        record.qp_iterations = sub.qp_iterations;
        log::trace!("{}", serde_json::to_string(&record).unwrap_or_default());
        diagnostics.push(record);
        last = Some(sub);
    }

    let sub = last.expect("at least one iteration");
    let min_gap = constraints.min_gap(&x);
    Ok(SolveResult {
        max_penetration: if min_gap.is_finite() { (-min_gap).max(0.0) } else { 0.0 },
        iterations,
        converged,
        step_norm,
        active_set_size: sub.pairs.len(),
        active_pairs: sub.pairs,
        eq_duals: sub.eq_duals,
        ineq_duals: sub.ineq_duals,
        kkt: sub.kkt,
        diagnostics,
        x,
    })
}
