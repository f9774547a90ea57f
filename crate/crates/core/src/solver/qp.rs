//! Convex QP subsolver.
//!
//! Solves `min 1/2 dx^T H dx + g^T dx` subject to `J_f dx + f = 0` and
//! `J_h dx + h >= 0` through its dual. With `H` factored once by sparse
//! Cholesky, the dual is a small dense QP over the multipliers (equality
//! multipliers free, inequality multipliers non-negative), solved by a
//! Lawson-Hanson style active-set method. Stationarity then holds by
//! construction and the active constraints are satisfied to factorization
//! accuracy.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::Serialize;

use crate::constraints::SparseRow;
use crate::error::{Result, SimError};

#[derive(Clone, Debug)]
pub struct QpProblem {
    /// Symmetric positive semidefinite, full (both triangles) storage.
    pub hessian: CscMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_rows: Vec<SparseRow>,
    /// `f` in `J_f dx + f = 0`.
    pub eq_residual: DVector<f64>,
    pub ineq_rows: Vec<SparseRow>,
    /// `h` in `J_h dx + h >= 0`.
    pub ineq_residual: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(hessian: CscMatrix<f64>, gradient: DVector<f64>) -> Self {
        QpProblem {
            hessian,
            gradient,
            eq_rows: Vec::new(),
            eq_residual: DVector::zeros(0),
            ineq_rows: Vec::new(),
            ineq_residual: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(SimError::DimensionMismatch {
                what: "QP hessian",
                expected: n,
                found: self.hessian.nrows(),
            });
        }
        if self.eq_rows.len() != self.eq_residual.len() {
            return Err(SimError::DimensionMismatch {
                what: "QP equality rows",
                expected: self.eq_rows.len(),
                found: self.eq_residual.len(),
            });
        }
        if self.ineq_rows.len() != self.ineq_residual.len() {
            return Err(SimError::DimensionMismatch {
                what: "QP inequality rows",
                expected: self.ineq_rows.len(),
                found: self.ineq_residual.len(),
            });
        }
        for row in self.eq_rows.iter().chain(&self.ineq_rows) {
            if let Some(&(c, _)) = row.iter().find(|(c, _)| *c >= n) {
                return Err(SimError::IndexOutOfRange {
                    what: "QP constraint column",
                    index: c,
                    len: n,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QpOptions {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_complementarity: f64,
    pub max_iterations: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            tol_complementarity: 1e-8,
            max_iterations: 500,
        }
    }
}

/// Infinity-norm KKT residuals of a candidate QP solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub equality: f64,
    /// Largest violation of `J_h dx + h >= 0`.
    pub inequality: f64,
    /// Most negative inequality multiplier (as a positive number).
    pub dual_infeasibility: f64,
    pub complementarity: f64,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub dx: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    pub iterations: usize,
    /// Diagonal shift added to `H` when it could not be factored as is.
    pub regularization: f64,
    pub residuals: KktResiduals,
}

fn row_dot(row: &SparseRow, v: &[f64]) -> f64 {
    row.iter().map(|&(c, a)| a * v[c]).sum()
}

/// Evaluates the KKT conditions with the sign convention
/// `H dx + g + J_f^T mu - J_h^T zeta = 0`, `zeta >= 0`.
pub fn kkt_residuals(
    qp: &QpProblem,
    dx: &DVector<f64>,
    eq_duals: &DVector<f64>,
    ineq_duals: &DVector<f64>,
) -> KktResiduals {
    let mut r = &qp.hessian * dx + &qp.gradient;
    for (row, mu) in qp.eq_rows.iter().zip(eq_duals.iter()) {
        for &(c, a) in row {
            r[c] += a * mu;
        }
    }
    for (row, z) in qp.ineq_rows.iter().zip(ineq_duals.iter()) {
        for &(c, a) in row {
            r[c] -= a * z;
        }
    }
    let mut out = KktResiduals {
        stationarity: r.amax(),
        ..Default::default()
    };
    for (row, f) in qp.eq_rows.iter().zip(qp.eq_residual.iter()) {
        out.equality = out.equality.max((row_dot(row, dx.as_slice()) + f).abs());
    }
    for ((row, h), z) in qp.ineq_rows.iter().zip(qp.ineq_residual.iter()).zip(ineq_duals.iter()) {
        let slack = row_dot(row, dx.as_slice()) + h;
        out.inequality = out.inequality.max(-slack);
        out.dual_infeasibility = out.dual_infeasibility.max(-z);
        out.complementarity = out.complementarity.max((z * slack).abs());
    }
    out
}

fn sparse_from_rows(n: usize, rows: &[SparseRow], scale: f64) -> CscMatrix<f64> {
    // rho * J^T J for the augmentation term
    let mut coo = CooMatrix::new(n, n);
    for row in rows {
        for &(i, a) in row {
            for &(j, b) in row {
                coo.push(i, j, scale * a * b);
            }
        }
    }
    CscMatrix::from(&coo)
}

fn shifted_identity(n: usize, shift: f64) -> CscMatrix<f64> {
    let mut coo = CooMatrix::new(n, n);
    for i in 0..n {
        coo.push(i, i, shift);
    }
    CscMatrix::from(&coo)
}

/// Cholesky of `H`, retrying with growing diagonal shifts if `H` is singular.
pub(crate) fn factor_spd(h: &CscMatrix<f64>) -> Result<(CscCholesky<f64>, f64)> {
    let n = h.nrows();
    let scale = h
        .diagonal_as_csc()
        .values()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    if let Ok(chol) = CscCholesky::factor(h) {
        return Ok((chol, 0.0));
    }
    for exp in [-12, -10, -8, -6, -4] {
        let shift = scale * 10f64.powi(exp);
        let shifted = h + &shifted_identity(n, shift);
        if let Ok(chol) = CscCholesky::factor(&shifted) {
            log::debug!("QP hessian regularized with shift {shift:e}");
            return Ok((chol, shift));
        }
    }
    Err(SimError::NonFinite("QP hessian factorization"))
}

/// Dense symmetric solve with a small shift on failure.
fn dense_spd_solve(s: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = s.clone().cholesky() {
        return chol.solve(rhs);
    }
    let n = s.nrows();
    let scale = (0..n).map(|i| s[(i, i)].abs()).fold(1e-300, f64::max);
    for exp in [-14, -12, -10, -8] {
        let shifted = s + DMatrix::identity(n, n) * (scale * 10f64.powi(exp));
        if let Some(chol) = shifted.cholesky() {
            return chol.solve(rhs);
        }
    }
    // fall back to a least-squares solution
    s.clone()
        .pseudo_inverse(1e-14 * scale)
        .map(|p| p * rhs)
        .unwrap_or_else(|_| DVector::zeros(n))
}

pub fn solve_qp(qp: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    qp.check()?;
    if let Some(fixed) = single_dof_equalities(qp) {
        return solve_by_elimination(qp, &fixed, opts);
    }
    solve_dual(qp, opts)
}

/// `(dof, coefficient)` of each equality row if every row touches exactly
/// one DoF and no DoF twice.
fn single_dof_equalities(qp: &QpProblem) -> Option<Vec<(usize, f64)>> {
    if qp.eq_rows.is_empty() {
        return None;
    }
    let mut seen = vec![false; qp.dim()];
    let mut fixed = Vec::with_capacity(qp.eq_rows.len());
    for row in &qp.eq_rows {
        let entries: Vec<_> = row.iter().filter(|(_, a)| *a != 0.0).collect();
        let [&(c, a)] = entries.as_slice() else {
            return None;
        };
        if std::mem::replace(&mut seen[c], true) {
            return None;
        }
        fixed.push((c, a));
    }
    Some(fixed)
}

/// Fixes the DoFs of single-entry equality rows, solves the remaining QP on
/// the free DoFs and recovers the equality multipliers from stationarity.
fn solve_by_elimination(qp: &QpProblem, fixed: &[(usize, f64)], opts: &QpOptions) -> Result<QpSolution> {
    let n = qp.dim();
    let mut dx = DVector::zeros(n);
    let mut free_index = vec![Some(0usize); n];
    for (k, &(c, a)) in fixed.iter().enumerate() {
        dx[c] = -qp.eq_residual[k] / a;
        free_index[c] = None;
    }
    let mut nf = 0;
    for slot in free_index.iter_mut().flatten() {
        *slot = nf;
        nf += 1;
    }
    let hdx_fixed = &qp.hessian * &dx;
    let mut coo = CooMatrix::new(nf, nf);
    for (i, j, v) in qp.hessian.triplet_iter() {
        if let (Some(a), Some(b)) = (free_index[i], free_index[j]) {
            coo.push(a, b, *v);
        }
    }
    let mut gradient = DVector::zeros(nf);
    for i in 0..n {
        if let Some(a) = free_index[i] {
            gradient[a] = qp.gradient[i] + hdx_fixed[i];
        }
    }
    let mut ineq_rows = Vec::with_capacity(qp.ineq_rows.len());
    let mut ineq_residual = qp.ineq_residual.clone();
    for (k, row) in qp.ineq_rows.iter().enumerate() {
        let mut reduced = SparseRow::new();
        for &(c, a) in row {
            match free_index[c] {
                Some(j) => reduced.push((j, a)),
                None => ineq_residual[k] += a * dx[c],
            }
        }
        ineq_rows.push(reduced);
    }
    let reduced = QpProblem {
        hessian: CscMatrix::from(&coo),
        gradient,
        eq_rows: Vec::new(),
        eq_residual: DVector::zeros(0),
        ineq_rows,
        ineq_residual,
    };
    let sub = if nf > 0 {
        solve_dual(&reduced, opts)?
    } else {
        QpSolution {
            dx: DVector::zeros(0),
            eq_duals: DVector::zeros(0),
            ineq_duals: DVector::zeros(reduced.ineq_rows.len()),
            iterations: 0,
            regularization: 0.0,
            residuals: KktResiduals::default(),
        }
    };
    for i in 0..n {
        if let Some(a) = free_index[i] {
            dx[i] = sub.dx[a];
        }
    }
    // stationarity rows of the fixed DoFs determine their multipliers
    let mut r = &qp.hessian * &dx + &qp.gradient;
    for (row, z) in qp.ineq_rows.iter().zip(sub.ineq_duals.iter()) {
        for &(c, a) in row {
            r[c] -= a * z;
        }
    }
    let eq_duals = DVector::from_iterator(fixed.len(), fixed.iter().map(|&(c, a)| -r[c] / a));
    let residuals = kkt_residuals(qp, &dx, &eq_duals, &sub.ineq_duals);
    let infeasible = residuals.equality.max(residuals.inequality);
    if infeasible > 1e2 * opts.tol_primal {
        return Err(SimError::QpInfeasible {
            residual: infeasible,
        });
    }
    Ok(QpSolution {
        dx,
        eq_duals,
        ineq_duals: sub.ineq_duals,
        iterations: sub.iterations,
        regularization: sub.regularization,
        residuals,
    })
}

fn solve_dual(qp: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    let n = qp.dim();
    let p = qp.eq_rows.len();
    let m = qp.ineq_rows.len();

    // Equality rows are folded into the objective as rho/2 |J_f dx + f|^2,
    // which leaves the minimizer and the multipliers unchanged on the
    // feasible set and makes H positive definite along pinned directions.
    let (h_aug, g_aug) = if p > 0 {
        let rho = qp
            .hessian
            .diagonal_as_csc()
            .values()
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(1.0);
        let mut g = qp.gradient.clone();
        for (row, f) in qp.eq_rows.iter().zip(qp.eq_residual.iter()) {
            for &(c, a) in row {
                g[c] += rho * a * f;
            }
        }
        (&qp.hessian + &sparse_from_rows(n, &qp.eq_rows, rho), g)
    } else {
        (qp.hessian.clone(), qp.gradient.clone())
    };
    let (chol, regularization) = factor_spd(&h_aug)?;
    let u = chol.solve(&g_aug);
    let u = u.column(0).into_owned();

    let total = p + m;
    if total == 0 {
        let dx = -u;
        let residuals = kkt_residuals(qp, &dx, &DVector::zeros(0), &DVector::zeros(0));
        return Ok(QpSolution {
            dx,
            eq_duals: DVector::zeros(0),
            ineq_duals: DVector::zeros(0),
            iterations: 0,
            regularization,
            residuals,
        });
    }

    // Dual rows A = [J_f; -J_h], offsets b = [-f; h].
    let rows: Vec<(f64, &SparseRow)> = qp
        .eq_rows
        .iter()
        .map(|r| (1.0, r))
        .chain(qp.ineq_rows.iter().map(|r| (-1.0, r)))
        .collect();
    let b: Vec<f64> = qp
        .eq_residual
        .iter()
        .map(|f| -f)
        .chain(qp.ineq_residual.iter().copied())
        .collect();
    let mut at = DMatrix::zeros(n, total);
    for (k, (sign, row)) in rows.iter().enumerate() {
        for &(c, a) in *row {
            at[(c, k)] += sign * a;
        }
    }
    let y_cols = chol.solve(&at); // H^-1 A^T
    let mut s = at.tr_mul(&y_cols);
    s = 0.5 * (&s + s.transpose());
    let c = at.tr_mul(&u) + DVector::from_vec(b);

    let (y, iterations) = dual_active_set(&s, &c, p, opts)?;
    let dx = -(u + &y_cols * &y);
    let eq_duals = y.rows(0, p).into_owned();
    let ineq_duals = y.rows(p, m).into_owned();
    let residuals = kkt_residuals(qp, &dx, &eq_duals, &ineq_duals);
    let infeasible = residuals.equality.max(residuals.inequality);
    if infeasible > 1e2 * opts.tol_primal {
        return Err(SimError::QpInfeasible {
            residual: infeasible,
        });
    }
    Ok(QpSolution {
        dx,
        eq_duals,
        ineq_duals,
        iterations,
        regularization,
        residuals,
    })
}

/// Minimizes `1/2 y^T S y + c^T y` with `y[..p]` free and `y[p..] >= 0`.
fn dual_active_set(
    s: &DMatrix<f64>,
    c: &DVector<f64>,
    p: usize,
    opts: &QpOptions,
) -> Result<(DVector<f64>, usize)> {
    let total = c.len();
    let mut free = vec![false; total];
    free[..p].fill(true);
    let mut y = DVector::zeros(total);
    let add_tol = 1e-3 * opts.tol_primal;
    let mut blocked = vec![false; total];

    let solve_free = |free: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..total).filter(|&i| free[i]).collect();
        let mut z = DVector::zeros(total);
        if idx.is_empty() {
            return z;
        }
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| s[(idx[a], idx[b])]);
        let rhs = DVector::from_fn(idx.len(), |a, _| -c[idx[a]]);
        let sol = dense_spd_solve(&sub, &rhs);
        for (a, &i) in idx.iter().enumerate() {
            z[i] = sol[a];
        }
        z
    };

    if p > 0 {
        y = solve_free(&free);
    }
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > opts.max_iterations {
            return Err(SimError::QpIterationLimit {
                iterations: opts.max_iterations,
            });
        }
        // dual gradient = primal slack of each constraint
        let w = s * &y + c;
        let candidate = (p..total)
            .filter(|&i| !free[i] && !blocked[i] && w[i] < -add_tol)
            .min_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else {
            return Ok((y, iterations));
        };
        free[j] = true;
        loop {
            let z = solve_free(&free);
            let bad: Vec<usize> = (p..total).filter(|&i| free[i] && z[i] <= 0.0).collect();
            if bad.is_empty() {
                y = z;
                blocked.fill(false);
                break;
            }
            if bad == [j] && y[j] == 0.0 {
                // the new constraint cannot take a positive multiplier
                free[j] = false;
                blocked[j] = true;
                break;
            }
            let mut alpha: f64 = 1.0;
            for &i in &bad {
                let denom = y[i] - z[i];
                if denom > 0.0 {
                    alpha = alpha.min(y[i] / denom);
                }
            }
            y += alpha * (z - &y);
            for i in p..total {
                if free[i] && y[i] <= 1e-15 * (1.0 + y.amax()) && i != j {
                    free[i] = false;
                    y[i] = 0.0;
                }
            }
            if y[j] <= 0.0 {
                free[j] = false;
                y[j] = 0.0;
                blocked[j] = true;
                break;
            }
        }
    }
}
