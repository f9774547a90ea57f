//! System-level terms with diagonal Hessians: gravity, inertia and damping.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    BackwardEuler,
    CrankNicolson,
}

impl Scheme {
    /// Weight applied to internal energies and external forces in the
    /// incremental potential.
    pub fn internal_weight(self) -> f64 {
        match self {
            Scheme::BackwardEuler => 1.0,
            Scheme::CrankNicolson => 0.5,
        }
    }
}

/// Value, gradient and diagonal Hessian of a system-level term.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian_diag: DVector<f64>,
}

/// Everything an incremental potential needs from the previous step.
#[derive(Clone, Debug)]
pub struct IntegratorContext {
    pub dt: f64,
    pub x_prev: DVector<f64>,
    pub v_prev: DVector<f64>,
    /// Internal forces at `x_prev`; required for Crank-Nicolson.
    pub f_int_prev: Option<DVector<f64>>,
    pub scheme: Scheme,
    /// Mass-proportional damping coefficient (1/s).
    pub damping: f64,
    /// Lumped mass per DoF.
    pub mass: DVector<f64>,
}

impl IntegratorContext {
    pub fn check(&self, n: usize) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(SimError::invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        for (what, len) in [
            ("integrator x_prev", self.x_prev.len()),
            ("integrator v_prev", self.v_prev.len()),
            ("integrator mass", self.mass.len()),
        ] {
            if len != n {
                return Err(SimError::DimensionMismatch {
                    what,
                    expected: n,
                    found: len,
                });
            }
        }
        match (&self.f_int_prev, self.scheme) {
            (None, Scheme::CrankNicolson) => Err(SimError::MissingForceCache),
            (Some(f), _) if f.len() != n => Err(SimError::DimensionMismatch {
                what: "integrator f_int_prev",
                expected: n,
                found: f.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Explicit prediction `x_prev + dt v_prev`.
    pub fn predicted(&self) -> DVector<f64> {
        &self.x_prev + self.dt * &self.v_prev
    }
}

/// `-sum_v m_v g . x_v`
pub fn gravity(masses: &[f64], g: &Vector3<f64>, x: &DVector<f64>) -> DiagonalEval {
    let n = x.len();
    let mut gradient = DVector::zeros(n);
    let mut value = 0.0;
    for (v, &m) in masses.iter().enumerate() {
        for c in 0..3 {
            gradient[3 * v + c] = -m * g[c];
            value -= m * g[c] * x[3 * v + c];
        }
    }
    DiagonalEval {
        value,
        gradient,
        hessian_diag: DVector::zeros(n),
    }
}

/// Inertial part of the incremental potential.
///
/// Backward Euler: `|x - x_hat|_M^2 / (2 dt^2)`.
/// Crank-Nicolson: `|x - x_hat|_M^2 / dt^2 - f_int_prev . x / 2`.
pub fn inertia_potential(x: &DVector<f64>, ctx: &IntegratorContext) -> Result<DiagonalEval> {
    ctx.check(x.len())?;
    let dx = x - ctx.predicted();
    let scale = match ctx.scheme {
        Scheme::BackwardEuler => 1.0 / ctx.dt.powi(2),
        Scheme::CrankNicolson => 2.0 / ctx.dt.powi(2),
    };
    let m_dx = ctx.mass.component_mul(&dx);
    let mut value = 0.5 * scale * dx.dot(&m_dx);
    let mut gradient = scale * m_dx;
    if ctx.scheme == Scheme::CrankNicolson {
        let f_prev = ctx.f_int_prev.as_ref().ok_or(SimError::MissingForceCache)?;
        value -= 0.5 * f_prev.dot(x);
        gradient -= 0.5 * f_prev;
    }
    Ok(DiagonalEval {
        value,
        gradient,
        hessian_diag: scale * &ctx.mass,
    })
}

/// `alpha / (2 dt) |x - x_prev|_M^2`; its gradient is `alpha M v` with the
/// implicit velocity `v = (x - x_prev) / dt`.
pub fn damping_potential(x: &DVector<f64>, ctx: &IntegratorContext) -> Result<DiagonalEval> {
    ctx.check(x.len())?;
    if ctx.damping < 0.0 {
        return Err(SimError::invalid("damping", "must be non-negative"));
    }
    let c = ctx.damping / ctx.dt;
    let dx = x - &ctx.x_prev;
    let m_dx = ctx.mass.component_mul(&dx);
    Ok(DiagonalEval {
        value: 0.5 * c * dx.dot(&m_dx),
        gradient: c * m_dx,
        hessian_diag: c * &ctx.mass,
    })
}

/// Scheme-consistent end-of-step velocities.
pub fn velocity_update(x_new: &DVector<f64>, ctx: &IntegratorContext) -> DVector<f64> {
    let dv = (x_new - &ctx.x_prev) / ctx.dt;
    match ctx.scheme {
        Scheme::BackwardEuler => dv,
        Scheme::CrankNicolson => 2.0 * dv - &ctx.v_prev,
    }
}
