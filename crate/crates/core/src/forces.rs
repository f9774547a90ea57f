//! External forces: chamber pressure and scheduled point loads, plus the
//! time schedules that drive them.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DVector, Vector3};

use crate::error::{Result, SimError};
use crate::mesh::{surface_normal, vertex};

/// Piecewise-linear interpolation through `(time, value)` knots, held
/// constant outside the knot range.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear<T> {
    knots: Vec<(f64, T)>,
}

impl<T> PiecewiseLinear<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    pub fn new(knots: Vec<(f64, T)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(SimError::invalid("schedule", "needs at least one knot"));
        }
        check_times(knots.iter().map(|k| k.0))?;
        Ok(PiecewiseLinear { knots })
    }

    pub fn constant(value: T) -> Self {
        PiecewiseLinear {
            knots: vec![(0.0, value)],
        }
    }

    pub fn knots(&self) -> &[(f64, T)] {
        &self.knots
    }

    pub fn value(&self, t: f64) -> T {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let i = k.partition_point(|(tk, _)| *tk <= t);
        if i == k.len() {
            return k[k.len() - 1].1;
        }
        let (t0, v0) = k[i - 1];
        let (t1, v1) = k[i];
        let s = (t - t0) / (t1 - t0);
        v0 + (v1 - v0) * s
    }
}

/// Piecewise-constant schedule: `initial` until the first step time, then
/// the value of the latest step with `time <= t`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule<T> {
    initial: T,
    steps: Vec<(f64, T)>,
}

impl<T: Copy> StepSchedule<T> {
    pub fn new(initial: T, steps: Vec<(f64, T)>) -> Result<Self> {
        check_times(steps.iter().map(|s| s.0))?;
        Ok(StepSchedule { initial, steps })
    }

    pub fn constant(value: T) -> Self {
        StepSchedule {
            initial: value,
            steps: Vec::new(),
        }
    }

    pub fn initial(&self) -> T {
        self.initial
    }

    pub fn steps(&self) -> &[(f64, T)] {
        &self.steps
    }

    pub fn value(&self, t: f64) -> T {
        let i = self.steps.partition_point(|(ts, _)| *ts <= t);
        if i == 0 {
            self.initial
        } else {
            self.steps[i - 1].1
        }
    }
}

fn check_times(times: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for t in times {
        if !t.is_finite() || t <= prev {
            return Err(SimError::invalid("schedule", "times must be finite and strictly increasing"));
        }
        prev = t;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PressureActuator {
    /// Chamber wall triangles, normals pointing out of the solid into the chamber.
    pub triangles: Vec<[usize; 3]>,
    pub schedule: PiecewiseLinear<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointLoad {
    pub vertices: Vec<usize>,
    /// Force applied to every vertex of the set (N).
    pub force: StepSchedule<Vector3<f64>>,
    pub release: Option<f64>,
}

/// `-p n / 3` on each vertex of every triangle, with `n` the area-weighted normal.
pub fn pressure_forces(triangles: &[[usize; 3]], x: &DVector<f64>, p: f64) -> DVector<f64> {
    let mut f = DVector::zeros(x.len());
    if p == 0.0 {
        return f;
    }
    for tri in triangles {
        let n = surface_normal(&vertex(x, tri[0]), &vertex(x, tri[1]), &vertex(x, tri[2]));
        let share = n * (-p / 3.0);
        for &v in tri {
            for c in 0..3 {
                f[3 * v + c] += share[c];
            }
        }
    }
    f
}

/// Sum of all loads active at time `t`.
pub fn point_load_forces(loads: &[PointLoad], t: f64, dof: usize) -> DVector<f64> {
    let mut f = DVector::zeros(dof);
    for load in loads {
        if load.release.is_some_and(|r| t >= r) {
            continue;
        }
        let force = load.force.value(t);
        for &v in &load.vertices {
            for c in 0..3 {
                f[3 * v + c] += force[c];
            }
        }
    }
    f
}

/// Sum of all chamber pressures at time `t` on configuration `x`.
pub fn total_pressure_forces(actuators: &[PressureActuator], x: &DVector<f64>, t: f64) -> DVector<f64> {
    let mut f = DVector::zeros(x.len());
    for a in actuators {
        f += pressure_forces(&a.triangles, x, a.schedule.value(t));
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::stack;

    fn triangle() -> DVector<f64> {
        stack(&[Vector3::zeros(), Vector3::x(), Vector3::y()])
    }

    #[test]
    fn single_triangle_pressure() {
        let f = pressure_forces(&[[0, 1, 2]], &triangle(), 2.0);
        for v in 0..3 {
            assert!((vertex(&f, v) - Vector3::new(0.0, 0.0, -1.0 / 3.0)).norm() < 1e-15);
        }
        assert_eq!(pressure_forces(&[[0, 1, 2]], &triangle(), 0.0), DVector::zeros(9));
    }

    #[test]
    fn load_release() {
        let load = PointLoad {
            vertices: vec![1],
            force: StepSchedule::constant(Vector3::new(0.0, 0.0, -2.06)),
            release: Some(1.0),
        };
        let f = point_load_forces(std::slice::from_ref(&load), 0.5, 6);
        assert_eq!(vertex(&f, 1), Vector3::new(0.0, 0.0, -2.06));
        assert_eq!(point_load_forces(&[load], 1.0, 6), DVector::zeros(6));
        let empty = PointLoad {
            vertices: vec![],
            force: StepSchedule::constant(Vector3::x()),
            release: None,
        };
        assert_eq!(point_load_forces(&[empty], 0.0, 6), DVector::zeros(6));
    }

    #[test]
    fn schedules() {
        let s = StepSchedule::new(0.69, vec![(0.54, 0.0)]).unwrap();
        assert_eq!(s.value(0.0), 0.69);
        assert_eq!(s.value(0.539), 0.69);
        assert_eq!(s.value(0.54), 0.0);
        let p = PiecewiseLinear::new(vec![(0.0, 0.0), (1.0, 10.0)]).unwrap();
        assert_eq!(p.value(-1.0), 0.0);
        assert_eq!(p.value(0.25), 2.5);
        assert_eq!(p.value(2.0), 10.0);
        assert!(PiecewiseLinear::new(vec![(1.0, 0.0), (1.0, 1.0)]).is_err());
        assert!(StepSchedule::new(0.0, vec![(0.5, 1.0), (0.2, 1.0)]).is_err());
    }
}
