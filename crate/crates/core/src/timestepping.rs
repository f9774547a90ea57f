//! Time integration: per-step incremental potentials, adaptive step size and
//! trajectory recording.

use nalgebra::{DVector, Vector3};

use crate::constraints::{ContactPlane, Constraints, PinConstraint};
use crate::energy::{
    assemble, damping_potential, inertia_potential, velocity_update, EnergyModel, HessianOptions,
    IntegratorContext, Material, Scheme,
};
use crate::error::{Result, SimError};
use crate::forces::{
    point_load_forces, total_pressure_forces, PiecewiseLinear, PointLoad, PressureActuator,
    StepSchedule,
};
use crate::io::trajectory::{Frame, FrameEnergies, Trajectory, TrajectoryHeader};
use crate::mesh::{vertex, MeshModel};
use crate::solver::{sqp_minimize, Evaluation, Objective, SolveResult, SolverOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    /// Internal forces (elastic, muscle, gravity) at `x`.
    pub f_int_prev: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub cfl_coefficient: f64,
    pub growth: f64,
    /// Consecutive failed attempts tolerated before giving up.
    pub max_retries: usize,
    /// Consecutive successes before the step grows.
    pub grow_after: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_init: 1e-2,
            dt_min: 1e-7,
            dt_max: 1e-2,
            cfl_coefficient: 1.0,
            growth: 1.5,
            max_retries: 30,
            grow_after: 5,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(SimError::invalid(
                "step_control",
                "requires 0 < dt_min <= dt_init <= dt_max",
            ));
        }
        if !(self.cfl_coefficient > 0.0) {
            return Err(SimError::invalid("cfl_coefficient", "must be positive"));
        }
        if !(self.growth >= 1.0) {
            return Err(SimError::invalid("growth", "must be at least 1"));
        }
        Ok(())
    }
}

/// `C h_min / c_p`, minimized over elements, with `c_p = sqrt((lambda + 2 mu) / rho)`.
pub fn cfl_dt(mesh: &MeshModel, materials: &[Material], element_material: &[usize], c: f64) -> f64 {
    (0..mesh.element_count())
        .map(|e| c * mesh.min_edge_length(e) / materials[element_material[e]].wave_speed())
        .fold(f64::INFINITY, f64::min)
}

/// Pinned vertices with their targets, optionally displaced over time.
#[derive(Clone, Debug, PartialEq)]
pub struct PinGroup {
    pub vertices: Vec<usize>,
    pub targets: Vec<Vector3<f64>>,
    /// Common offset added to every target.
    pub motion: Option<PiecewiseLinear<Vector3<f64>>>,
}

/// Integrator settings from `start` until the next phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phase {
    pub start: f64,
    pub scheme: Scheme,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    /// Time between recorded frames (s).
    pub stride: f64,
    pub vertices: Vec<usize>,
    pub labels: Vec<String>,
    pub record_energies: bool,
}

/// A fully resolved simulation: physics model, boundary conditions,
/// actuation schedules and run settings.
#[derive(Clone, Debug)]
pub struct System {
    pub model: EnergyModel,
    pub pins: Vec<PinGroup>,
    pub planes: Vec<ContactPlane>,
    pub pressures: Vec<PressureActuator>,
    pub loads: Vec<PointLoad>,
    /// One schedule per entry of `model.muscles`.
    pub activations: Vec<StepSchedule<f64>>,
    /// Sorted by start time; the first starts at 0.
    pub phases: Vec<Phase>,
    pub control: StepControl,
    pub solver: SolverOptions,
    pub duration: f64,
    pub initial_velocity: Vector3<f64>,
    pub output: OutputConfig,
    pub scene_hash: String,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: SystemState,
    pub solve: SolveResult,
}

#[derive(Clone, Debug)]
pub struct SimulationSummary {
    pub final_state: SystemState,
    pub steps: usize,
    pub rejected_steps: usize,
    pub frames: usize,
}

struct StepObjective<'a> {
    model: &'a EnergyModel,
    activations: Vec<f64>,
    ctx: IntegratorContext,
    weight: f64,
    /// Position-independent external force, already weighted.
    fixed_force: DVector<f64>,
    pressures: &'a [PressureActuator],
    t_new: f64,
    hessian: HessianOptions,
}

impl StepObjective<'_> {
    fn pressure(&self, x: &DVector<f64>) -> DVector<f64> {
        self.weight * total_pressure_forces(self.pressures, x, self.t_new)
    }
}

impl Objective for StepObjective<'_> {
    fn dim(&self) -> usize {
        self.model.dof_count()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
        let a = assemble(self.model, x, &self.activations, Some(&self.ctx), self.hessian)?;
        let f = &self.fixed_force + self.pressure(x);
        Ok(Evaluation {
            value: a.value - f.dot(x),
            gradient: a.gradient - f,
            hessian: a.hessian,
        })
    }

    fn value(&self, x: &DVector<f64>, anchor: &DVector<f64>) -> Result<f64> {
        let internal = self.model.internal_value(x, &self.activations)?.total();
        let f = &self.fixed_force + self.pressure(anchor);
        Ok(self.weight * internal
            + inertia_potential(x, &self.ctx)?.value
            + damping_potential(x, &self.ctx)?.value
            - f.dot(x))
    }
}

/// Errors after which the step is retried with a smaller `dt`.
fn is_retryable(e: &SimError) -> bool {
    matches!(
        e,
        SimError::Inversion { .. }
            | SimError::LineSearchFailure
            | SimError::QpInfeasible { .. }
            | SimError::QpIterationLimit { .. }
            | SimError::NonFinite(_)
            | SimError::StepFailure { .. }
    )
}

impl System {
    /// Unconstrained, unloaded system over `model` with one undamped phase,
    /// zero muscle activations, zero duration and every vertex recorded.
    pub fn new(model: EnergyModel, scheme: Scheme) -> Self {
        let n = model.mesh.vertex_count();
        let activations = vec![StepSchedule::constant(0.0); model.muscles.len()];
        System {
            model,
            pins: vec![],
            planes: vec![],
            pressures: vec![],
            loads: vec![],
            activations,
            phases: vec![Phase {
                start: 0.0,
                scheme,
                damping: 0.0,
            }],
            control: StepControl::default(),
            solver: SolverOptions::default(),
            duration: 0.0,
            initial_velocity: Vector3::zeros(),
            output: OutputConfig {
                stride: 0.01,
                vertices: (0..n).collect(),
                labels: (0..n).map(|v| format!("v{v}")).collect(),
                record_energies: false,
            },
            scene_hash: String::new(),
        }
    }

    pub fn dof_count(&self) -> usize {
        self.model.dof_count()
    }

    pub fn phase_at(&self, t: f64) -> Phase {
        let i = self.phases.partition_point(|p| p.start <= t);
        self.phases[i.saturating_sub(1)]
    }

    pub fn activations_at(&self, t: f64) -> Vec<f64> {
        self.activations.iter().map(|s| s.value(t)).collect()
    }

    pub fn pins_at(&self, t: f64) -> Vec<PinConstraint> {
        let mut out = Vec::new();
        for group in &self.pins {
            let offset = group.motion.as_ref().map_or(Vector3::zeros(), |m| m.value(t));
            for (&v, target) in group.vertices.iter().zip(&group.targets) {
                out.push(PinConstraint {
                    vertex: v,
                    target: target + offset,
                });
            }
        }
        out
    }

    pub fn constraints_at(&self, t: f64) -> Constraints {
        Constraints::new(self.pins_at(t), self.planes.clone(), self.model.mesh.vertex_count())
    }

    pub fn cfl_dt(&self) -> f64 {
        cfl_dt(
            &self.model.mesh,
            &self.model.materials,
            &self.model.element_material,
            self.control.cfl_coefficient,
        )
    }

    /// Rest configuration with pins at their initial targets and the uniform
    /// initial velocity on every unpinned vertex.
    pub fn initial_state(&self) -> Result<SystemState> {
        let mut x = self.model.mesh.rest_positions();
        let mut v = DVector::zeros(x.len());
        for i in 0..self.model.mesh.vertex_count() {
            for c in 0..3 {
                v[3 * i + c] = self.initial_velocity[c];
            }
        }
        for pin in self.pins_at(0.0) {
            for c in 0..3 {
                x[3 * pin.vertex + c] = pin.target[c];
                v[3 * pin.vertex + c] = 0.0;
            }
        }
        let f_int_prev = self.model.internal_forces(&x, &self.activations_at(0.0))?;
        Ok(SystemState {
            t: 0.0,
            x,
            v,
            f_int_prev,
        })
    }

    /// Kinetic, elastic, gravitational and muscle energy of a state.
    pub fn energies(&self, state: &SystemState) -> Result<FrameEnergies> {
        let b = self.model.internal_value(&state.x, &self.activations_at(state.t))?;
        let m = self.model.mass_diagonal();
        Ok(FrameEnergies {
            kinetic: 0.5 * state.v.component_mul(&state.v).dot(&m),
            elastic: b.elastic,
            gravity: b.gravity,
            muscle: b.muscle,
        })
    }

    /// External forces (loads and pressure) at time `t` on configuration `x`.
    pub fn external_forces(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        point_load_forces(&self.loads, t, x.len()) + total_pressure_forces(&self.pressures, x, t)
    }

    /// Advances `state` by `dt` with the phase active at `state.t`.
    pub fn step(&self, state: &SystemState, dt: f64) -> Result<StepOutcome> {
        let phase = self.phase_at(state.t);
        let t_new = state.t + dt;
        let n = self.dof_count();
        let ctx = IntegratorContext {
            dt,
            x_prev: state.x.clone(),
            v_prev: state.v.clone(),
            f_int_prev: Some(state.f_int_prev.clone()),
            scheme: phase.scheme,
            damping: phase.damping,
            mass: self.model.mass_diagonal(),
        };
        let weight = phase.scheme.internal_weight();
        let fixed_force = match phase.scheme {
            Scheme::BackwardEuler => point_load_forces(&self.loads, t_new, n),
            Scheme::CrankNicolson => {
                0.5 * (point_load_forces(&self.loads, t_new, n)
                    + self.external_forces(&state.x, state.t))
            }
        };
        let activations = self.activations_at(t_new);
        let objective = StepObjective {
            model: &self.model,
            activations: activations.clone(),
            ctx,
            weight,
            fixed_force,
            pressures: &self.pressures,
            t_new,
            hessian: HessianOptions {
                project: true,
                psd_floor: self.solver.psd_floor,
            },
        };
        let constraints = self.constraints_at(t_new);
        // pinned coordinates start at their new targets
        let mut x0 = objective.ctx.predicted();
        for pin in &constraints.pins {
            for c in 0..3 {
                x0[3 * pin.vertex + c] = pin.target[c];
            }
        }
        // a predictor that inverts elements or leaves the half-spaces is
        // replaced by the previous positions
        if objective.value(&x0, &x0).is_err() || constraints.min_gap(&x0) < 0.0 {
            x0 = state.x.clone();
            for pin in &constraints.pins {
                for c in 0..3 {
                    x0[3 * pin.vertex + c] = pin.target[c];
                }
            }
        }
        let solve = sqp_minimize(&objective, &constraints, &x0, &self.solver)?;
        if !solve.converged {
            return Err(SimError::StepFailure {
                t: state.t,
                dt,
                reason: format!("solver did not converge in {} iterations", solve.iterations),
            });
        }
        let v = velocity_update(&solve.x, &objective.ctx);
        let f_int_prev = self.model.internal_forces(&solve.x, &activations)?;
        Ok(StepOutcome {
            state: SystemState {
                t: t_new,
                x: solve.x.clone(),
                v,
                f_int_prev,
            },
            solve,
        })
    }

    pub fn trajectory_header(&self) -> TrajectoryHeader {
        TrajectoryHeader::new(self.scene_hash.clone(), self.dof_count(), self.output.labels.clone())
    }

    pub fn frame(&self, state: &SystemState, max_penetration: f64, iterations: usize) -> Result<Frame> {
        Ok(Frame {
            t: state.t,
            positions: self
                .output
                .vertices
                .iter()
                .map(|&v| vertex(&state.x, v).into())
                .collect(),
            energies: if self.output.record_energies {
                Some(self.energies(state)?)
            } else {
                None
            },
            max_penetration,
            solver_iterations: iterations,
        })
    }

    fn penetration(&self, state: &SystemState) -> f64 {
        let g = self.constraints_at(state.t).min_gap(&state.x);
        if g.is_finite() {
            (-g).max(0.0)
        } else {
            0.0
        }
    }

    /// Runs to `duration`, handing every recorded frame to `observer`.
    pub fn simulate_with(
        &self,
        mut observer: impl FnMut(&Frame) -> Result<()>,
    ) -> Result<SimulationSummary> {
        self.control.validate()?;
        let cfl = self.cfl_dt();
        let mut dt = self.control.dt_init.min(cfl).min(self.control.dt_max);
        let mut state = self.initial_state()?;
        observer(&self.frame(&state, self.penetration(&state), 0)?)?;
        let mut frames = 1;
        let mut steps = 0;
        let mut rejected = 0;
        let mut successes = 0;
        let mut failures = 0;
        let mut next_output = 1usize;
        let mut iterations_since_frame = 0;
        let stride = self.output.stride;
        let eps = 1e-12 * self.duration.max(1.0);

        while state.t < self.duration - eps {
            let t_out = (next_output as f64 * stride).min(self.duration);
            let mut event = t_out;
            if let Some(p) = self.phases.iter().find(|p| p.start > state.t + eps) {
                event = event.min(p.start);
            }
            let remaining = event - state.t;
            let (h, lands) = if remaining <= dt * (1.0 + 1e-9) {
                (remaining, true)
            } else if remaining < 2.0 * dt {
                (0.5 * remaining, false)
            } else {
                (dt, false)
            };
            match self.step(&state, h) {
                Ok(outcome) => {
                    state = outcome.state;
                    if lands {
                        state.t = event;
                    }
                    steps += 1;
                    failures = 0;
                    iterations_since_frame += outcome.solve.iterations;
                    successes += 1;
                    if successes >= self.control.grow_after {
                        successes = 0;
                        dt = (dt * self.control.growth).min(self.control.dt_max).min(cfl);
                    }
                    if lands && event == t_out {
                        let frame = self.frame(&state, outcome.solve.max_penetration, iterations_since_frame)?;
                        observer(&frame)?;
                        frames += 1;
                        iterations_since_frame = 0;
                        while (next_output as f64 * stride) <= state.t + eps {
                            next_output += 1;
                        }
                    }
                }
                Err(e) if is_retryable(&e) => {
                    rejected += 1;
                    failures += 1;
                    successes = 0;
                    dt = 0.5 * h;
                    log::debug!("step at t = {} with dt = {h:e} rejected: {e}", state.t);
                    if dt < self.control.dt_min || failures > self.control.max_retries {
                        return Err(SimError::StepFailure {
                            t: state.t,
                            dt,
                            reason: e.to_string(),
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Ok(SimulationSummary {
            final_state: state,
            steps,
            rejected_steps: rejected,
            frames,
        })
    }

    pub fn simulate(&self) -> Result<Trajectory> {
        let mut traj = Trajectory::new(self.trajectory_header());
        self.simulate_with(|f| {
            traj.frames.push(f.clone());
            Ok(())
        })?;
        Ok(traj)
    }
}
