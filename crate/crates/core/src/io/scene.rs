//! Scene JSON: parsing, validation, normalization and resolution into a
//! runnable [`System`].

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mesh::MeshFile;
use super::{load_mesh, parse_json, read_file};
use crate::constraints::{ContactPlane, DEFAULT_ACTIVATION_MARGIN};
use crate::energy::{EnergyModel, Material, MaterialModel, MuscleBinding, Scheme};
use crate::error::{Result, SimError};
use crate::forces::{PiecewiseLinear, PointLoad, PressureActuator, StepSchedule};
use crate::mesh::MeshModel;
use crate::solver::{QpOptions, SolverOptions, StepPolicy};
use crate::timestepping::{OutputConfig, Phase, PinGroup, StepControl, System};

pub const SCENE_VERSION: &str = "1.0";

/// Mesh given by a path relative to the scene file, or inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSource {
    Path(String),
    Inline(MeshFile),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    /// Omitted means every element.
    #[serde(default)]
    pub element_set: Option<String>,
    pub model: MaterialModel,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub start: f64,
    pub integrator: Scheme,
    /// Overrides the scene damping during this phase.
    #[serde(default)]
    pub damping: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepControlConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub cfl_coefficient: f64,
    pub growth: f64,
    pub max_retries: usize,
}

impl Default for StepControlConfig {
    fn default() -> Self {
        let d = StepControl::default();
        StepControlConfig {
            dt_init: d.dt_init,
            dt_min: d.dt_min,
            dt_max: d.dt_max,
            cfl_coefficient: d.cfl_coefficient,
            growth: d.growth,
            max_retries: d.max_retries,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fixed step size instead of the merit line search.
    pub fixed_step: Option<f64>,
    pub psd_floor: f64,
    pub qp_tolerance: f64,
    pub penetration_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            fixed_step: None,
            psd_floor: d.psd_floor,
            qp_tolerance: d.qp.tol_primal,
            penetration_tolerance: d.penetration_tolerance,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            step: self.fixed_step.map_or(StepPolicy::LineSearch, StepPolicy::Fixed),
            psd_floor: self.psd_floor,
            qp: QpOptions {
                tol_primal: self.qp_tolerance,
                tol_dual: self.qp_tolerance,
                tol_complementarity: self.qp_tolerance,
                ..QpOptions::default()
            },
            penetration_tolerance: self.penetration_tolerance,
            ..SolverOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinConfig {
    pub vertex_set: String,
    /// One target per vertex; rest positions when omitted.
    #[serde(default)]
    pub targets: Option<Vec<[f64; 3]>>,
    /// Piecewise-linear offset `[time, [dx, dy, dz]]` added to every target.
    #[serde(default)]
    pub motion: Option<Vec<(f64, [f64; 3])>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneConfig {
    pub normal: [f64; 3],
    pub point: [f64; 3],
    #[serde(default = "default_margin")]
    pub activation_margin: f64,
}

fn default_margin() -> f64 {
    DEFAULT_ACTIVATION_MARGIN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureConfig {
    pub triangle_set: String,
    /// `[time, pressure]` knots, linearly interpolated.
    pub schedule: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub vertex_set: String,
    /// Force on every vertex of the set until the first step.
    pub force: [f64; 3],
    #[serde(default)]
    pub steps: Vec<(f64, [f64; 3])>,
    #[serde(default)]
    pub release: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationConfig {
    pub initial: f64,
    #[serde(default)]
    pub steps: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleConfig {
    pub element_set: String,
    pub stiffness: f64,
    pub direction: [f64; 3],
    pub activation: ActivationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassConfig {
    pub vertex_set: String,
    /// Total mass, split equally over the set (kg).
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputFileConfig {
    /// Time between frames (s).
    pub stride: f64,
    pub marker_sets: Vec<String>,
    pub record_all_vertices: bool,
    pub record_energies: bool,
}

impl Default for OutputFileConfig {
    fn default() -> Self {
        OutputFileConfig {
            stride: 0.01,
            marker_sets: Vec::new(),
            record_all_vertices: true,
            record_energies: false,
        }
    }
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

fn default_scheme() -> Scheme {
    Scheme::BackwardEuler
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub version: String,
    pub mesh: MeshSource,
    pub materials: Vec<MaterialConfig>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub damping: f64,
    #[serde(default = "default_scheme")]
    pub integrator: Scheme,
    #[serde(default)]
    pub phases: Vec<PhaseConfig>,
    #[serde(default)]
    pub step_control: StepControlConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub pins: Vec<PinConfig>,
    #[serde(default)]
    pub planes: Vec<PlaneConfig>,
    #[serde(default)]
    pub pressures: Vec<PressureConfig>,
    #[serde(default)]
    pub loads: Vec<LoadConfig>,
    #[serde(default)]
    pub muscles: Vec<MuscleConfig>,
    #[serde(default)]
    pub point_masses: Vec<PointMassConfig>,
    pub duration: f64,
    #[serde(default)]
    pub initial_velocity: Option<[f64; 3]>,
    #[serde(default)]
    pub output: OutputFileConfig,
}

/// A parsed scene with its mesh loaded.
#[derive(Clone, Debug)]
pub struct Scene {
    pub config: SceneConfig,
    pub mesh: MeshModel,
    /// Directory that relative mesh paths are resolved against.
    pub base_dir: PathBuf,
}

fn schema(pointer: &str, message: impl Into<String>) -> SimError {
    SimError::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn finite3(v: &[f64; 3], what: &str) -> Result<Vector3<f64>> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(Vector3::from(*v))
    } else {
        Err(SimError::invalid(what, "must be finite"))
    }
}

pub fn parse_scene_str(text: &str, base_dir: &Path) -> Result<Scene> {
    let config: SceneConfig = parse_json(text)?;
    Scene::from_config(config, base_dir)
}

pub fn parse_scene(path: &Path) -> Result<Scene> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scene_str(&read_file(path)?, base)
}

impl Scene {
    /// Loads the mesh and validates every cross-reference and parameter.
    pub fn from_config(config: SceneConfig, base_dir: &Path) -> Result<Scene> {
        let major = config.version.split('.').next().unwrap_or("");
        if major != SCENE_VERSION.split('.').next().unwrap() {
            return Err(schema(
                "/version",
                format!("unsupported scene version {:?}", config.version),
            ));
        }
        let mesh = match &config.mesh {
            MeshSource::Path(p) => load_mesh(&base_dir.join(p))?,
            MeshSource::Inline(m) => m.clone().into_model()?,
        };
        let scene = Scene {
            config,
            mesh,
            base_dir: base_dir.to_path_buf(),
        };
        scene.build()?;
        Ok(scene)
    }

    /// Scene JSON with every default filled in.
    pub fn normalized_json(&self) -> String {
        serde_json::to_string_pretty(&self.config).expect("scene serializes")
    }

    /// SHA-256 over the normalized scene and the mesh contents.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.config).expect("scene serializes"));
        h.update(serde_json::to_string(&MeshFile::from_model(&self.mesh)).expect("mesh serializes"));
        format!("{:x}", h.finalize())
    }

    fn element_material(&self) -> Result<(Vec<Material>, Vec<usize>)> {
        let ne = self.mesh.element_count();
        let mut owner: Vec<Option<usize>> = vec![None; ne];
        let mut materials = Vec::new();
        if self.config.materials.is_empty() && ne > 0 {
            return Err(schema("/materials", "at least one material is required"));
        }
        for (k, m) in self.config.materials.iter().enumerate() {
            materials.push(Material::new(m.model, m.young_modulus, m.poisson_ratio, m.density)?);
            let elements: Vec<usize> = match &m.element_set {
                Some(name) => self.mesh.element_set(name)?.to_vec(),
                None => (0..ne).collect(),
            };
            for e in elements {
                if let Some(prev) = owner[e].replace(k) {
                    return Err(SimError::invalid(
                        "materials",
                        format!("element {e} is assigned by material regions {prev} and {k}"),
                    ));
                }
            }
        }
        let element_material = owner
            .into_iter()
            .enumerate()
            .map(|(e, o)| {
                o.ok_or_else(|| {
                    SimError::invalid("materials", format!("element {e} has no material region"))
                })
            })
            .collect::<Result<_>>()?;
        Ok((materials, element_material))
    }

    /// Resolves names into indices and builds the runnable system.
    pub fn build(&self) -> Result<System> {
        let c = &self.config;
        let mesh = &self.mesh;
        if !(c.duration >= 0.0 && c.duration.is_finite()) {
            return Err(SimError::invalid("duration", "must be finite and non-negative"));
        }
        if !(c.damping >= 0.0 && c.damping.is_finite()) {
            return Err(SimError::invalid("damping", "must be non-negative"));
        }
        if !(c.output.stride > 0.0 && c.output.stride.is_finite()) {
            return Err(SimError::invalid("output.stride", "must be positive"));
        }
        let (materials, element_material) = self.element_material()?;

        let mut point_masses = Vec::new();
        for pm in &c.point_masses {
            let set = mesh.vertex_set(&pm.vertex_set)?;
            if !(pm.mass >= 0.0 && pm.mass.is_finite()) {
                return Err(SimError::invalid("point_masses.mass", "must be non-negative"));
            }
            for &v in set {
                point_masses.push((v, pm.mass / set.len() as f64));
            }
        }

        let mut muscles = Vec::new();
        let mut activations = Vec::new();
        for m in &c.muscles {
            let direction = finite3(&m.direction, "muscle direction")?;
            muscles.push(MuscleBinding {
                elements: mesh.element_set(&m.element_set)?.to_vec(),
                stiffness: m.stiffness,
                direction,
            });
            if !m.activation.initial.is_finite()
                || m.activation.steps.iter().any(|s| !s.1.is_finite())
            {
                return Err(SimError::invalid("muscle activation", "must be finite"));
            }
            activations.push(StepSchedule::new(m.activation.initial, m.activation.steps.clone())?);
        }

        let gravity = finite3(&c.gravity, "gravity")?;
        let model = EnergyModel::new(
            mesh.clone(),
            materials,
            element_material,
            muscles,
            gravity,
            &point_masses,
        )?;

        let mut pins = Vec::new();
        for p in &c.pins {
            let vertices = mesh.vertex_set(&p.vertex_set)?.to_vec();
            let targets = match &p.targets {
                Some(t) => {
                    if t.len() != vertices.len() {
                        return Err(SimError::DimensionMismatch {
                            what: "pin targets",
                            expected: vertices.len(),
                            found: t.len(),
                        });
                    }
                    t.iter().map(|v| finite3(v, "pin target")).collect::<Result<_>>()?
                }
                None => vertices.iter().map(|&v| mesh.vertices[v]).collect(),
            };
            let motion = match &p.motion {
                Some(knots) => Some(PiecewiseLinear::new(
                    knots
                        .iter()
                        .map(|(t, d)| Ok((*t, finite3(d, "pin motion")?)))
                        .collect::<Result<_>>()?,
                )?),
                None => None,
            };
            pins.push(PinGroup {
                vertices,
                targets,
                motion,
            });
        }

        let planes = c
            .planes
            .iter()
            .map(|p| {
                ContactPlane::new(
                    finite3(&p.normal, "plane normal")?,
                    finite3(&p.point, "plane point")?,
                    p.activation_margin,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let pressures = c
            .pressures
            .iter()
            .map(|p| {
                if p.schedule.iter().any(|k| !k.1.is_finite()) {
                    return Err(SimError::invalid("pressure schedule", "must be finite"));
                }
                Ok(PressureActuator {
                    triangles: mesh.triangle_set(&p.triangle_set)?.to_vec(),
                    schedule: PiecewiseLinear::new(p.schedule.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let loads = c
            .loads
            .iter()
            .map(|l| {
                let steps = l
                    .steps
                    .iter()
                    .map(|(t, f)| Ok((*t, finite3(f, "load force")?)))
                    .collect::<Result<_>>()?;
                Ok(PointLoad {
                    vertices: mesh.vertex_set(&l.vertex_set)?.to_vec(),
                    force: StepSchedule::new(finite3(&l.force, "load force")?, steps)?,
                    release: l.release,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut phases = vec![Phase {
            start: 0.0,
            scheme: c.integrator,
            damping: c.damping,
        }];
        for p in &c.phases {
            let prev = phases.last().unwrap().start;
            if !(p.start > prev && p.start.is_finite()) {
                return Err(SimError::invalid("phases", "start times must be positive and increasing"));
            }
            let damping = p.damping.unwrap_or(c.damping);
            if !(damping >= 0.0) {
                return Err(SimError::invalid("phases.damping", "must be non-negative"));
            }
            phases.push(Phase {
                start: p.start,
                scheme: p.integrator,
                damping,
            });
        }

        let sc = &c.step_control;
        let control = StepControl {
            dt_init: sc.dt_init,
            dt_min: sc.dt_min,
            dt_max: sc.dt_max,
            cfl_coefficient: sc.cfl_coefficient,
            growth: sc.growth,
            max_retries: sc.max_retries,
            ..StepControl::default()
        };
        control.validate()?;
        let solver = c.solver.options();
        solver.validate()?;

        let mut vertices = Vec::new();
        let mut labels = Vec::new();
        for name in &c.output.marker_sets {
            for &v in mesh.vertex_set(name)? {
                vertices.push(v);
                labels.push(format!("{name}/{v}"));
            }
        }
        if c.output.record_all_vertices {
            for v in 0..mesh.vertex_count() {
                vertices.push(v);
                labels.push(format!("v{v}"));
            }
        }

        Ok(System {
            model,
            pins,
            planes,
            pressures,
            loads,
            activations,
            phases,
            control,
            solver,
            duration: c.duration,
            initial_velocity: finite3(&c.initial_velocity.unwrap_or([0.0; 3]), "initial_velocity")?,
            output: OutputConfig {
                stride: c.output.stride,
                vertices,
                labels,
                record_energies: c.output.record_energies,
            },
            scene_hash: self.hash(),
        })
    }
}
