//! Bundled example scenes built on voxel hexahedral meshes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::energy::{MaterialModel, Scheme};
use crate::error::{Result, SimError};
use crate::io::mesh::MeshFile;
use crate::io::scene::{
    ActivationConfig, LoadConfig, MaterialConfig, MeshSource, MuscleConfig, OutputFileConfig,
    PhaseConfig, PinConfig, PlaneConfig, PressureConfig, SceneConfig, SolverConfig,
    StepControlConfig,
};
use crate::io::SCENE_VERSION;

/// Axis-aligned voxel grid with `n` cells of size `h` starting at `origin`.
///
/// Vertices and cells are numbered with the axis of most cells varying
/// slowest, which keeps the stiffness matrix bandwidth small.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    pub n: [usize; 3],
    pub h: [f64; 3],
    pub origin: [f64; 3],
    order: [usize; 3],
}

/// Hex mesh of the occupied voxels of a grid.
#[derive(Clone, Debug)]
pub struct VoxelMesh {
    pub mesh: MeshFile,
    /// Element index of each occupied cell.
    pub cell_element: BTreeMap<[usize; 3], usize>,
    grid: VoxelGrid,
    vertex_index: BTreeMap<[usize; 3], usize>,
}

impl VoxelGrid {
    pub fn new(n: [usize; 3], h: [f64; 3], origin: [f64; 3]) -> Self {
        let mut order = [0, 1, 2];
        order.sort_by_key(|&a| std::cmp::Reverse(n[a]));
        VoxelGrid { n, h, origin, order }
    }

    fn sort_key(&self, p: [usize; 3]) -> [usize; 3] {
        self.order.map(|a| p[a])
    }

    /// Meshes every cell for which `occupied` holds.
    pub fn mesh(&self, occupied: impl Fn([usize; 3]) -> bool) -> VoxelMesh {
        let mut cells = Vec::new();
        for i in 0..self.n[0] {
            for j in 0..self.n[1] {
                for k in 0..self.n[2] {
                    if occupied([i, j, k]) {
                        cells.push([i, j, k]);
                    }
                }
            }
        }
        cells.sort_by_key(|&c| self.sort_key(c));
        let mut corners: Vec<[usize; 3]> = cells
            .iter()
            .flat_map(|c| hex_corner_offsets().map(|o| [c[0] + o[0], c[1] + o[1], c[2] + o[2]]))
            .collect();
        corners.sort_by_key(|&p| self.sort_key(p));
        corners.dedup();
        let vertex_index: BTreeMap<[usize; 3], usize> =
            corners.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let vertices = corners
            .iter()
            .map(|p| [0, 1, 2].map(|a| self.origin[a] + p[a] as f64 * self.h[a]))
            .collect();
        let hexes = cells
            .iter()
            .map(|c| hex_corner_offsets().map(|o| vertex_index[&[c[0] + o[0], c[1] + o[1], c[2] + o[2]]]))
            .collect();
        let cell_element = cells.iter().enumerate().map(|(e, &c)| (c, e)).collect();
        VoxelMesh {
            mesh: MeshFile {
                vertices,
                hexes,
                ..MeshFile::default()
            },
            cell_element,
            grid: self.clone(),
            vertex_index,
        }
    }
}

fn hex_corner_offsets() -> [[usize; 3]; 8] {
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ]
}

impl VoxelMesh {
    pub fn vertex_at(&self, p: [usize; 3]) -> Option<usize> {
        self.vertex_index.get(&p).copied()
    }

    /// Vertices whose grid coordinates satisfy `pred`, ascending.
    pub fn vertices_where(&self, pred: impl Fn([usize; 3]) -> bool) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .vertex_index
            .iter()
            .filter(|(p, _)| pred(**p))
            .map(|(_, &v)| v)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn elements_where(&self, pred: impl Fn([usize; 3]) -> bool) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .cell_element
            .iter()
            .filter(|(c, _)| pred(**c))
            .map(|(_, &e)| e)
            .collect();
        out.sort_unstable();
        out
    }

    /// Boundary faces as triangles with normals pointing out of the solid.
    /// `outer` selects faces on the grid boundary, otherwise faces towards
    /// empty interior cells.
    pub fn boundary_triangles(&self, outer: bool) -> Vec<[usize; 3]> {
        let n = self.grid.n;
        let mut tris = Vec::new();
        for &c in self.cell_element.keys() {
            for d in 0..3 {
                for s in [-1i64, 1] {
                    let nb = c[d] as i64 + s;
                    let on_grid_boundary = nb < 0 || nb >= n[d] as i64;
                    let empty = on_grid_boundary || {
                        let mut q = c;
                        q[d] = nb as usize;
                        !self.cell_element.contains_key(&q)
                    };
                    if !empty || on_grid_boundary != outer {
                        continue;
                    }
                    let (d1, d2) = ((d + 1) % 3, (d + 2) % 3);
                    let layer = if s > 0 { c[d] + 1 } else { c[d] };
                    let corner = |a: usize, b: usize| {
                        let mut p = c;
                        p[d] = layer;
                        p[d1] += a;
                        p[d2] += b;
                        self.vertex_index[&p]
                    };
                    let mut quad = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    if s < 0 {
                        quad.reverse();
                    }
                    tris.push([quad[0], quad[1], quad[2]]);
                    tris.push([quad[0], quad[2], quad[3]]);
                }
            }
        }
        tris
    }
}

/// Settings of the bundled cantilever: a clamped beam along `x` with a tip
/// load that is released after a backward-Euler settling phase.
#[derive(Clone, Debug, PartialEq)]
pub struct CantileverParams {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub divisions: [usize; 3],
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    /// Damping after release (1/s).
    pub damping: f64,
    /// Damping during the settling phase (1/s).
    pub settle_damping: f64,
    /// Total downward tip load, split over the tip face (N).
    pub tip_load: f64,
    pub release: f64,
    pub duration: f64,
    pub gravity: bool,
    pub dt: f64,
    pub stride: f64,
}

impl Default for CantileverParams {
    fn default() -> Self {
        CantileverParams {
            length: 0.10,
            width: 0.03,
            height: 0.03,
            divisions: [20, 3, 3],
            young_modulus: 234.9e3,
            poisson_ratio: 0.439,
            density: 1210.0,
            damping: 9.11,
            settle_damping: 80.0,
            tip_load: 0.210 * 9.81,
            release: 0.5,
            duration: 1.5,
            gravity: true,
            dt: 5e-3,
            stride: 0.01,
        }
    }
}

fn step_control(dt: f64, cfl: f64) -> StepControlConfig {
    StepControlConfig {
        dt_init: dt,
        dt_max: dt,
        cfl_coefficient: cfl,
        ..StepControlConfig::default()
    }
}

pub fn cantilever_mesh(p: &CantileverParams) -> VoxelMesh {
    let [nx, ny, nz] = p.divisions;
    let grid = VoxelGrid::new(
        p.divisions,
        [p.length / nx as f64, p.width / ny as f64, p.height / nz as f64],
        [0.0; 3],
    );
    let mut vm = grid.mesh(|_| true);
    let clamp = vm.vertices_where(|q| q[0] == 0);
    let tip = vm.vertices_where(|q| q[0] == nx);
    let markers = vm.vertices_where(|q| (q[0] == nx || q[0] == nx / 2) && q[2] == nz && (q[1] == 0 || q[1] == ny));
    let surface = vm.boundary_triangles(true);
    let all = (0..vm.mesh.hexes.len()).collect();
    vm.mesh.vertex_sets = BTreeMap::from([
        ("clamp".to_string(), clamp),
        ("tip".to_string(), tip),
        ("markers".to_string(), markers),
    ]);
    vm.mesh.triangle_sets = BTreeMap::from([("surface".to_string(), surface)]);
    vm.mesh.element_sets = BTreeMap::from([("beam".to_string(), all)]);
    vm
}

pub fn cantilever_scene(p: &CantileverParams) -> SceneConfig {
    let vm = cantilever_mesh(p);
    let tip_count = vm.mesh.vertex_sets["tip"].len() as f64;
    SceneConfig {
        version: SCENE_VERSION.into(),
        mesh: MeshSource::Inline(vm.mesh),
        materials: vec![MaterialConfig {
            element_set: Some("beam".into()),
            model: MaterialModel::NeoHookean,
            young_modulus: p.young_modulus,
            poisson_ratio: p.poisson_ratio,
            density: p.density,
        }],
        gravity: if p.gravity { [0.0, 0.0, -9.81] } else { [0.0; 3] },
        damping: p.settle_damping,
        integrator: Scheme::BackwardEuler,
        phases: vec![PhaseConfig {
            start: p.release,
            integrator: Scheme::CrankNicolson,
            damping: Some(p.damping),
        }],
        step_control: step_control(p.dt, 50.0),
        solver: SolverConfig::default(),
        pins: vec![PinConfig {
            vertex_set: "clamp".into(),
            targets: None,
            motion: None,
        }],
        planes: vec![],
        pressures: vec![],
        loads: vec![LoadConfig {
            vertex_set: "tip".into(),
            force: [0.0, 0.0, -p.tip_load / tip_count],
            steps: vec![],
            release: Some(p.release),
        }],
        muscles: vec![],
        point_masses: vec![],
        duration: p.duration,
        initial_velocity: None,
        output: OutputFileConfig {
            stride: p.stride,
            marker_sets: vec!["markers".into()],
            record_all_vertices: false,
            record_energies: true,
        },
    }
}

/// Settings of the bundled jumping leg: two voxel columns side by side, the
/// dorsal one at `-x` and the ventral one at `+x`, standing on `z = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LegParams {
    pub voxel: f64,
    /// Voxels per column.
    pub height_voxels: usize,
    /// Hexes per voxel edge.
    pub subdivision: usize,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub muscle_stiffness: f64,
    pub damping: f64,
    pub forward_velocity: f64,
    pub duration: f64,
    pub dt: f64,
    pub stride: f64,
    /// `(a_v, a_d, t_v, t_d)`.
    pub actuation: [f64; 4],
}

impl Default for LegParams {
    fn default() -> Self {
        LegParams {
            voxel: 0.05,
            height_voxels: 10,
            subdivision: 1,
            young_modulus: 1.0e6,
            poisson_ratio: 0.3,
            density: 1000.0,
            muscle_stiffness: 3.0e5,
            damping: 0.0,
            forward_velocity: 0.5,
            duration: 1.5,
            dt: 2.5e-3,
            stride: 0.01,
            actuation: [0.69, 1.05, 0.54, 0.27],
        }
    }
}

pub fn leg_mesh(p: &LegParams) -> VoxelMesh {
    let s = p.subdivision;
    let h = p.voxel / s as f64;
    let grid = VoxelGrid::new([2 * s, s, p.height_voxels * s], [h; 3], [0.0; 3]);
    let mut vm = grid.mesh(|_| true);
    let dorsal = vm.elements_where(|c| c[0] < s);
    let ventral = vm.elements_where(|c| c[0] >= s);
    let foot = vm.vertices_where(|q| q[2] == 0);
    let surface = vm.boundary_triangles(true);
    vm.mesh.element_sets = BTreeMap::from([
        ("dorsal".to_string(), dorsal),
        ("ventral".to_string(), ventral),
    ]);
    vm.mesh.vertex_sets = BTreeMap::from([("foot".to_string(), foot)]);
    vm.mesh.triangle_sets = BTreeMap::from([("surface".to_string(), surface)]);
    vm
}

/// Applies `(a_v, a_d, t_v, t_d)`: the ventral group holds `a_v` until
/// `t_v` and then drops to 0; the dorsal group is at 0 until `t_d` and then
/// holds `a_d`.
pub fn set_leg_actuation(scene: &mut SceneConfig, params: [f64; 4]) -> Result<()> {
    let [a_v, a_d, t_v, t_d] = params;
    let mut found = 0;
    for m in &mut scene.muscles {
        match m.element_set.as_str() {
            "ventral" => {
                m.activation = ActivationConfig {
                    initial: a_v,
                    steps: vec![(t_v, 0.0)],
                };
                found += 1;
            }
            "dorsal" => {
                m.activation = ActivationConfig {
                    initial: 0.0,
                    steps: vec![(t_d, a_d)],
                };
                found += 1;
            }
            _ => {}
        }
    }
    if found != 2 {
        return Err(SimError::invalid(
            "leg scene",
            "expected one `ventral` and one `dorsal` muscle group",
        ));
    }
    Ok(())
}

pub fn leg_scene(p: &LegParams) -> SceneConfig {
    let vm = leg_mesh(p);
    let muscle = |set: &str| MuscleConfig {
        element_set: set.into(),
        stiffness: p.muscle_stiffness,
        direction: [0.0, 0.0, 1.0],
        activation: ActivationConfig {
            initial: 0.0,
            steps: vec![],
        },
    };
    let mut scene = SceneConfig {
        version: SCENE_VERSION.into(),
        mesh: MeshSource::Inline(vm.mesh),
        materials: vec![MaterialConfig {
            element_set: None,
            model: MaterialModel::StableNeoHookean,
            young_modulus: p.young_modulus,
            poisson_ratio: p.poisson_ratio,
            density: p.density,
        }],
        gravity: [0.0, 0.0, -9.81],
        damping: p.damping,
        integrator: Scheme::BackwardEuler,
        phases: vec![],
        step_control: step_control(p.dt, 50.0),
        solver: SolverConfig::default(),
        pins: vec![],
        planes: vec![PlaneConfig {
            normal: [0.0, 0.0, 1.0],
            point: [0.0; 3],
            activation_margin: 1e-3,
        }],
        pressures: vec![],
        loads: vec![],
        muscles: vec![muscle("ventral"), muscle("dorsal")],
        point_masses: vec![],
        duration: p.duration,
        initial_velocity: Some([p.forward_velocity, 0.0, 0.0]),
        output: OutputFileConfig {
            stride: p.stride,
            marker_sets: vec![],
            record_all_vertices: true,
            record_energies: true,
        },
    };
    set_leg_actuation(&mut scene, p.actuation).expect("both groups present");
    scene
}

/// A soft cube resting on `z = 0`, poked from above by a moving pin patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PokeCubeParams {
    pub size: f64,
    pub divisions: usize,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub damping: f64,
    /// Maximum indentation of the poke patch (m).
    pub depth: f64,
    pub duration: f64,
    pub dt: f64,
}

impl Default for PokeCubeParams {
    fn default() -> Self {
        PokeCubeParams {
            size: 0.16,
            divisions: 4,
            young_modulus: 20e3,
            poisson_ratio: 0.3,
            density: 200.0,
            damping: 10.0,
            depth: 0.03,
            duration: 1.0,
            dt: 5e-3,
        }
    }
}

pub fn poke_cube_scene(p: &PokeCubeParams) -> SceneConfig {
    let n = p.divisions;
    let h = p.size / n as f64;
    let mut vm = VoxelGrid::new([n; 3], [h; 3], [0.0; 3]).mesh(|_| true);
    let lo = n / 2 - n.div_ceil(4).min(n / 2);
    let hi = n / 2 + n.div_ceil(4).min(n / 2);
    let poke = vm.vertices_where(|q| q[2] == n && (lo..=hi).contains(&q[0]) && (lo..=hi).contains(&q[1]));
    let surface = vm.boundary_triangles(true);
    vm.mesh.vertex_sets = BTreeMap::from([("poke".to_string(), poke)]);
    vm.mesh.triangle_sets = BTreeMap::from([("surface".to_string(), surface)]);
    let t = p.duration;
    SceneConfig {
        version: SCENE_VERSION.into(),
        mesh: MeshSource::Inline(vm.mesh),
        materials: vec![MaterialConfig {
            element_set: None,
            model: MaterialModel::StableNeoHookean,
            young_modulus: p.young_modulus,
            poisson_ratio: p.poisson_ratio,
            density: p.density,
        }],
        gravity: [0.0, 0.0, -9.81],
        damping: p.damping,
        integrator: Scheme::BackwardEuler,
        phases: vec![],
        step_control: step_control(p.dt, 50.0),
        solver: SolverConfig::default(),
        pins: vec![PinConfig {
            vertex_set: "poke".into(),
            targets: None,
            motion: Some(vec![
                (0.0, [0.0; 3]),
                (0.4 * t, [0.0, 0.0, -p.depth]),
                (0.6 * t, [0.0, 0.0, -p.depth]),
                (t, [0.0; 3]),
            ]),
        }],
        planes: vec![PlaneConfig {
            normal: [0.0, 0.0, 1.0],
            point: [0.0; 3],
            activation_margin: 1e-3,
        }],
        pressures: vec![],
        loads: vec![],
        muscles: vec![],
        point_masses: vec![],
        duration: p.duration,
        initial_velocity: None,
        output: OutputFileConfig {
            stride: 0.01,
            marker_sets: vec![],
            record_all_vertices: true,
            record_energies: false,
        },
    }
}

/// A 3x3x3 voxel cube whose center voxel is an internal pressure chamber.
#[derive(Clone, Debug, PartialEq)]
pub struct PressureCubeParams {
    pub size: f64,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub damping: f64,
    pub pressure: f64,
    /// Time over which the pressure ramps up (s).
    pub ramp: f64,
    pub duration: f64,
    pub dt: f64,
}

impl Default for PressureCubeParams {
    fn default() -> Self {
        PressureCubeParams {
            size: 0.06,
            young_modulus: 346.5e3,
            poisson_ratio: 0.358,
            density: 1167.0,
            damping: 20.0,
            pressure: 60e3,
            ramp: 0.05,
            duration: 0.25,
            dt: 2e-3,
        }
    }
}

pub fn pressure_cube_scene(p: &PressureCubeParams) -> SceneConfig {
    let h = p.size / 3.0;
    let mut vm = VoxelGrid::new([3; 3], [h; 3], [0.0; 3]).mesh(|c| c != [1, 1, 1]);
    let chamber = vm.boundary_triangles(false);
    let surface = vm.boundary_triangles(true);
    vm.mesh.triangle_sets = BTreeMap::from([
        ("chamber".to_string(), chamber),
        ("surface".to_string(), surface),
    ]);
    SceneConfig {
        version: SCENE_VERSION.into(),
        mesh: MeshSource::Inline(vm.mesh),
        materials: vec![MaterialConfig {
            element_set: None,
            model: MaterialModel::NeoHookean,
            young_modulus: p.young_modulus,
            poisson_ratio: p.poisson_ratio,
            density: p.density,
        }],
        gravity: [0.0; 3],
        damping: p.damping,
        integrator: Scheme::BackwardEuler,
        phases: vec![],
        step_control: step_control(p.dt, 50.0),
        solver: SolverConfig::default(),
        pins: vec![],
        planes: vec![],
        pressures: vec![PressureConfig {
            triangle_set: "chamber".into(),
            schedule: vec![(0.0, 0.0), (p.ramp, p.pressure)],
        }],
        loads: vec![],
        muscles: vec![],
        point_masses: vec![],
        duration: p.duration,
        initial_velocity: None,
        output: OutputFileConfig {
            stride: 0.01,
            marker_sets: vec![],
            record_all_vertices: true,
            record_energies: true,
        },
    }
}

/// Names and configurations of every bundled scene.
pub fn bundled() -> Vec<(&'static str, SceneConfig)> {
    vec![
        ("cantilever", cantilever_scene(&CantileverParams::default())),
        ("poke-cube", poke_cube_scene(&PokeCubeParams::default())),
        ("leg", leg_scene(&LegParams::default())),
        ("pressure-cube", pressure_cube_scene(&PressureCubeParams::default())),
    ]
}

/// Writes `<name>.scene.json` and `<name>.mesh.json` for every bundled scene.
pub fn write_bundled(dir: &Path) -> Result<Vec<PathBuf>> {
    let io_err = |path: &Path, source| SimError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    for (name, mut scene) in bundled() {
        let mesh_name = format!("{name}.mesh.json");
        if let MeshSource::Inline(mesh) = &scene.mesh {
            let path = dir.join(&mesh_name);
            let text = serde_json::to_string_pretty(mesh).expect("mesh serializes");
            std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        }
        scene.mesh = MeshSource::Path(mesh_name);
        let path = dir.join(format!("{name}.scene.json"));
        let text = serde_json::to_string_pretty(&scene).expect("scene serializes");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
