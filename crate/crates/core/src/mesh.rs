//! Mesh topology, rest-state precomputation and per-element kinematics.
//!
//! Elements are numbered globally with all tetrahedra first, followed by all
//! hexahedra. Element sets refer to this global numbering.
//!
//! Deformation gradients are flattened row-major (`k = 3 * row + col`), and
//! element nodal coordinates are stacked node by node (`i = 3 * node + axis`).

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Result, SimError};

/// Reference coordinates of the eight hexahedron corners, VTK ordering.
pub const HEX_CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    Tet4,
    Hex8,
}

impl ElementKind {
    pub fn node_count(self) -> usize {
        match self {
            ElementKind::Tet4 => 4,
            ElementKind::Hex8 => 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeshModel {
    pub vertices: Vec<Vector3<f64>>,
    pub tets: Vec<[usize; 4]>,
    pub hexes: Vec<[usize; 8]>,
    pub vertex_sets: BTreeMap<String, Vec<usize>>,
    pub triangle_sets: BTreeMap<String, Vec<[usize; 3]>>,
    pub element_sets: BTreeMap<String, Vec<usize>>,
    /// Tetrahedra whose node order was swapped at load to restore positive orientation.
    pub reordered_tets: Vec<usize>,
}

impl MeshModel {
    /// Validates topology and repairs negatively oriented tetrahedra.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        tets: Vec<[usize; 4]>,
        hexes: Vec<[usize; 8]>,
        vertex_sets: BTreeMap<String, Vec<usize>>,
        triangle_sets: BTreeMap<String, Vec<[usize; 3]>>,
        element_sets: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        let mut mesh = MeshModel {
            vertices,
            tets,
            hexes,
            vertex_sets,
            triangle_sets,
            element_sets,
            reordered_tets: Vec::new(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&mut self) -> Result<()> {
        let nv = self.vertices.len();
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(SimError::NonFinite("mesh vertices"));
        }
        let n_tets = self.tets.len();
        for e in 0..self.element_count() {
            let nodes = self.element_nodes(e);
            for (a, &i) in nodes.iter().enumerate() {
                if i >= nv {
                    return Err(SimError::IndexOutOfRange {
                        what: "element vertex",
                        index: i,
                        len: nv,
                    });
                }
                if nodes[..a].contains(&i) {
                    return Err(SimError::DegenerateElement {
                        element: e,
                        reason: format!("vertex {i} repeated"),
                    });
                }
            }
        }
        for e in 0..n_tets {
            let det = tet_shape_matrix(&self.vertices, &self.tets[e]).determinant();
            if det.abs() <= f64::EPSILON * self.tet_scale(e).powi(3) {
                return Err(SimError::DegenerateElement {
                    element: e,
                    reason: "zero rest volume".into(),
                });
            }
            if det < 0.0 {
                self.tets[e].swap(2, 3);
                self.reordered_tets.push(e);
                log::warn!("tet {e} had negative orientation; swapped nodes 2 and 3");
            }
        }
        for (h, hex) in self.hexes.iter().enumerate() {
            let x = hex.map(|i| self.vertices[i]);
            for gp in gauss_points_2x2x2() {
                let (_, jac) = hex_reference_jacobian(&x, &gp);
                if jac.determinant() <= 0.0 {
                    return Err(SimError::DegenerateElement {
                        element: n_tets + h,
                        reason: "non-positive Jacobian at a quadrature point".into(),
                    });
                }
            }
        }
        for indices in self.vertex_sets.values() {
            if let Some(&i) = indices.iter().find(|&&i| i >= nv) {
                return Err(SimError::IndexOutOfRange {
                    what: "vertex set entry",
                    index: i,
                    len: nv,
                });
            }
        }
        let ne = self.element_count();
        for indices in self.element_sets.values() {
            if let Some(&i) = indices.iter().find(|&&i| i >= ne) {
                return Err(SimError::IndexOutOfRange {
                    what: "element set entry",
                    index: i,
                    len: ne,
                });
            }
        }
        for (name, tris) in &self.triangle_sets {
            for tri in tris {
                if let Some(&i) = tri.iter().find(|&&i| i >= nv) {
                    return Err(SimError::IndexOutOfRange {
                        what: "triangle vertex",
                        index: i,
                        len: nv,
                    });
                }
            }
            check_closed_orientation(name, tris, &self.vertices)?;
        }
        Ok(())
    }

    fn tet_scale(&self, e: usize) -> f64 {
        let t = &self.tets[e];
        let mut h: f64 = 0.0;
        for a in 0..4 {
            for b in a + 1..4 {
                h = h.max((self.vertices[t[a]] - self.vertices[t[b]]).norm());
            }
        }
        h
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn dof_count(&self) -> usize {
        3 * self.vertices.len()
    }

    pub fn element_count(&self) -> usize {
        self.tets.len() + self.hexes.len()
    }

    pub fn element_kind(&self, e: usize) -> ElementKind {
        if e < self.tets.len() {
            ElementKind::Tet4
        } else {
            ElementKind::Hex8
        }
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        if e < self.tets.len() {
            &self.tets[e]
        } else {
            &self.hexes[e - self.tets.len()]
        }
    }

    /// Rest positions stacked as one DoF vector.
    pub fn rest_positions(&self) -> nalgebra::DVector<f64> {
        stack(&self.vertices)
    }

    pub fn vertex_set(&self, name: &str) -> Result<&[usize]> {
        self.vertex_sets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| SimError::UnknownSet {
                kind: "vertex",
                name: name.to_string(),
            })
    }

    pub fn triangle_set(&self, name: &str) -> Result<&[[usize; 3]]> {
        self.triangle_sets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| SimError::UnknownSet {
                kind: "triangle",
                name: name.to_string(),
            })
    }

    pub fn element_set(&self, name: &str) -> Result<&[usize]> {
        self.element_sets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| SimError::UnknownSet {
                kind: "element",
                name: name.to_string(),
            })
    }

    /// Smallest rest edge length of an element (all node pairs for tets, the
    /// twelve cube edges for hexes).
    pub fn min_edge_length(&self, e: usize) -> f64 {
        let nodes = self.element_nodes(e);
        let pairs: &[(usize, usize)] = match self.element_kind(e) {
            ElementKind::Tet4 => &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
            ElementKind::Hex8 => &[
                (0, 1),
                (1, 2),
                (2, 3),
                (3, 0),
                (4, 5),
                (5, 6),
                (6, 7),
                (7, 4),
                (0, 4),
                (1, 5),
                (2, 6),
                (3, 7),
            ],
        };
        pairs
            .iter()
            .map(|&(a, b)| (self.vertices[nodes[a]] - self.vertices[nodes[b]]).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

/// A closed triangle set (every edge shared by exactly two triangles) must be
/// consistently oriented: each edge is traversed once in each direction and
/// the area-weighted normals cancel.
fn check_closed_orientation(
    name: &str,
    tris: &[[usize; 3]],
    vertices: &[Vector3<f64>],
) -> Result<()> {
    let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for t in tris {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *undirected.entry((a.min(b), a.max(b))).or_default() += 1;
            *directed.entry((a, b)).or_default() += 1;
        }
    }
    let closed = !tris.is_empty() && undirected.values().all(|&c| c == 2);
    if !closed {
        return Ok(());
    }
    let schema_err = |message: String| SimError::Schema {
        pointer: format!("/triangle_sets/{name}"),
        message,
    };
    if directed.values().any(|&c| c != 1) {
        return Err(schema_err(
            "closed triangle set is not consistently oriented".into(),
        ));
    }
    let mut sum = Vector3::zeros();
    let mut area = 0.0;
    for t in tris {
        let n = surface_normal(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
        sum += n;
        area += n.norm();
    }
    if sum.norm() >= 1e-9 * area {
        return Err(schema_err(format!(
            "closed triangle set normals do not cancel (|sum| = {:e}, area = {:e})",
            sum.norm(),
            area
        )));
    }
    Ok(())
}

/// Area-weighted triangle normal `(x1 - x0) x (x2 - x0) / 2`.
pub fn surface_normal(x0: &Vector3<f64>, x1: &Vector3<f64>, x2: &Vector3<f64>) -> Vector3<f64> {
    0.5 * (x1 - x0).cross(&(x2 - x0))
}

/// Volume enclosed by a closed, outward-oriented triangle set.
pub fn enclosed_volume(triangles: &[[usize; 3]], x: &nalgebra::DVector<f64>) -> f64 {
    triangles
        .iter()
        .map(|t| vertex(x, t[0]).dot(&vertex(x, t[1]).cross(&vertex(x, t[2]))) / 6.0)
        .sum()
}

pub fn stack(points: &[Vector3<f64>]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_iterator(points.len() * 3, points.iter().flat_map(|p| p.iter().copied()))
}

/// Position of vertex `v` in a stacked DoF vector.
pub fn vertex(x: &nalgebra::DVector<f64>, v: usize) -> Vector3<f64> {
    Vector3::new(x[3 * v], x[3 * v + 1], x[3 * v + 2])
}

fn tet_shape_matrix(vertices: &[Vector3<f64>], tet: &[usize; 4]) -> Matrix3<f64> {
    let x0 = vertices[tet[0]];
    Matrix3::from_columns(&[
        vertices[tet[1]] - x0,
        vertices[tet[2]] - x0,
        vertices[tet[3]] - x0,
    ])
}

pub fn gauss_points_2x2x2() -> [[f64; 3]; 8] {
    let g = 1.0 / 3f64.sqrt();
    HEX_CORNERS.map(|c| [c[0] * g, c[1] * g, c[2] * g])
}

/// Trilinear shape-function derivatives with respect to reference coordinates.
fn hex_reference_gradients(xi: &[f64; 3]) -> [Vector3<f64>; 8] {
    HEX_CORNERS.map(|c| {
        let s = [1.0 + c[0] * xi[0], 1.0 + c[1] * xi[1], 1.0 + c[2] * xi[2]];
        Vector3::new(
            0.125 * c[0] * s[1] * s[2],
            0.125 * s[0] * c[1] * s[2],
            0.125 * s[0] * s[1] * c[2],
        )
    })
}

/// Returns reference gradients and `J = dX/dxi` at a reference point.
fn hex_reference_jacobian(x: &[Vector3<f64>; 8], xi: &[f64; 3]) -> ([Vector3<f64>; 8], Matrix3<f64>) {
    let grads = hex_reference_gradients(xi);
    let mut jac = Matrix3::zeros();
    for (xa, ga) in x.iter().zip(&grads) {
        jac += xa * ga.transpose();
    }
    (grads, jac)
}

/// One integration point of an element.
#[derive(Clone, Debug)]
pub struct QuadraturePoint {
    /// Integration weight in m^3 (the full rest volume for a tet).
    pub weight: f64,
    /// Inverse of the reference map: `D_m^-1` for tets, `(dX/dxi)^-1` for hexes.
    pub reference_inverse: Matrix3<f64>,
    /// Material gradients of the nodal shape functions.
    pub shape_gradients: Vec<Vector3<f64>>,
    /// `dF_k / dx_i`, a 9 x 3n matrix (the deformation Hessian).
    pub dfdx: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct ElementRest {
    pub kind: ElementKind,
    pub volume: f64,
    pub quadrature: Vec<QuadraturePoint>,
}

#[derive(Clone, Debug)]
pub struct RestData {
    pub elements: Vec<ElementRest>,
    /// Lumped mass per vertex (kg).
    pub masses: Vec<f64>,
}

impl RestData {
    /// Per-DoF diagonal of the lumped mass matrix.
    pub fn mass_diagonal(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            3 * self.masses.len(),
            self.masses.iter().flat_map(|&m| [m, m, m]),
        )
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

fn deformation_hessian(shape_gradients: &[Vector3<f64>]) -> DMatrix<f64> {
    let n = shape_gradients.len();
    let mut b = DMatrix::zeros(9, 3 * n);
    for (a, grad) in shape_gradients.iter().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                b[(3 * i + j, 3 * a + i)] = grad[j];
            }
        }
    }
    b
}

/// Precomputes reference-shape inverses, volumes, deformation Hessians and
/// lumped vertex masses. `densities` holds one value per element (kg/m^3).
pub fn rest_precompute(mesh: &MeshModel, densities: &[f64]) -> Result<RestData> {
    let ne = mesh.element_count();
    if densities.len() != ne {
        return Err(SimError::DimensionMismatch {
            what: "element densities",
            expected: ne,
            found: densities.len(),
        });
    }
    if let Some((e, rho)) = densities
        .iter()
        .enumerate()
        .find(|(_, &rho)| !(rho > 0.0 && rho.is_finite()))
    {
        return Err(SimError::invalid(
            format!("density[{e}]"),
            format!("must be positive, got {rho}"),
        ));
    }
    let mut masses = vec![0.0; mesh.vertex_count()];
    let mut elements = Vec::with_capacity(ne);
    for (e, &density) in densities.iter().enumerate() {
        let nodes = mesh.element_nodes(e);
        let rest = match mesh.element_kind(e) {
            ElementKind::Tet4 => {
                let tet = [nodes[0], nodes[1], nodes[2], nodes[3]];
                let dm = tet_shape_matrix(&mesh.vertices, &tet);
                let det = dm.determinant();
                let dm_inv = dm.try_inverse().filter(|_| det > 0.0).ok_or_else(|| {
                    SimError::DegenerateElement {
                        element: e,
                        reason: "singular reference shape matrix".into(),
                    }
                })?;
                // Rows of D_m^-1 are the gradients of N1..N3; N0 takes the negative sum.
                let r: Vec<Vector3<f64>> = (0..3).map(|k| dm_inv.row(k).transpose()).collect();
                let grads = vec![-(r[0] + r[1] + r[2]), r[0], r[1], r[2]];
                let volume = det / 6.0;
                ElementRest {
                    kind: ElementKind::Tet4,
                    volume,
                    quadrature: vec![QuadraturePoint {
                        weight: volume,
                        reference_inverse: dm_inv,
                        dfdx: deformation_hessian(&grads),
                        shape_gradients: grads,
                    }],
                }
            }
            ElementKind::Hex8 => {
                let x: [Vector3<f64>; 8] = std::array::from_fn(|a| mesh.vertices[nodes[a]]);
                let mut quadrature = Vec::with_capacity(8);
                let mut volume = 0.0;
                for gp in gauss_points_2x2x2() {
                    let (ref_grads, jac) = hex_reference_jacobian(&x, &gp);
                    let det = jac.determinant();
                    let jac_inv = jac.try_inverse().filter(|_| det > 0.0).ok_or_else(|| {
                        SimError::DegenerateElement {
                            element: e,
                            reason: "singular hexahedron Jacobian".into(),
                        }
                    })?;
                    let grads: Vec<Vector3<f64>> =
                        ref_grads.iter().map(|g| jac_inv.transpose() * g).collect();
                    volume += det;
                    quadrature.push(QuadraturePoint {
                        weight: det,
                        reference_inverse: jac_inv,
                        dfdx: deformation_hessian(&grads),
                        shape_gradients: grads,
                    });
                }
                ElementRest {
                    kind: ElementKind::Hex8,
                    volume,
                    quadrature,
                }
            }
        };
        let share = density * rest.volume / nodes.len() as f64;
        for &v in nodes {
            masses[v] += share;
        }
        elements.push(rest);
    }
    Ok(RestData { elements, masses })
}

/// Gathers the stacked nodal coordinates of element `e`.
pub fn element_positions(mesh: &MeshModel, e: usize, x: &nalgebra::DVector<f64>) -> Vec<Vector3<f64>> {
    mesh.element_nodes(e).iter().map(|&v| vertex(x, v)).collect()
}

/// Deformation gradient at every quadrature point of an element.
pub fn deformation_gradient(rest: &ElementRest, nodes: &[Vector3<f64>]) -> Vec<Matrix3<f64>> {
    match rest.kind {
        ElementKind::Tet4 => {
            let ds = Matrix3::from_columns(&[
                nodes[1] - nodes[0],
                nodes[2] - nodes[0],
                nodes[3] - nodes[0],
            ]);
            vec![ds * rest.quadrature[0].reference_inverse]
        }
        ElementKind::Hex8 => rest
            .quadrature
            .iter()
            .map(|qp| {
                let mut f = Matrix3::zeros();
                for (xa, ga) in nodes.iter().zip(&qp.shape_gradients) {
                    f += xa * ga.transpose();
                }
                f
            })
            .collect(),
    }
}
