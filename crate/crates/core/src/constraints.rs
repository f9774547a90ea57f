//! Pinned vertices (equalities) and half-space contact (inequalities).

use nalgebra::{DVector, Vector3};

use crate::error::{Result, SimError};
use crate::mesh::vertex;

pub const DEFAULT_ACTIVATION_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinConstraint {
    pub vertex: usize,
    pub target: Vector3<f64>,
}

/// Half-space `n . (x - p) >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPlane {
    pub normal: Vector3<f64>,
    pub point: Vector3<f64>,
    /// Pairs closer than this are added to the QP.
    pub activation_margin: f64,
}

impl ContactPlane {
    pub fn new(normal: Vector3<f64>, point: Vector3<f64>, activation_margin: f64) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-9 {
            return Err(SimError::invalid("plane normal", "must be a unit vector"));
        }
        if activation_margin.is_nan() || activation_margin < 0.0 {
            return Err(SimError::invalid("activation_margin", "must be non-negative"));
        }
        Ok(ContactPlane {
            normal,
            point,
            activation_margin,
        })
    }
}

/// Signed distance of a point to the plane.
pub fn plane_gap(x: &Vector3<f64>, plane: &ContactPlane) -> f64 {
    plane.normal.dot(&(x - plane.point))
}

/// All `(vertex, plane)` pairs with gap below the plane's activation margin,
/// ordered by vertex index, then plane index.
pub fn detect_active(positions: &DVector<f64>, planes: &[ContactPlane]) -> Vec<(usize, usize)> {
    let all: Vec<usize> = (0..positions.len() / 3).collect();
    detect_active_among(positions, planes, &all)
}

/// Same as [`detect_active`] restricted to `candidates` (assumed sorted).
pub fn detect_active_among(
    positions: &DVector<f64>,
    planes: &[ContactPlane],
    candidates: &[usize],
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &v in candidates {
        let x = vertex(positions, v);
        for (k, plane) in planes.iter().enumerate() {
            if plane_gap(&x, plane) < plane.activation_margin {
                out.push((v, k));
            }
        }
    }
    out
}

/// Sparse constraint row as `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// Constraint values and Jacobians at a point:
/// `J_f dx + f = 0` and `J_h dx + h >= 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintSet {
    pub eq_rows: Vec<SparseRow>,
    pub eq_residual: DVector<f64>,
    /// `(vertex, axis)` of each equality row.
    pub eq_labels: Vec<(usize, usize)>,
    pub ineq_rows: Vec<SparseRow>,
    pub ineq_residual: DVector<f64>,
    /// `(vertex, plane)` of each inequality row.
    pub ineq_pairs: Vec<(usize, usize)>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.eq_rows.is_empty() && self.ineq_rows.is_empty()
    }
}

pub fn linearize(
    pins: &[PinConstraint],
    planes: &[ContactPlane],
    active: &[(usize, usize)],
    x: &DVector<f64>,
) -> ConstraintSet {
    let mut eq_rows = Vec::with_capacity(3 * pins.len());
    let mut eq_res = Vec::with_capacity(3 * pins.len());
    let mut eq_labels = Vec::with_capacity(3 * pins.len());
    for pin in pins {
        for axis in 0..3 {
            let col = 3 * pin.vertex + axis;
            eq_rows.push(vec![(col, 1.0)]);
            eq_res.push(x[col] - pin.target[axis]);
            eq_labels.push((pin.vertex, axis));
        }
    }
    let mut ineq_rows = Vec::with_capacity(active.len());
    let mut ineq_res = Vec::with_capacity(active.len());
    for &(v, k) in active {
        let plane = &planes[k];
        ineq_rows.push((0..3).map(|c| (3 * v + c, plane.normal[c])).collect());
        ineq_res.push(plane_gap(&vertex(x, v), plane));
    }
    ConstraintSet {
        eq_rows,
        eq_residual: DVector::from_vec(eq_res),
        eq_labels,
        ineq_rows,
        ineq_residual: DVector::from_vec(ineq_res),
        ineq_pairs: active.to_vec(),
    }
}

/// Pins plus contact planes, with the vertices eligible for contact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraints {
    pub pins: Vec<PinConstraint>,
    pub planes: Vec<ContactPlane>,
    /// Sorted vertex indices tested against the planes.
    pub contact_vertices: Vec<usize>,
}

impl Constraints {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    /// Contact candidates are all vertices that are not pinned.
    pub fn new(pins: Vec<PinConstraint>, planes: Vec<ContactPlane>, vertex_count: usize) -> Self {
        let mut pinned = vec![false; vertex_count];
        for p in &pins {
            pinned[p.vertex] = true;
        }
        let contact_vertices = if planes.is_empty() {
            Vec::new()
        } else {
            (0..vertex_count).filter(|&v| !pinned[v]).collect()
        };
        Constraints {
            pins,
            planes,
            contact_vertices,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pins.is_empty() && (self.planes.is_empty() || self.contact_vertices.is_empty())
    }

    pub fn detect(&self, x: &DVector<f64>) -> Vec<(usize, usize)> {
        detect_active_among(x, &self.planes, &self.contact_vertices)
    }

    /// `sum |x_i - target|` over all pinned coordinates.
    pub fn equality_violation(&self, x: &DVector<f64>) -> f64 {
        self.pins
            .iter()
            .map(|p| (vertex(x, p.vertex) - p.target).abs().sum())
            .sum()
    }

    /// `sum |min(h, 0)|` over every candidate pair.
    pub fn penetration_sum(&self, x: &DVector<f64>) -> f64 {
        self.fold_gaps(x, 0.0, |acc, g| acc + (-g).max(0.0))
    }

    /// Smallest gap over every candidate pair (`+inf` without contact).
    pub fn min_gap(&self, x: &DVector<f64>) -> f64 {
        self.fold_gaps(x, f64::INFINITY, f64::min)
    }

    /// Pairs whose gap is below `-tolerance`.
    pub fn violations(&self, x: &DVector<f64>, tolerance: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &v in &self.contact_vertices {
            let p = vertex(x, v);
            for (k, plane) in self.planes.iter().enumerate() {
                if plane_gap(&p, plane) < -tolerance {
                    out.push((v, k));
                }
            }
        }
        out
    }

    fn fold_gaps(&self, x: &DVector<f64>, init: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut acc = init;
        for &v in &self.contact_vertices {
            let p = vertex(x, v);
            for plane in &self.planes {
                acc = f(acc, plane_gap(&p, plane));
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn floor(margin: f64) -> ContactPlane {
        ContactPlane::new(Vector3::z(), Vector3::zeros(), margin).unwrap()
    }

    #[test]
    fn gap_examples() {
        let p = floor(1e-3);
        assert_eq!(plane_gap(&Vector3::new(1.0, 2.0, 3.0), &p), 3.0);
        assert_eq!(plane_gap(&Vector3::new(4.0, -1.0, 0.0), &p), 0.0);
        assert_eq!(plane_gap(&Vector3::new(0.0, 0.0, -0.1), &p), -0.1);
    }

    #[test]
    fn non_unit_normal_rejected() {
        assert!(ContactPlane::new(Vector3::new(0.0, 0.0, 2.0), Vector3::zeros(), 0.0).is_err());
    }

    #[test]
    fn detection_examples() {
        let x = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0, -0.01, 5.0, 0.0, 2.0]);
        assert!(detect_active(&DVector::from_vec(vec![0.0, 0.0, 1.0]), &[floor(1e-3)]).is_empty());
        assert_eq!(detect_active(&x, &[floor(1e-3)]), vec![(1, 0)]);
        assert_eq!(
            detect_active(&x, &[floor(f64::INFINITY)]),
            vec![(0, 0), (1, 0), (2, 0)]
        );
    }

    #[test]
    fn linearization_rows() {
        let pins = [PinConstraint {
            vertex: 0,
            target: Vector3::new(0.0, 0.0, 1.0),
        }];
        let x = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0, -0.1]);
        let set = linearize(&pins, &[floor(1e-3)], &[(1, 0)], &x);
        assert_eq!(set.eq_residual, DVector::zeros(3));
        assert_eq!(set.ineq_rows[0], vec![(3, 0.0), (4, 0.0), (5, 1.0)]);
        assert!((set.ineq_residual[0] + 0.1).abs() < 1e-15);
        // J_h dx + h >= 0 with dx_z = 0.1 is exactly on the boundary
        let dz: f64 = 0.1;
        assert!((dz * 1.0 + set.ineq_residual[0]).abs() < 1e-15);
    }

    #[test]
    fn pinned_vertices_excluded_from_contact() {
        let pins = vec![PinConstraint {
            vertex: 1,
            target: Vector3::zeros(),
        }];
        let c = Constraints::new(pins, vec![floor(1e-3)], 3);
        assert_eq!(c.contact_vertices, vec![0, 2]);
    }
}
