use nalgebra::{DMatrix, DVector, Vector3};
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rayon::prelude::*;

use super::elastic::{muscle_density, neo_hookean_density, stable_neo_hookean_density};
use super::system::{damping_potential, gravity, inertia_potential, IntegratorContext};
use super::{elastic, EnergyEval, Material, MaterialModel};
use crate::error::{Result, SimError};
use crate::mesh::{self, rest_precompute, MeshModel, RestData};
use crate::solver::project_psd;

/// A muscle group: elements sharing a stiffness and fiber direction.
#[derive(Clone, Debug, PartialEq)]
pub struct MuscleBinding {
    pub elements: Vec<usize>,
    pub stiffness: f64,
    pub direction: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub elastic: f64,
    pub muscle: f64,
    pub gravity: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.elastic + self.muscle + self.gravity
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HessianOptions {
    /// Clamp each element's elastic Hessian to be positive semidefinite.
    pub project: bool,
    pub psd_floor: f64,
}

impl Default for HessianOptions {
    fn default() -> Self {
        HessianOptions {
            project: true,
            psd_floor: 0.0,
        }
    }
}

/// COO triplets for a symmetric matrix; every diagonal entry is present.
#[derive(Clone, Debug)]
pub struct Triplets {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Triplets {
            n,
            rows: (0..n).collect(),
            cols: (0..n).collect(),
            vals: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        self.rows.push(i);
        self.cols.push(j);
        self.vals.push(v);
    }

    pub fn add_diagonal(&mut self, diag: &DVector<f64>, scale: f64) {
        for (i, d) in diag.iter().enumerate() {
            self.vals[i] += scale * d;
        }
    }

    /// Adds a dense element block at the given global DoF indices.
    pub fn add_block(&mut self, dofs: &[usize], block: &DMatrix<f64>, scale: f64) {
        for (a, &i) in dofs.iter().enumerate() {
            for (b, &j) in dofs.iter().enumerate() {
                let v = block[(a, b)];
                if v != 0.0 {
                    self.push(i, j, scale * v);
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.vals {
            *v *= s;
        }
    }

    pub fn to_csc(&self) -> CscMatrix<f64> {
        let coo = CooMatrix::try_from_triplets(
            self.n,
            self.n,
            self.rows.clone(),
            self.cols.clone(),
            self.vals.clone(),
        )
        .expect("triplet indices are in range");
        CscMatrix::from(&coo)
    }
}

/// Internal energies (elastic, muscle, gravity) with derivatives.
#[derive(Clone, Debug)]
pub struct InternalEval {
    pub breakdown: EnergyBreakdown,
    pub gradient: DVector<f64>,
    pub hessian: Option<Triplets>,
}

impl InternalEval {
    pub fn value(&self) -> f64 {
        self.breakdown.total()
    }
}

/// Fully assembled incremental potential.
#[derive(Clone, Debug)]
pub struct Assembly {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: CscMatrix<f64>,
    pub breakdown: EnergyBreakdown,
}

/// Mesh, rest data and the per-element physics needed to evaluate internal energies.
#[derive(Clone, Debug)]
pub struct EnergyModel {
    pub mesh: MeshModel,
    pub rest: RestData,
    pub materials: Vec<Material>,
    /// Index into `materials` for every element.
    pub element_material: Vec<usize>,
    pub muscles: Vec<MuscleBinding>,
    pub gravity: Vector3<f64>,
    element_muscles: Vec<Vec<usize>>,
}

struct ElementContribution {
    elastic: f64,
    muscle: f64,
    gradient: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
}

impl EnergyModel {
    /// `point_masses` are added on top of the lumped element masses.
    pub fn new(
        mesh: MeshModel,
        materials: Vec<Material>,
        element_material: Vec<usize>,
        muscles: Vec<MuscleBinding>,
        gravity: Vector3<f64>,
        point_masses: &[(usize, f64)],
    ) -> Result<Self> {
        let ne = mesh.element_count();
        if element_material.len() != ne {
            return Err(SimError::DimensionMismatch {
                what: "element material map",
                expected: ne,
                found: element_material.len(),
            });
        }
        if let Some(&m) = element_material.iter().find(|&&m| m >= materials.len()) {
            return Err(SimError::IndexOutOfRange {
                what: "material",
                index: m,
                len: materials.len(),
            });
        }
        let densities: Vec<f64> = element_material.iter().map(|&m| materials[m].density).collect();
        let mut rest = rest_precompute(&mesh, &densities)?;
        for &(v, m) in point_masses {
            if v >= mesh.vertex_count() {
                return Err(SimError::IndexOutOfRange {
                    what: "point mass vertex",
                    index: v,
                    len: mesh.vertex_count(),
                });
            }
            if !(m >= 0.0 && m.is_finite()) {
                return Err(SimError::invalid("point mass", format!("must be non-negative, got {m}")));
            }
            rest.masses[v] += m;
        }
        let mut element_muscles = vec![Vec::new(); ne];
        for (k, muscle) in muscles.iter().enumerate() {
            if (muscle.direction.norm() - 1.0).abs() > 1e-9 {
                return Err(SimError::invalid("muscle direction", "must be a unit vector"));
            }
            if !(muscle.stiffness >= 0.0) {
                return Err(SimError::invalid("muscle stiffness", "must be non-negative"));
            }
            for &e in &muscle.elements {
                if e >= ne {
                    return Err(SimError::IndexOutOfRange {
                        what: "muscle element",
                        index: e,
                        len: ne,
                    });
                }
                element_muscles[e].push(k);
            }
        }
        Ok(EnergyModel {
            mesh,
            rest,
            materials,
            element_material,
            muscles,
            gravity,
            element_muscles,
        })
    }

    pub fn dof_count(&self) -> usize {
        self.mesh.dof_count()
    }

    pub fn mass_diagonal(&self) -> DVector<f64> {
        self.rest.mass_diagonal()
    }

    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        self.mesh
            .element_nodes(e)
            .iter()
            .flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2])
            .collect()
    }

    /// Elastic-only element evaluation at every quadrature point, without projection.
    pub fn elastic_element(&self, e: usize, x: &DVector<f64>) -> Result<EnergyEval> {
        let material = &self.materials[self.element_material[e]];
        let rest = &self.rest.elements[e];
        let nodes = mesh::element_positions(&self.mesh, e, x);
        let mut total = EnergyEval::zeros(3 * nodes.len());
        for (f, qp) in mesh::deformation_gradient(rest, &nodes).iter().zip(&rest.quadrature) {
            let eval = match material.model {
                MaterialModel::NeoHookean => {
                    elastic::neo_hookean(f, &qp.dfdx, material.mu, material.lambda, qp.weight)
                        .map_err(|inv| SimError::Inversion {
                            element: e,
                            det: inv.det,
                        })?
                }
                MaterialModel::StableNeoHookean => {
                    elastic::stable_neo_hookean(f, &qp.dfdx, material.mu, material.lambda, qp.weight)
                }
            };
            total += &eval;
        }
        Ok(total)
    }

    /// Muscle-only element evaluation summed over all muscle groups containing `e`.
    pub fn muscle_element(&self, e: usize, x: &DVector<f64>, activations: &[f64]) -> EnergyEval {
        let rest = &self.rest.elements[e];
        let nodes = mesh::element_positions(&self.mesh, e, x);
        let mut total = EnergyEval::zeros(3 * nodes.len());
        if self.element_muscles[e].is_empty() {
            return total;
        }
        let fs = mesh::deformation_gradient(rest, &nodes);
        for &k in &self.element_muscles[e] {
            let m = &self.muscles[k];
            for (f, qp) in fs.iter().zip(&rest.quadrature) {
                total += &elastic::muscle(f, &qp.dfdx, activations[k], &m.direction, m.stiffness, qp.weight);
            }
        }
        total
    }

    fn element_contribution(
        &self,
        e: usize,
        x: &DVector<f64>,
        activations: &[f64],
        hessian: Option<HessianOptions>,
    ) -> Result<ElementContribution> {
        let elastic = self.elastic_element(e, x)?;
        let muscle = self.muscle_element(e, x, activations);
        let hessian = hessian.map(|opts| {
            let mut h = if opts.project {
                project_psd(&elastic.hessian, opts.psd_floor)
            } else {
                elastic.hessian.clone()
            };
            h += &muscle.hessian;
            h
        });
        Ok(ElementContribution {
            elastic: elastic.value,
            muscle: muscle.value,
            gradient: elastic.gradient + muscle.gradient,
            hessian,
        })
    }

    fn element_values(&self, e: usize, x: &DVector<f64>, activations: &[f64]) -> Result<(f64, f64)> {
        let material = &self.materials[self.element_material[e]];
        let rest = &self.rest.elements[e];
        let nodes = mesh::element_positions(&self.mesh, e, x);
        let (mut el, mut mu) = (0.0, 0.0);
        for (f, qp) in mesh::deformation_gradient(rest, &nodes).iter().zip(&rest.quadrature) {
            el += qp.weight
                * match material.model {
                    MaterialModel::NeoHookean => {
                        neo_hookean_density(f, material.mu, material.lambda)
                            .map_err(|inv| SimError::Inversion {
                                element: e,
                                det: inv.det,
                            })?
                            .value
                    }
                    MaterialModel::StableNeoHookean => {
                        stable_neo_hookean_density(f, material.mu, material.lambda).value
                    }
                };
            for &k in &self.element_muscles[e] {
                let m = &self.muscles[k];
                mu += qp.weight * muscle_density(f, activations[k], &m.direction, m.stiffness).value;
            }
        }
        Ok((el, mu))
    }

    fn check_sizes(&self, x: &DVector<f64>, activations: &[f64]) -> Result<()> {
        if x.len() != self.dof_count() {
            return Err(SimError::DimensionMismatch {
                what: "positions",
                expected: self.dof_count(),
                found: x.len(),
            });
        }
        if activations.len() != self.muscles.len() {
            return Err(SimError::DimensionMismatch {
                what: "muscle activations",
                expected: self.muscles.len(),
                found: activations.len(),
            });
        }
        Ok(())
    }

    /// Internal energy value only (elastic + muscle + gravity).
    pub fn internal_value(&self, x: &DVector<f64>, activations: &[f64]) -> Result<EnergyBreakdown> {
        self.check_sizes(x, activations)?;
        let values: Vec<(f64, f64)> = (0..self.mesh.element_count())
            .into_par_iter()
            .map(|e| self.element_values(e, x, activations))
            .collect::<Result<_>>()?;
        let mut breakdown = EnergyBreakdown::default();
        for (el, mu) in values {
            breakdown.elastic += el;
            breakdown.muscle += mu;
        }
        breakdown.gravity = gravity(&self.rest.masses, &self.gravity, x).value;
        Ok(breakdown)
    }

    /// Internal energies with gradient and, if requested, the Hessian triplets.
    ///
    /// Elements are evaluated in parallel and scattered serially in element
    /// order, so results do not depend on the thread count.
    pub fn internal(
        &self,
        x: &DVector<f64>,
        activations: &[f64],
        hessian: Option<HessianOptions>,
    ) -> Result<InternalEval> {
        self.check_sizes(x, activations)?;
        let contributions: Vec<ElementContribution> = (0..self.mesh.element_count())
            .into_par_iter()
            .map(|e| self.element_contribution(e, x, activations, hessian))
            .collect::<Result<_>>()?;
        let grav = gravity(&self.rest.masses, &self.gravity, x);
        let mut gradient = grav.gradient;
        let mut breakdown = EnergyBreakdown {
            gravity: grav.value,
            ..Default::default()
        };
        let mut triplets = hessian.map(|_| Triplets::new(self.dof_count()));
        for (e, c) in contributions.into_iter().enumerate() {
            breakdown.elastic += c.elastic;
            breakdown.muscle += c.muscle;
            let dofs = self.element_dofs(e);
            for (a, &i) in dofs.iter().enumerate() {
                gradient[i] += c.gradient[a];
            }
            if let (Some(t), Some(h)) = (triplets.as_mut(), c.hessian.as_ref()) {
                t.add_block(&dofs, h, 1.0);
            }
        }
        Ok(InternalEval {
            breakdown,
            gradient,
            hessian: triplets,
        })
    }

    /// Internal forces `-grad E_int`.
    pub fn internal_forces(&self, x: &DVector<f64>, activations: &[f64]) -> Result<DVector<f64>> {
        Ok(-self.internal(x, activations, None)?.gradient)
    }
}

/// Sums internal energies and, when an integrator context is given, the
/// inertia and damping potentials. Under Crank-Nicolson the internal terms
/// carry weight 1/2.
pub fn assemble(
    model: &EnergyModel,
    x: &DVector<f64>,
    activations: &[f64],
    ctx: Option<&IntegratorContext>,
    hessian: HessianOptions,
) -> Result<Assembly> {
    let internal = model.internal(x, activations, Some(hessian))?;
    let weight = ctx.map_or(1.0, |c| c.scheme.internal_weight());
    let mut value = weight * internal.value();
    let mut gradient = weight * internal.gradient;
    let mut triplets = internal.hessian.expect("hessian requested");
    triplets.scale(weight);
    if let Some(ctx) = ctx {
        for term in [inertia_potential(x, ctx)?, damping_potential(x, ctx)?] {
            value += term.value;
            gradient += &term.gradient;
            triplets.add_diagonal(&term.hessian_diag, 1.0);
        }
    }
    Ok(Assembly {
        value,
        gradient,
        hessian: triplets.to_csc(),
        breakdown: internal.breakdown,
    })
}
