//! Energy terms: element-level hyperelasticity and muscle activation, and
//! system-level gravity, inertia and damping potentials.

mod assembly;
pub mod elastic;
mod material;
mod system;

use nalgebra::{DMatrix, DVector};

pub use assembly::{
    assemble, Assembly, EnergyBreakdown, EnergyModel, HessianOptions, InternalEval, MuscleBinding,
    Triplets,
};
pub use elastic::{muscle, neo_hookean, stable_neo_hookean, DensityEval};
pub use material::{lame_from_material, Material, MaterialModel};
pub use system::{
    damping_potential, gravity, inertia_potential, velocity_update, DiagonalEval,
    IntegratorContext, Scheme,
};

/// Value, gradient and Hessian of an element-level term over the element's
/// stacked nodal coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl EnergyEval {
    pub fn zeros(n: usize) -> Self {
        EnergyEval {
            value: 0.0,
            gradient: DVector::zeros(n),
            hessian: DMatrix::zeros(n, n),
        }
    }
}

impl std::ops::AddAssign<&EnergyEval> for EnergyEval {
    fn add_assign(&mut self, rhs: &EnergyEval) {
        self.value += rhs.value;
        self.gradient += &rhs.gradient;
        self.hessian += &rhs.hessian;
    }
}

/// The log-barrier model was evaluated at a non-positive `det F`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inverted {
    pub det: f64,
}
