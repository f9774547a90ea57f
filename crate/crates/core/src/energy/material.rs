use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaterialModel {
    NeoHookean,
    StableNeoHookean,
}

/// Isotropic hyperelastic material with derived Lamé parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub model: MaterialModel,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub mu: f64,
    pub lambda: f64,
}

impl Material {
    pub fn new(
        model: MaterialModel,
        young_modulus: f64,
        poisson_ratio: f64,
        density: f64,
    ) -> Result<Self> {
        let (mu, lambda) = lame_from_material(young_modulus, poisson_ratio)?;
        if !(density > 0.0 && density.is_finite()) {
            return Err(SimError::invalid("density", format!("must be positive, got {density}")));
        }
        Ok(Material {
            model,
            young_modulus,
            poisson_ratio,
            density,
            mu,
            lambda,
        })
    }

    /// Dilatational wave speed `sqrt((lambda + 2 mu) / rho)`.
    pub fn wave_speed(&self) -> f64 {
        ((self.lambda + 2.0 * self.mu) / self.density).sqrt()
    }
}

/// Converts Young's modulus and Poisson's ratio into `(mu, lambda)`.
pub fn lame_from_material(young_modulus: f64, poisson_ratio: f64) -> Result<(f64, f64)> {
    if !(young_modulus > 0.0 && young_modulus.is_finite()) {
        return Err(SimError::invalid(
            "young_modulus",
            format!("must be positive, got {young_modulus}"),
        ));
    }
    if !(0.0..0.5).contains(&poisson_ratio) {
        return Err(SimError::invalid(
            "poisson_ratio",
            format!("must lie in [0, 0.5), got {poisson_ratio}"),
        ));
    }
    let e = young_modulus;
    let nu = poisson_ratio;
    let mu = e / (2.0 * (1.0 + nu));
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    Ok((mu, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lame_examples() {
        assert_eq!(lame_from_material(1.0, 0.0).unwrap(), (0.5, 0.0));
        let (mu, lambda) = lame_from_material(1.0, 0.25).unwrap();
        assert_relative_eq!(mu, 0.4, epsilon = 1e-15);
        assert_relative_eq!(lambda, 0.4, epsilon = 1e-15);
        // mu = E / 2.878, lambda = E * 0.439 / (1.439 * 0.122)
        let (mu, lambda) = lame_from_material(234_900.0, 0.439).unwrap();
        assert_relative_eq!(mu, 81_619.18, max_relative = 1e-6);
        assert_relative_eq!(lambda, 587_390.49, max_relative = 1e-6);
    }

    #[test]
    fn incompressible_rejected() {
        assert!(lame_from_material(1.0, 0.5).is_err());
        assert!(lame_from_material(1.0, -0.1).is_err());
        assert!(lame_from_material(0.0, 0.3).is_err());
        assert!(Material::new(MaterialModel::NeoHookean, 1.0, 0.3, 0.0).is_err());
    }
}
