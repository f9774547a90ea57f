//! Hyperelastic energy densities and their element-level integration.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector};

use super::{EnergyEval, Inverted};

pub type Flat9 = SVector<f64, 9>;
pub type Tangent9 = SMatrix<f64, 9, 9>;

/// Energy density with its first and second derivatives with respect to the
/// row-major flattened deformation gradient.
#[derive(Clone, Debug)]
pub struct DensityEval {
    pub value: f64,
    pub stress: Flat9,
    pub tangent: Tangent9,
}

pub fn flatten(m: &Matrix3<f64>) -> Flat9 {
    Flat9::from_fn(|k, _| m[(k / 3, k % 3)])
}

/// Hessian of `det F` with respect to flattened `F`:
/// `d2J / dF_ab dF_cd = eps_ace eps_bdf F_ef`.
fn det_hessian(f: &Matrix3<f64>) -> Tangent9 {
    let eps = |i: usize, j: usize, k: usize| -> f64 {
        match (i, j, k) {
            (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
            (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
            _ => 0.0,
        }
    };
    let mut h = Tangent9::zeros();
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let mut s = 0.0;
                    for e in 0..3 {
                        for g in 0..3 {
                            s += eps(a, c, e) * eps(b, d, g) * f[(e, g)];
                        }
                    }
                    h[(3 * a + b, 3 * c + d)] = s;
                }
            }
        }
    }
    h
}

/// Gradient of `det F`: the cofactor matrix, built from column cross products.
fn det_gradient(f: &Matrix3<f64>) -> Matrix3<f64> {
    let (c0, c1, c2) = (f.column(0), f.column(1), f.column(2));
    Matrix3::from_columns(&[c1.cross(&c2), c2.cross(&c0), c0.cross(&c1)])
}

/// Classic log-barrier Neo-Hookean density
/// `mu/2 (tr(F^T F) - 3) - mu ln J + lambda/2 (ln J)^2`.
pub fn neo_hookean_density(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Result<DensityEval, Inverted> {
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(Inverted { det });
    }
    let ln_j = det.ln();
    let f_inv_t = det_gradient(f) / det;
    let value = 0.5 * mu * (f.norm_squared() - 3.0) - mu * ln_j + 0.5 * lambda * ln_j * ln_j;
    let coeff = lambda * ln_j - mu;
    let stress = flatten(&(mu * (f - f_inv_t) + lambda * ln_j * f_inv_t));

    let g = flatten(&f_inv_t);
    let mut tangent = Tangent9::identity() * mu + lambda * g * g.transpose();
    // d(F^-T)_ij / dF_ab = -(F^-T)_aj (F^-T)_ib
    for i in 0..3 {
        for j in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    tangent[(3 * i + j, 3 * a + b)] -= coeff * f_inv_t[(a, j)] * f_inv_t[(i, b)];
                }
            }
        }
    }
    Ok(DensityEval {
        value,
        stress,
        tangent,
    })
}

/// Inversion-robust Neo-Hookean density
///
/// `mu'/2 (I_C - 3) + lambda'/2 (J - 1)^2 - 3 mu'/4 (J - 1) - mu'/2 ln((I_C + 1) / 4)`
///
/// which equals `mu'/2 (I_C - 3) + lambda'/2 (J - alpha)^2 - mu'/2 ln(I_C + 1)` with
/// `alpha = 1 + 3 mu' / (4 lambda')` up to an additive constant chosen so the
/// value is zero at `F = I`. The expanded form stays finite when `lambda' = 0`.
///
/// The Lamé parameters are remapped as `mu' = 4/3 mu` and
/// `lambda' = lambda + 5/6 mu`, so the small-strain response matches linear
/// elasticity with the user's `(mu, lambda)`. Value and stress vanish at
/// rest for every `(mu, lambda)`, and all terms are finite for `J <= 0`.
pub fn stable_neo_hookean_density(f: &Matrix3<f64>, mu: f64, lambda: f64) -> DensityEval {
    let mu_s = 4.0 / 3.0 * mu;
    let lambda_s = lambda + 5.0 / 6.0 * mu;
    let ic = f.norm_squared();
    let det = f.determinant();
    let value = 0.5 * mu_s * (ic - 3.0) + 0.5 * lambda_s * (det - 1.0).powi(2)
        - 0.75 * mu_s * (det - 1.0)
        - 0.5 * mu_s * ((ic + 1.0) / 4.0).ln();

    let ff = flatten(f);
    let dj = flatten(&det_gradient(f));
    let j_coeff = lambda_s * (det - 1.0) - 0.75 * mu_s;
    let ic1 = ic + 1.0;
    let stress = mu_s * (1.0 - 1.0 / ic1) * ff + j_coeff * dj;
    let tangent = Tangent9::identity() * (mu_s * (1.0 - 1.0 / ic1))
        + (2.0 * mu_s / (ic1 * ic1)) * ff * ff.transpose()
        + lambda_s * dj * dj.transpose()
        + j_coeff * det_hessian(f);
    DensityEval {
        value,
        stress,
        tangent,
    }
}

/// Muscle density `k/2 |(1 - a) F m|^2`. The tangent is constant in `F`.
pub fn muscle_density(
    f: &Matrix3<f64>,
    activation: f64,
    direction: &nalgebra::Vector3<f64>,
    stiffness: f64,
) -> DensityEval {
    let s = (1.0 - activation).powi(2) * stiffness;
    let fm = f * direction;
    let value = 0.5 * s * fm.norm_squared();
    let stress = flatten(&(s * fm * direction.transpose()));
    let mut tangent = Tangent9::zeros();
    for a in 0..3 {
        for b in 0..3 {
            for d in 0..3 {
                tangent[(3 * a + b, 3 * a + d)] = s * direction[b] * direction[d];
            }
        }
    }
    DensityEval {
        value,
        stress,
        tangent,
    }
}

/// Pulls a density evaluation back to element nodal coordinates:
/// value `psi V`, gradient `B^T P V`, Hessian `B^T T B V` with `B = dF/dx`.
///
/// `B` has the structure `B[(3i + j, 3a + i)] = grad N_a[j]`, which the
/// products below exploit.
pub fn integrate(density: &DensityEval, dfdx: &DMatrix<f64>, volume: f64) -> EnergyEval {
    let n = dfdx.ncols() / 3;
    let grads: Vec<[f64; 3]> = (0..n)
        .map(|a| [dfdx[(0, 3 * a)], dfdx[(1, 3 * a)], dfdx[(2, 3 * a)]])
        .collect();
    let p = &density.stress;
    let t = &density.tangent;
    let mut gradient = nalgebra::DVector::zeros(3 * n);
    for (a, g) in grads.iter().enumerate() {
        for i in 0..3 {
            gradient[3 * a + i] = volume * (p[3 * i] * g[0] + p[3 * i + 1] * g[1] + p[3 * i + 2] * g[2]);
        }
    }
    // w[(3i + j, 3b + k)] = sum_l T[(3i + j, 3k + l)] grad N_b[l]
    let mut w = DMatrix::zeros(9, 3 * n);
    for (b, g) in grads.iter().enumerate() {
        for k in 0..3 {
            for r in 0..9 {
                w[(r, 3 * b + k)] = t[(r, 3 * k)] * g[0] + t[(r, 3 * k + 1)] * g[1] + t[(r, 3 * k + 2)] * g[2];
            }
        }
    }
    let mut hessian = DMatrix::zeros(3 * n, 3 * n);
    for c in 0..3 * n {
        for (a, g) in grads.iter().enumerate() {
            for i in 0..3 {
                hessian[(3 * a + i, c)] =
                    volume * (g[0] * w[(3 * i, c)] + g[1] * w[(3 * i + 1, c)] + g[2] * w[(3 * i + 2, c)]);
            }
        }
    }
    EnergyEval {
        value: density.value * volume,
        gradient,
        hessian,
    }
}

/// Element-level Neo-Hookean energy at one quadrature point.
pub fn neo_hookean(
    f: &Matrix3<f64>,
    dfdx: &DMatrix<f64>,
    mu: f64,
    lambda: f64,
    volume: f64,
) -> Result<EnergyEval, Inverted> {
    Ok(integrate(&neo_hookean_density(f, mu, lambda)?, dfdx, volume))
}

pub fn stable_neo_hookean(
    f: &Matrix3<f64>,
    dfdx: &DMatrix<f64>,
    mu: f64,
    lambda: f64,
    volume: f64,
) -> EnergyEval {
    integrate(&stable_neo_hookean_density(f, mu, lambda), dfdx, volume)
}

pub fn muscle(
    f: &Matrix3<f64>,
    dfdx: &DMatrix<f64>,
    activation: f64,
    direction: &nalgebra::Vector3<f64>,
    stiffness: f64,
    volume: f64,
) -> EnergyEval {
    integrate(
        &muscle_density(f, activation, direction, stiffness),
        dfdx,
        volume,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector3};

    fn fd_stress(psi: impl Fn(&Matrix3<f64>) -> f64, f: &Matrix3<f64>) -> Flat9 {
        let h = 1e-6;
        Flat9::from_fn(|k, _| {
            let mut fp = *f;
            let mut fm = *f;
            fp[(k / 3, k % 3)] += h;
            fm[(k / 3, k % 3)] -= h;
            (psi(&fp) - psi(&fm)) / (2.0 * h)
        })
    }

    fn fd_tangent(stress: impl Fn(&Matrix3<f64>) -> Flat9, f: &Matrix3<f64>) -> Tangent9 {
        let h = 1e-6;
        let mut t = Tangent9::zeros();
        for l in 0..9 {
            let mut fp = *f;
            let mut fm = *f;
            fp[(l / 3, l % 3)] += h;
            fm[(l / 3, l % 3)] -= h;
            t.set_column(l, &((stress(&fp) - stress(&fm)) / (2.0 * h)));
        }
        t
    }

    fn sample_f() -> Matrix3<f64> {
        Matrix3::new(1.1, 0.2, -0.1, 0.05, 0.9, 0.3, -0.2, 0.1, 1.3)
    }

    #[test]
    fn neo_hookean_hand_values() {
        let rest = neo_hookean_density(&Matrix3::identity(), 3.0, 5.0).unwrap();
        assert_eq!(rest.value, 0.0);
        assert!(rest.stress.norm() < 1e-15);
        let stretched =
            neo_hookean_density(&Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0)), 1.0, 1.0)
                .unwrap();
        assert_relative_eq!(stretched.value, 1.047_079_326_399_155_4, epsilon = 1e-14);
    }

    #[test]
    fn neo_hookean_rejects_inversion() {
        let f = Matrix3::from_diagonal(&Vector3::new(-0.5, 1.0, 1.0));
        assert!(neo_hookean_density(&f, 1.0, 1.0).is_err());
    }

    #[test]
    fn density_derivatives_match_finite_differences() {
        let f = sample_f();
        let (mu, lambda) = (1.3, 2.1);
        let nh = neo_hookean_density(&f, mu, lambda).unwrap();
        let fd = fd_stress(|g| neo_hookean_density(g, mu, lambda).unwrap().value, &f);
        assert_relative_eq!(nh.stress, fd, max_relative = 1e-7, epsilon = 1e-9);
        let fdt = fd_tangent(|g| neo_hookean_density(g, mu, lambda).unwrap().stress, &f);
        assert_relative_eq!(nh.tangent, fdt, max_relative = 1e-6, epsilon = 1e-8);

        for f in [f, Matrix3::from_diagonal(&Vector3::new(-0.5, 1.0, 1.0))] {
            let sn = stable_neo_hookean_density(&f, mu, lambda);
            let fd = fd_stress(|g| stable_neo_hookean_density(g, mu, lambda).value, &f);
            assert_relative_eq!(sn.stress, fd, max_relative = 1e-7, epsilon = 1e-9);
            let fdt = fd_tangent(|g| stable_neo_hookean_density(g, mu, lambda).stress, &f);
            assert_relative_eq!(sn.tangent, fdt, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn stable_variant_rest_and_inversion() {
        let rest = stable_neo_hookean_density(&Matrix3::identity(), 2.0, 0.0);
        assert!(rest.value.abs() < 1e-15);
        assert!(rest.stress.norm() < 1e-14);
        let inv = stable_neo_hookean_density(&Matrix3::from_diagonal(&Vector3::new(-0.5, 1.0, 1.0)), 1.0, 1.0);
        assert!(inv.value.is_finite());
        assert!(inv.stress.iter().all(|v| v.is_finite()));
        assert!(inv.tangent.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn muscle_hand_values() {
        let m = Vector3::new(0.0, 0.0, 1.0);
        let i = Matrix3::identity();
        assert_eq!(muscle_density(&sample_f(), 1.0, &m, 5.0).value, 0.0);
        assert!(muscle_density(&sample_f(), 1.0, &m, 5.0).stress.norm() == 0.0);
        // k/2 * 1 * V with k = 2, V = 3
        assert_relative_eq!(muscle_density(&i, 0.0, &m, 2.0).value * 3.0, 3.0);
        assert_relative_eq!(muscle_density(&i, 0.5, &m, 1.0).value, 0.125);
    }

    #[test]
    fn neo_hookean_frame_invariance() {
        let f = sample_f();
        let r = Rotation3::from_euler_angles(0.4, 1.2, -0.8).into_inner();
        let a = neo_hookean_density(&f, 1.0, 4.0).unwrap().value;
        let b = neo_hookean_density(&(r * f), 1.0, 4.0).unwrap().value;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }
}
