//! Central finite-difference audit of analytic gradients and Hessians, per
//! energy term.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{
    damping_potential, inertia_potential, EnergyModel, IntegratorContext, MaterialModel, Scheme,
};
use crate::error::{Result, SimError};
use crate::mesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Term {
    NeoHookean,
    StableNeoHookean,
    Muscle,
    Inertia,
    Damping,
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Term::NeoHookean => "neo-hookean",
            Term::StableNeoHookean => "stable-neo-hookean",
            Term::Muscle => "muscle",
            Term::Inertia => "inertia",
            Term::Damping => "damping",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub samples: usize,
    pub seed: u64,
    /// Finite-difference step relative to the element's shortest rest edge.
    pub relative_step: f64,
    /// Scales analytic gradients by `1 + 1e-3` to exercise the failure path.
    pub corrupt_gradient: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            samples: 100,
            seed: 0,
            relative_step: 1e-6,
            corrupt_gradient: false,
        }
    }
}

/// Worst relative errors of one term over all samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TermReport {
    pub term: Term,
    pub samples: usize,
    pub gradient_error: f64,
    pub hessian_error: f64,
}

impl TermReport {
    pub fn passes(&self, gradient_tol: f64, hessian_tol: f64) -> bool {
        self.gradient_error < gradient_tol && self.hessian_error < hessian_tol
    }
}

struct Sample {
    value: f64,
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
}

/// `max |a - b| / max(|a|, |b|)` over all entries.
fn relative_error<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (x, y) in a.into_iter().zip(b) {
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares `eval` at `x` against central differences with step `h`.
fn compare(x: &DVector<f64>, h: f64, eval: &mut dyn FnMut(&DVector<f64>) -> Result<Sample>) -> Result<(f64, f64)> {
    let base = eval(x)?;
    let n = x.len();
    let mut fd_gradient = DVector::zeros(n);
    let mut fd_hessian = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        xp[j] += h;
        let mut xm = x.clone();
        xm[j] -= h;
        let (p, m) = (eval(&xp)?, eval(&xm)?);
        fd_gradient[j] = (p.value - m.value) / (2.0 * h);
        fd_hessian.set_column(j, &((p.gradient - m.gradient) / (2.0 * h)));
    }
    Ok((
        relative_error(base.gradient.iter(), fd_gradient.iter()),
        relative_error(base.hessian.iter(), fd_hessian.iter()),
    ))
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = Quaternion::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Random configuration of element `e`: a rotated, stretched copy of its
/// rest shape with per-node noise of `noise` times the shortest edge.
fn random_element_configuration(
    model: &EnergyModel,
    e: usize,
    stretch: (f64, f64),
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let mut x = model.mesh.rest_positions();
    let h = model.mesh.min_edge_length(e);
    let a = random_rotation(rng)
        * Matrix3::from_diagonal(&Vector3::from_fn(|_, _| rng.random_range(stretch.0..stretch.1)))
        * random_rotation(rng);
    let nodes = model.mesh.element_nodes(e);
    let center = nodes.iter().map(|&v| mesh::vertex(&x, v)).sum::<Vector3<f64>>() / nodes.len() as f64;
    for &v in nodes {
        let p = center + a * (mesh::vertex(&x, v) - center)
            + Vector3::from_fn(|_, _| rng.random_range(-noise..noise)) * h;
        for c in 0..3 {
            x[3 * v + c] = p[c];
        }
    }
    x
}

fn min_det_range(model: &EnergyModel, e: usize, x: &DVector<f64>) -> (f64, f64) {
    let nodes = mesh::element_positions(&model.mesh, e, x);
    mesh::deformation_gradient(&model.rest.elements[e], &nodes)
        .iter()
        .map(|f| f.determinant())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
}

fn scatter(x: &DVector<f64>, dofs: &[usize], local: &DVector<f64>) -> DVector<f64> {
    let mut out = x.clone();
    for (a, &i) in dofs.iter().enumerate() {
        out[i] = local[a];
    }
    out
}

fn gather(x: &DVector<f64>, dofs: &[usize]) -> DVector<f64> {
    DVector::from_iterator(dofs.len(), dofs.iter().map(|&i| x[i]))
}

fn check_element_term(
    model: &EnergyModel,
    term: Term,
    elements: &[usize],
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<TermReport> {
    let corrupt = if opts.corrupt_gradient { 1.0 + 1e-3 } else { 1.0 };
    let mut report = TermReport {
        term,
        samples: 0,
        gradient_error: 0.0,
        hessian_error: 0.0,
    };
    let mut attempts = 0;
    while report.samples < opts.samples {
        attempts += 1;
        if attempts > 100 * opts.samples.max(1) {
            return Err(SimError::invalid("gradcheck", format!("could not sample valid configurations for {term}")));
        }
        let e = elements[rng.random_range(0..elements.len())];
        let x = match term {
            Term::NeoHookean => {
                let x = random_element_configuration(model, e, (0.7, 1.4), 0.1, rng);
                let (lo, hi) = min_det_range(model, e, &x);
                if lo < 0.3 || hi > 3.0 {
                    continue;
                }
                x
            }
            _ => random_element_configuration(model, e, (0.3, 2.0), 0.4, rng),
        };
        let activations: Vec<f64> = (0..model.muscles.len()).map(|_| rng.random_range(-1.0..2.0)).collect();
        let dofs = model.element_dofs(e);
        let h = opts.relative_step * model.mesh.min_edge_length(e);
        let mut eval = |local: &DVector<f64>| -> Result<Sample> {
            let xg = scatter(&x, &dofs, local);
            let ev = if term == Term::Muscle {
                model.muscle_element(e, &xg, &activations)
            } else {
                model.elastic_element(e, &xg)?
            };
            Ok(Sample {
                value: ev.value,
                gradient: ev.gradient * corrupt,
                hessian: ev.hessian,
            })
        };
        let (g, hs) = compare(&gather(&x, &dofs), h, &mut eval)?;
        report.gradient_error = report.gradient_error.max(g);
        report.hessian_error = report.hessian_error.max(hs);
        report.samples += 1;
    }
    Ok(report)
}

fn check_system_term(
    model: &EnergyModel,
    term: Term,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<TermReport> {
    let corrupt = if opts.corrupt_gradient { 1.0 + 1e-3 } else { 1.0 };
    let mass = model.mass_diagonal();
    let mut report = TermReport {
        term,
        samples: 0,
        gradient_error: 0.0,
        hessian_error: 0.0,
    };
    for s in 0..opts.samples {
        let e = rng.random_range(0..model.mesh.element_count());
        let dofs = model.element_dofs(e);
        let n = dofs.len();
        let len = model.mesh.min_edge_length(e);
        let rest = gather(&model.mesh.rest_positions(), &dofs);
        let jitter = |rng: &mut ChaCha8Rng, scale: f64| DVector::from_fn(n, |_, _| rng.random_range(-scale..scale));
        let scheme = if s % 2 == 0 {
            Scheme::BackwardEuler
        } else {
            Scheme::CrankNicolson
        };
        let ctx = IntegratorContext {
            dt: rng.random_range(1e-3..1e-1),
            x_prev: &rest + jitter(rng, 0.2 * len),
            v_prev: jitter(rng, 1.0),
            f_int_prev: Some(jitter(rng, 1.0)),
            scheme,
            damping: rng.random_range(0.1..30.0),
            mass: gather(&mass, &dofs),
        };
        let x = &rest + jitter(rng, 0.5 * len);
        let mut eval = |x: &DVector<f64>| -> Result<Sample> {
            let ev = match term {
                Term::Inertia => inertia_potential(x, &ctx)?,
                _ => damping_potential(x, &ctx)?,
            };
            Ok(Sample {
                value: ev.value,
                gradient: ev.gradient * corrupt,
                hessian: DMatrix::from_diagonal(&ev.hessian_diag),
            })
        };
        let (g, hs) = compare(&x, opts.relative_step * len, &mut eval)?;
        report.gradient_error = report.gradient_error.max(g);
        report.hessian_error = report.hessian_error.max(hs);
        report.samples += 1;
    }
    Ok(report)
}

/// Audits every energy term present in `model`: the elastic models in use,
/// muscles if any, and the inertia and damping potentials.
pub fn check_model(model: &EnergyModel, opts: &GradcheckOptions) -> Result<Vec<TermReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut reports = Vec::new();
    for (term, kind) in [
        (Term::NeoHookean, MaterialModel::NeoHookean),
        (Term::StableNeoHookean, MaterialModel::StableNeoHookean),
    ] {
        let elements: Vec<usize> = (0..model.mesh.element_count())
            .filter(|&e| model.materials[model.element_material[e]].model == kind)
            .collect();
        if !elements.is_empty() {
            reports.push(check_element_term(model, term, &elements, opts, &mut rng)?);
        }
    }
    let mut muscle_elements: Vec<usize> = model.muscles.iter().flat_map(|m| m.elements.iter().copied()).collect();
    muscle_elements.sort_unstable();
    muscle_elements.dedup();
    if !muscle_elements.is_empty() {
        reports.push(check_element_term(model, Term::Muscle, &muscle_elements, opts, &mut rng)?);
    }
    if model.mesh.element_count() > 0 {
        for term in [Term::Inertia, Term::Damping] {
            reports.push(check_system_term(model, term, opts, &mut rng)?);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{Material, MuscleBinding};
    use crate::MeshModel;
    use std::collections::BTreeMap;

    fn tet_model(model: MaterialModel) -> EnergyModel {
        let mesh = MeshModel::new(
            vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::z()],
            vec![[0, 1, 2, 3]],
            vec![],
            BTreeMap::new(),
            BTreeMap::new(),
            BTreeMap::new(),
        )
        .unwrap();
        let muscle = MuscleBinding {
            elements: vec![0],
            stiffness: 5.0,
            direction: Vector3::new(0.0, 0.6, 0.8),
        };
        EnergyModel::new(
            mesh,
            vec![Material::new(model, 10.0, 0.3, 1.0).unwrap()],
            vec![0],
            vec![muscle],
            Vector3::zeros(),
            &[],
        )
        .unwrap()
    }

    #[test]
    fn tet_terms_pass() {
        let opts = GradcheckOptions {
            samples: 10,
            ..GradcheckOptions::default()
        };
        for kind in [MaterialModel::NeoHookean, MaterialModel::StableNeoHookean] {
            let reports = check_model(&tet_model(kind), &opts).unwrap();
            assert_eq!(reports.len(), 4);
            for r in reports {
                assert!(r.passes(1e-5, 1e-4), "{r:?}");
            }
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let opts = GradcheckOptions {
            samples: 3,
            corrupt_gradient: true,
            ..GradcheckOptions::default()
        };
        for r in check_model(&tet_model(MaterialModel::NeoHookean), &opts).unwrap() {
            assert!(!r.passes(1e-5, 1e-4), "{r:?}");
        }
    }

    #[test]
    fn zero_samples_is_a_no_op() {
        let opts = GradcheckOptions {
            samples: 0,
            ..GradcheckOptions::default()
        };
        for r in check_model(&tet_model(MaterialModel::NeoHookean), &opts).unwrap() {
            assert_eq!(r.samples, 0);
            assert_eq!(r.gradient_error, 0.0);
        }
    }
}
