//! Derivative-free parameter search: seeded random sampling followed by
//! either a coordinate-wise pattern search with step halving or a bounded
//! Nelder-Mead simplex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl Parameter {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        Parameter {
            name: name.to_string(),
            lo,
            hi,
        }
    }

    fn denormalize(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }

    fn normalize(&self, v: f64) -> f64 {
        if self.hi > self.lo {
            (v - self.lo) / (self.hi - self.lo)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Refinement {
    #[default]
    Pattern,
    NelderMead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    pub refinement: Refinement,
    pub random_samples: usize,
    pub seed: u64,
    /// Initial pattern step or simplex edge as a fraction of each range.
    pub initial_step: f64,
    /// Stop once the step or simplex size falls below this fraction of each range.
    pub min_step: f64,
    pub max_evaluations: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            refinement: Refinement::Pattern,
            random_samples: 16,
            seed: 0,
            initial_step: 0.25,
            min_step: 1e-4,
            max_evaluations: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimizes `objective` over the box spanned by `space`.
///
/// Failed evaluations count as `+inf`. `start` is evaluated first when given.
pub fn minimize<F>(
    space: &[Parameter],
    start: Option<&[f64]>,
    opts: &SearchOptions,
    mut objective: F,
) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if space.is_empty() {
        return Err(SimError::invalid("search space", "needs at least one parameter"));
    }
    if let Some(p) = space.iter().find(|p| !(p.lo <= p.hi)) {
        return Err(SimError::invalid("search space", format!("empty range for `{}`", p.name)));
    }
    let d = space.len();
    let mut evaluations = 0;
    let mut eval = |u: &[f64], evaluations: &mut usize| -> f64 {
        *evaluations += 1;
        let x: Vec<f64> = space.iter().zip(u).map(|(p, &v)| p.denormalize(v)).collect();
        match objective(&x) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_u = match start {
        Some(s) => space.iter().zip(s).map(|(p, &v)| p.normalize(v).clamp(0.0, 1.0)).collect(),
        None => vec![0.5; d],
    };
    let mut best = eval(&best_u, &mut evaluations);
    for _ in 0..opts.random_samples {
        let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let v = eval(&u, &mut evaluations);
        if v < best {
            best = v;
            best_u = u;
        }
    }

    let mut eval_counted = |u: &[f64]| eval(u, &mut evaluations);
    let (u, v) = match opts.refinement {
        Refinement::Pattern => pattern(best_u, best, opts, &mut eval_counted),
        Refinement::NelderMead => nelder_mead(best_u, best, opts, &mut eval_counted),
    };
    best_u = u;
    best = v;
    Ok(SearchResult {
        best: space.iter().zip(&best_u).map(|(p, &u)| p.denormalize(u)).collect(),
        value: best,
        evaluations,
    })
}

fn pattern(
    mut best_u: Vec<f64>,
    mut best: f64,
    opts: &SearchOptions,
    eval: &mut dyn FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let d = best_u.len();
    let mut used = opts.random_samples + 1;
    let mut step = vec![opts.initial_step; d];
    while used < opts.max_evaluations && step.iter().any(|&s| s >= opts.min_step) {
        for k in 0..d {
            if step[k] < opts.min_step || used >= opts.max_evaluations {
                continue;
            }
            let mut moved = false;
            for dir in [1.0, -1.0] {
                let mut u = best_u.clone();
                u[k] = (u[k] + dir * step[k]).clamp(0.0, 1.0);
                if u[k] == best_u[k] {
                    continue;
                }
                used += 1;
                let v = eval(&u);
                if v < best {
                    best = v;
                    best_u = u;
                    moved = true;
                    break;
                }
            }
            if !moved {
                step[k] *= 0.5;
            }
        }
    }
    (best_u, best)
}

fn nelder_mead(
    start: Vec<f64>,
    value: f64,
    opts: &SearchOptions,
    eval: &mut dyn FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut used = opts.random_samples + 1;
    let clamp = |u: Vec<f64>| -> Vec<f64> { u.into_iter().map(|x| x.clamp(0.0, 1.0)).collect() };
    let mut simplex = vec![(start.clone(), value)];
    for k in 0..d {
        let mut u = start.clone();
        u[k] += if u[k] + opts.initial_step <= 1.0 { opts.initial_step } else { -opts.initial_step };
        used += 1;
        let v = eval(&u);
        simplex.push((u, v));
    }
    while used < opts.max_evaluations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let size = simplex[1..]
            .iter()
            .flat_map(|(u, _)| u.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if size < opts.min_step {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|(u, _)| u[k]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| clamp(centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect());
        let reflected = along(1.0);
        used += 1;
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(2.0);
            used += 1;
            let fe = eval(&expanded);
            simplex[d] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (reflected, fr);
            continue;
        }
        let contracted = if fr < worst.1 { along(0.5) } else { along(-0.5) };
        used += 1;
        let fc = eval(&contracted);
        if fc < worst.1.min(fr) {
            simplex[d] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let u: Vec<f64> = best.iter().zip(&entry.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
            used += 1;
            *entry = (u.clone(), eval(&u));
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
