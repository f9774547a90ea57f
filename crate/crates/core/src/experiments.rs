//! Experiment drivers built on the bundled scenes: marker trajectories for
//! cantilever identification and the jumping-leg objective.

use std::path::Path;

use crate::error::{Result, SimError};
use crate::io::scene::SceneConfig;
use crate::io::Scene;
use crate::metrics::{marker_error, MarkerFrames};
use crate::scenes::{cantilever_scene, set_leg_actuation, CantileverParams};
use crate::search::{minimize, Parameter, SearchOptions, SearchResult};

/// Allowed activation levels and switching times of the leg schedules.
pub const LEG_ACTIVATION_RANGE: (f64, f64) = (0.0, 2.0);
pub const LEG_TIME_RANGE: (f64, f64) = (0.1, 0.9);

/// Simulates a scene and returns the recorded positions of every frame.
pub fn recorded_positions(config: SceneConfig, base_dir: &Path) -> Result<MarkerFrames> {
    let system = Scene::from_config(config, base_dir)?.build()?;
    let mut frames = Vec::new();
    system.simulate_with(|f| {
        frames.push(f.positions.clone());
        Ok(())
    })?;
    Ok(frames)
}

pub fn cantilever_markers(params: &CantileverParams) -> Result<MarkerFrames> {
    recorded_positions(cantilever_scene(params), Path::new("."))
}

/// Young's modulus, Poisson ratio and mass damping searched by
/// [`identify_cantilever`], in that order.
pub fn cantilever_search_space() -> Vec<Parameter> {
    vec![
        Parameter::new("young_modulus", 100e3, 500e3),
        Parameter::new("poisson_ratio", 0.25, 0.49),
        Parameter::new("damping", 0.0, 30.0),
    ]
}

/// Fits `(E, nu, alpha)` of `base` to reference marker trajectories by
/// minimizing the marker error.
pub fn identify_cantilever(
    base: &CantileverParams,
    reference: &MarkerFrames,
    space: &[Parameter],
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let reference = std::slice::from_ref(reference);
    minimize(space, None, opts, |x| {
        let p = CantileverParams {
            young_modulus: x[0],
            poisson_ratio: x[1],
            damping: x[2],
            ..base.clone()
        };
        marker_error(&[cantilever_markers(&p)?], reference)
    })
}

/// Checks `(a_v, a_d, t_v, t_d)` against the allowed ranges.
pub fn check_leg_params(params: [f64; 4]) -> Result<()> {
    let names = ["a_v", "a_d", "t_v", "t_d"];
    for (k, (&v, name)) in params.iter().zip(names).enumerate() {
        let (lo, hi) = if k < 2 { LEG_ACTIVATION_RANGE } else { LEG_TIME_RANGE };
        if !(lo..=hi).contains(&v) {
            return Err(SimError::invalid(name, format!("{v} outside [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Height of the lowest vertex over time for a leg scene actuated with
/// `(a_v, a_d, t_v, t_d)`; `None` runs the schedules stored in the scene.
pub fn lowest_vertex_heights(
    mut config: SceneConfig,
    base_dir: &Path,
    params: Option<[f64; 4]>,
) -> Result<Vec<(f64, f64)>> {
    if let Some(p) = params {
        set_leg_actuation(&mut config, p)?;
    }
    config.output.record_all_vertices = true;
    config.output.marker_sets.clear();
    let system = Scene::from_config(config, base_dir)?.build()?;
    let mut heights = Vec::new();
    system.simulate_with(|f| {
        let lowest = f.positions.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
        heights.push((f.t, lowest));
        Ok(())
    })?;
    Ok(heights)
}

/// Maximum over recorded frames of the lowest vertex height.
pub fn leg_objective(config: SceneConfig, base_dir: &Path, params: Option<[f64; 4]>) -> Result<f64> {
    if let Some(p) = params {
        check_leg_params(p)?;
    }
    let heights = lowest_vertex_heights(config, base_dir, params)?;
    Ok(heights.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max))
}
