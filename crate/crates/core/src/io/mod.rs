//! File formats: mesh JSON, scene JSON and trajectory JSON Lines.

pub mod mesh;
pub mod scene;
pub mod trajectory;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_path_to_error::Segment;

use crate::error::{Result, SimError};

pub use mesh::{load_mesh, mesh_to_json, parse_mesh, MeshFile};
pub use scene::{parse_scene, parse_scene_str, Scene, SceneConfig, SCENE_VERSION};
pub use trajectory::{
    read_trajectory, read_trajectory_from, write_trajectory, Frame, FrameEnergies, Trajectory,
    TrajectoryHeader, TrajectoryWriter,
};

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Deserializes strictly, reporting failures with a JSON pointer.
pub(crate) fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| SimError::Schema {
        pointer: json_pointer(e.path()),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| SimError::Schema {
        pointer: String::new(),
        message: e.to_string(),
    })?;
    Ok(value)
}
