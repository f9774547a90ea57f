//! Mesh JSON files.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{parse_json, read_file};
use crate::error::Result;
use crate::mesh::MeshModel;

/// On-disk mesh layout. Indices are 0-based; elements are numbered tets
/// first, then hexes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub vertices: Vec<[f64; 3]>,
    #[serde(default)]
    pub tets: Vec<[usize; 4]>,
    #[serde(default)]
    pub hexes: Vec<[usize; 8]>,
    #[serde(default)]
    pub vertex_sets: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub triangle_sets: BTreeMap<String, Vec<[usize; 3]>>,
    #[serde(default)]
    pub element_sets: BTreeMap<String, Vec<usize>>,
}

impl MeshFile {
    pub fn into_model(self) -> Result<MeshModel> {
        MeshModel::new(
            self.vertices.iter().map(|v| Vector3::from(*v)).collect(),
            self.tets,
            self.hexes,
            self.vertex_sets,
            self.triangle_sets,
            self.element_sets,
        )
    }

    pub fn from_model(mesh: &MeshModel) -> Self {
        MeshFile {
            vertices: mesh.vertices.iter().map(|v| (*v).into()).collect(),
            tets: mesh.tets.clone(),
            hexes: mesh.hexes.clone(),
            vertex_sets: mesh.vertex_sets.clone(),
            triangle_sets: mesh.triangle_sets.clone(),
            element_sets: mesh.element_sets.clone(),
        }
    }
}

pub fn parse_mesh(text: &str) -> Result<MeshModel> {
    parse_json::<MeshFile>(text)?.into_model()
}

pub fn load_mesh(path: &Path) -> Result<MeshModel> {
    parse_mesh(&read_file(path)?)
}

pub fn mesh_to_json(mesh: &MeshModel) -> String {
    serde_json::to_string_pretty(&MeshFile::from_model(mesh)).expect("mesh serializes")
}
