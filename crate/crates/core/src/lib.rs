//! Finite-element soft-body simulation by constrained minimization of
//! incremental potentials.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod forces;
pub mod gradcheck;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod scenes;
pub mod search;
pub mod solver;
pub mod timestepping;

pub use error::{Result, SimError};
pub use io::{Scene, Trajectory};
pub use mesh::MeshModel;
pub use timestepping::{System, SystemState};
