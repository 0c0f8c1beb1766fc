//! Geometry, body model, UV baking, body-to-cloth transfer, cloth simulation
//! and dataset generation for learning garment dynamics as UV-map offsets.

pub mod body;
pub mod clothsim;
pub mod dataset;
pub mod error;
pub mod garment;
pub mod geom;
pub mod obj;
pub mod raycast;
pub mod transfer;
pub mod uvbake;

pub use error::{Error, Result};
pub use geom::{Ray, TriMesh, Vec2, Vec3};
