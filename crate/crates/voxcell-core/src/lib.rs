//! Voxel-native immersed finite-element analysis of micro-architected structures.
//!
//! The library takes regular voxel grids (from CT-like images or from the
//! built-in octet-truss generator), embeds them in a Cartesian mesh of finite
//! cells carrying integrated-Legendre bases of degree `p`, and solves linear
//! elasticity on the immersed geometry. Void voxels keep a small indicator
//! value `alpha_void` instead of being removed, so no boundary-conforming mesh
//! is ever built. On top of the core solver sit first-order numerical
//! homogenization (apparent elasticity tensors under periodic, kinematic- and
//! static-uniform boundary conditions) and direct tensile-test simulation.

pub mod assembly;
pub mod basis;
pub mod constraints;
pub mod defects;
pub mod dns;
pub mod error;
pub mod fields;
pub mod homog;
pub mod kernels;
pub mod lattice;
pub mod material;
pub mod mesh;
pub mod solver;
pub mod voxel;
pub mod voxel_io;

pub use error::{Error, Result};
pub use material::ElasticMaterial;
pub use mesh::CellMesh;
pub use voxel::{GrayscaleVolume, SegmentationConfig, VoxelGrid};

/// Default void indicator value: small enough that the fictitious-domain
/// modeling error (proportional to sqrt(alpha)) is negligible, large enough
/// to keep the stiffness operator definite.
pub const DEFAULT_ALPHA_VOID: f64 = 1e-11;
