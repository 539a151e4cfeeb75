//! CAD-referenced surface deviation estimation.
//!
//! Noisy point clouds of a workpiece are registered against its nominal
//! triangle mesh; every point is paired with a footpoint on a face and turned
//! into an indirect observation of that face's signed deviation along its
//! normal. The per-face deviation state is estimated recursively with a
//! weighted least-squares (Bayesian) filter, in covariance or information
//! form, and scored against a ground-truth reference.
//!
//! Module map:
//!
//! - [`mesh`]: triangle meshes, STL I/O, vertex normals, synthetic tablets.
//! - [`raycast`]: BVH, ray casting and measurement-to-mesh correspondence.
//! - [`sensor`]: camera model, noise model, synthetic clouds, cloud files.
//! - [`registration`]: rigid ICP refinement of cloud poses.
//! - [`estimator`]: observation assembly and the interchangeable filters.
//! - [`evaluation`]: reference state, face selection, RMSE, defect flags.
//! - [`pipeline`]: run configuration and end-to-end orchestration.
//!
//! All lengths are SI metres.

pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod geometry;
pub mod mesh;
pub mod pipeline;
pub mod raycast;
pub mod registration;
pub mod registry;
pub mod sensor;

pub use error::{Error, Result};
pub use geometry::{Point, Vec3};
pub use mesh::TriMesh;
