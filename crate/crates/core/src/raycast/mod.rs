//! Ray casting against a mesh and the measurement-to-mesh correspondence.
//!
//! A measured world point `z` is paired with a footpoint `z̄` on face `j` of
//! the nominal mesh. How the footpoint is found is a [`CorrespondencePolicy`]:
//! the default casts the camera ray through `z` onto the mesh and falls back
//! to the global closest point when the ray misses.

mod bvh;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Vec3};
use crate::mesh::TriMesh;
use crate::registry::Registry;

pub use bvh::{build_bvh, Bvh, ClosestHit, RayHit, TIE_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrespondenceMode {
    Ray,
    ClosestPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub face_index: usize,
    pub footpoint: Point,
    /// `n̂_jᵀ (z - footpoint)`.
    pub signed_offset: f64,
    /// Distance from the footpoint to the nearest boundary edge.
    pub border_distance: f64,
    pub mode: CorrespondenceMode,
}

/// Nearest intersection with positive parameter along a unit `direction`.
pub fn ray_cast(bvh: &Bvh, mesh: &TriMesh, origin: &Point, direction: &Vec3) -> Option<RayHit> {
    bvh.intersect(mesh, origin, direction, 0.0, f64::INFINITY)
}

fn finish(mesh: &TriMesh, point: &Point, face: usize, footpoint: Point, mode: CorrespondenceMode) -> Option<Correspondence> {
    let normal = mesh.face_normals()[face]?;
    Some(Correspondence {
        face_index: face,
        footpoint,
        signed_offset: normal.dot(&(point - footpoint)),
        border_distance: mesh.distance_to_boundary(&footpoint),
        mode,
    })
}

/// Casts the ray `camera_origin → point` onto the mesh.
pub fn ray_correspondence(bvh: &Bvh, mesh: &TriMesh, point: &Point, camera_origin: &Point) -> Option<Correspondence> {
    let d = point - camera_origin;
    let len = d.norm();
    if !(len > 0.0) {
        return None;
    }
    let hit = ray_cast(bvh, mesh, camera_origin, &(d / len))?;
    finish(mesh, point, hit.face, hit.point, CorrespondenceMode::Ray)
}

/// Global closest point on the mesh.
pub fn closest_point_correspondence(bvh: &Bvh, mesh: &TriMesh, point: &Point) -> Option<Correspondence> {
    let hit = bvh.closest_point(mesh, point)?;
    finish(mesh, point, hit.face, hit.point, CorrespondenceMode::ClosestPoint)
}

/// Ray correspondence with closest-point fallback.
pub fn correspond(bvh: &Bvh, mesh: &TriMesh, point: &Point, camera_origin: &Point) -> Option<Correspondence> {
    ray_correspondence(bvh, mesh, point, camera_origin)
        .or_else(|| closest_point_correspondence(bvh, mesh, point))
}

/// How a measured point is paired with the mesh.
pub trait CorrespondencePolicy: Send + Sync {
    fn name(&self) -> &'static str;

    fn correspond(&self, bvh: &Bvh, mesh: &TriMesh, point: &Point, camera_origin: &Point) -> Option<Correspondence>;
}

/// Camera ray first, closest point when the ray misses.
#[derive(Debug, Default, Clone, Copy)]
pub struct RayWithFallback;

impl CorrespondencePolicy for RayWithFallback {
    fn name(&self) -> &'static str {
        "ray"
    }

    fn correspond(&self, bvh: &Bvh, mesh: &TriMesh, point: &Point, camera_origin: &Point) -> Option<Correspondence> {
        correspond(bvh, mesh, point, camera_origin)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ClosestPoint;

impl CorrespondencePolicy for ClosestPoint {
    fn name(&self) -> &'static str {
        "closest-point"
    }

    fn correspond(&self, bvh: &Bvh, mesh: &TriMesh, point: &Point, _camera_origin: &Point) -> Option<Correspondence> {
        closest_point_correspondence(bvh, mesh, point)
    }
}

pub type PolicyRegistry = Registry<Arc<dyn CorrespondencePolicy>>;

/// Registry holding the built-in policies, `ray` and `closest-point`.
pub fn correspondence_policies() -> PolicyRegistry {
    let mut reg: PolicyRegistry = Registry::new("correspondence");
    for p in [
        Arc::new(RayWithFallback) as Arc<dyn CorrespondencePolicy>,
        Arc::new(ClosestPoint),
    ] {
        reg.register(p.name(), p);
    }
    reg
}
