//! Synthetic workpieces: the flat test tablet, spherical defects, and
//! deformation of a mesh by a per-vertex state along per-vertex directions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Vec3};

use super::TriMesh;

/// Flat `width × height` tablet in the z = 0 plane, centred on the origin,
/// tiled by right isosceles triangles with legs of at least `mesh_size`.
///
/// Vertices are row-major from the `-y` edge; each grid cell contributes two
/// faces split along its `(-x,-y)`–`(+x,+y)` diagonal, both wound
/// counter-clockwise so that every normal is `+z`.
pub fn generate_tablet(width: f64, height: f64, mesh_size: f64) -> Result<TriMesh> {
    for (name, v) in [("width", width), ("height", height), ("mesh size", mesh_size)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("tablet {name} must be positive, got {v}")));
        }
    }
    let cells = |len: f64| ((len / mesh_size + 1e-9).floor() as usize).max(1);
    let (nx, ny) = (cells(width), cells(height));
    let (dx, dy) = (width / nx as f64, height / ny as f64);

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Point::new(
                (i as f64 - nx as f64 / 2.0) * dx,
                (j as f64 - ny as f64 / 2.0) * dy,
                0.0,
            ));
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new(vertices, faces)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protrusion {
    Outward,
    Inward,
}

/// A sphere cutting the z = 0 plane. With `center_depth = 0` the sphere
/// centre lies on the plane and the cap is a hemisphere of height `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalDefect {
    pub center_xy: [f64; 2],
    pub radius: f64,
    pub protrusion: Protrusion,
    #[serde(default)]
    pub center_depth: f64,
}

impl SphericalDefect {
    pub fn hemisphere(center_xy: [f64; 2], radius: f64, protrusion: Protrusion) -> Self {
        Self {
            center_xy,
            radius,
            protrusion,
            center_depth: 0.0,
        }
    }

    /// Radius of the circle where the sphere meets the plane.
    pub fn footprint_radius(&self) -> f64 {
        (self.radius * self.radius - self.center_depth * self.center_depth).sqrt()
    }

    pub fn cap_height(&self) -> f64 {
        self.radius - self.center_depth
    }

    /// Signed displacement along +z at planar position `(x, y)`; zero outside
    /// the footprint and continuous at its rim.
    pub fn displacement(&self, x: f64, y: f64) -> f64 {
        let rho2 = (x - self.center_xy[0]).powi(2) + (y - self.center_xy[1]).powi(2);
        let r2 = self.radius * self.radius;
        if rho2 >= r2 - self.center_depth * self.center_depth {
            return 0.0;
        }
        let h = ((r2 - rho2).sqrt() - self.center_depth).max(0.0);
        match self.protrusion {
            Protrusion::Outward => h,
            Protrusion::Inward => -h,
        }
    }
}

/// Moves every vertex inside the defect footprint onto the sphere along z.
pub fn add_spherical_defect(mesh: &TriMesh, defect: &SphericalDefect) -> Result<TriMesh> {
    if !(defect.radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "defect radius must be positive, got {}",
            defect.radius
        )));
    }
    if !(0.0..defect.radius).contains(&defect.center_depth) {
        return Err(Error::InvalidArgument(format!(
            "defect centre depth {} must lie in [0, radius)",
            defect.center_depth
        )));
    }
    let bb = mesh.bbox();
    let [cx, cy] = defect.center_xy;
    if mesh.is_empty() || cx < bb.min[0] || cx > bb.max[0] || cy < bb.min[1] || cy > bb.max[1] {
        return Err(Error::InvalidArgument(format!(
            "defect centre ({cx}, {cy}) lies outside the mesh"
        )));
    }
    let vertices = mesh
        .vertices()
        .iter()
        .map(|v| Point::new(v.x, v.y, v.z + defect.displacement(v.x, v.y)))
        .collect();
    TriMesh::new(vertices, mesh.faces().to_vec())
}

/// Returns the mesh whose vertex `i` is `V_i + state[i] * normals[i]`.
pub fn apply_state(mesh: &TriMesh, state: &[f64], normals: &[Vec3]) -> Result<TriMesh> {
    for len in [state.len(), normals.len()] {
        if len != mesh.n_vertices() {
            return Err(Error::LengthMismatch {
                expected: mesh.n_vertices(),
                actual: len,
            });
        }
    }
    let vertices = mesh
        .vertices()
        .iter()
        .zip(state.iter().zip(normals))
        .map(|(v, (&x, n))| v + n * x)
        .collect();
    TriMesh::new(vertices, mesh.faces().to_vec())
}
