//! Triangle mesh data model.
//!
//! A [`TriMesh`] is an indexed triangle list in metres. Derived data (face
//! normals, vertex adjacency, boundary edges) is computed on first use and
//! cached; the mesh itself is immutable after construction.

mod generate;
mod normal;
mod stl;

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Aabb, Point, Vec3};

pub use generate::{add_spherical_defect, apply_state, generate_tablet, Protrusion, SphericalDefect};
pub use normal::{scatter_matrix, vertex_normal_newton, NewtonOptions, VertexNormal};
pub use stl::{parse_stl, read_stl, stl_header_tag, write_stl, write_stl_file, StlFormat};

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point>,
    faces: Vec<[usize; 3]>,
    normals: OnceLock<Vec<Option<Vec3>>>,
    adjacency: OnceLock<Vec<Vec<usize>>>,
    boundary: OnceLock<Vec<[usize; 2]>>,
}

/// Summary written by `surfdefect mesh`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshReport {
    pub n_v: usize,
    pub n_f: usize,
    pub bbox: Aabb,
    pub area: f64,
}

impl TriMesh {
    /// Builds a mesh from 0-based face indices.
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.iter().any(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("mesh vertices"));
        }
        for (j, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "face {j} references vertex outside 0..{}",
                    vertices.len()
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {j} repeats a vertex: {f:?}")));
            }
        }
        Ok(Self {
            vertices,
            faces,
            normals: OnceLock::new(),
            adjacency: OnceLock::new(),
            boundary: OnceLock::new(),
        })
    }

    /// Builds a mesh from 1-based face indices, as mesh matrices are usually
    /// written in MATLAB code.
    pub fn from_one_based(vertices: Vec<Point>, faces: &[[usize; 3]]) -> Result<Self> {
        let mut zero = Vec::with_capacity(faces.len());
        for f in faces {
            if f.contains(&0) {
                return Err(Error::InvalidMesh("1-based face index 0".into()));
            }
            zero.push([f[0] - 1, f[1] - 1, f[2] - 1]);
        }
        Self::new(vertices, zero)
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("empty mesh is valid")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Point; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn centroid(&self, face: usize) -> Point {
        let [a, b, c] = self.triangle(face);
        Point::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.n_faces()).map(|j| self.face_area(j)).sum()
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Unit normal of `face`, oriented by the stored winding (right-hand rule).
    pub fn face_normal(&self, face: usize) -> Result<Vec3> {
        if face >= self.n_faces() {
            return Err(Error::InvalidArgument(format!(
                "face index {face} out of range 0..{}",
                self.n_faces()
            )));
        }
        self.face_normals()[face].ok_or(Error::DegenerateFace(face))
    }

    /// Cached normals for all faces; `None` marks zero-area faces.
    pub fn face_normals(&self) -> &[Option<Vec3>] {
        self.normals.get_or_init(|| {
            (0..self.n_faces())
                .map(|j| {
                    let [a, b, c] = self.triangle(j);
                    let n = (b - a).cross(&(c - a));
                    let len = n.norm();
                    let scale = (b - a).norm() * (c - a).norm();
                    if len <= 1e-14 * scale || len == 0.0 {
                        None
                    } else {
                        Some(n / len)
                    }
                })
                .collect()
        })
    }

    /// For each vertex, the sorted indices of vertices sharing an edge with it.
    pub fn vertex_adjacency(&self) -> &[Vec<usize>] {
        self.adjacency.get_or_init(|| {
            let mut sets = vec![BTreeSet::new(); self.n_vertices()];
            for f in &self.faces {
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    sets[a].insert(b);
                    sets[b].insert(a);
                }
            }
            sets.into_iter().map(|s| s.into_iter().collect()).collect()
        })
    }

    /// Faces incident to each vertex.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices()];
        for (j, f) in self.faces.iter().enumerate() {
            for &v in f {
                out[v].push(j);
            }
        }
        out
    }

    /// Number of faces using each undirected edge, keyed by `(min, max)`.
    pub fn edge_use_counts(&self) -> HashMap<[usize; 2], usize> {
        let mut counts = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry([a.min(b), a.max(b)]).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Edges used by exactly one face, sorted.
    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        self.boundary.get_or_init(|| {
            let mut edges: Vec<_> = self
                .edge_use_counts()
                .into_iter()
                .filter_map(|(e, n)| (n == 1).then_some(e))
                .collect();
            edges.sort_unstable();
            edges
        })
    }

    /// Euclidean distance from `p` to the nearest boundary edge, or infinity
    /// for a closed mesh.
    pub fn distance_to_boundary(&self, p: &Point) -> f64 {
        self.boundary_edges()
            .iter()
            .map(|[a, b]| point_segment_distance(p, &self.vertices[*a], &self.vertices[*b]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Stable content hash of vertex coordinates and connectivity.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_vertices() as u64).to_le_bytes());
        h.update((self.n_faces() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v.coords.iter() {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        for f in &self.faces {
            for &i in f {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// True when both meshes list the same triangles (by coordinates) in the
    /// same face order, regardless of vertex numbering.
    pub fn same_face_geometry(&self, other: &TriMesh) -> bool {
        self.n_faces() == other.n_faces()
            && (0..self.n_faces()).all(|j| self.triangle(j) == other.triangle(j))
    }

    pub fn report(&self) -> MeshReport {
        MeshReport {
            n_v: self.n_vertices(),
            n_f: self.n_faces(),
            bbox: self.bbox(),
            area: self.area(),
        }
    }
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.faces == other.faces
    }
}

/// The five-vertex, three-face planar example mesh (1-based faces
/// `(1,2,5) (2,4,5) (2,3,4)`).
pub fn example_mesh() -> TriMesh {
    let v = vec![
        Point::new(0.0, 0.0, 0.0),
        Point::new(3.0, 0.0, 0.0),
        Point::new(6.0, -1.0, 0.0),
        Point::new(5.0, 2.0, 0.0),
        Point::new(2.0, 2.0, 0.0),
    ];
    TriMesh::from_one_based(v, &[[1, 2, 5], [2, 4, 5], [2, 3, 4]]).expect("example mesh is valid")
}
