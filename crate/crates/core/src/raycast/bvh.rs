use crate::error::{Error, Result};
use crate::geometry::{closest_point_on_triangle, ray_triangle, Aabb, Point, Vec3};
use crate::mesh::TriMesh;

const LEAF_SIZE: usize = 4;

/// Two hits closer than this (metres along the ray, or in squared distance
/// for closest-point queries) are treated as the same hit and resolved in
/// favour of the lower face index.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum NodeKind {
    Inner { left: usize, right: usize },
    Leaf { start: usize, len: usize },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Bounding volume hierarchy over the faces of one mesh.
///
/// Built by recursive median split of face centroids along the longest axis
/// of the node's centroid bounds; deterministic for a given mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    n_faces: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub face: usize,
    pub t: f64,
    pub point: Point,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestHit {
    pub face: usize,
    pub point: Point,
    pub distance: f64,
}

pub fn build_bvh(mesh: &TriMesh) -> Result<Bvh> {
    Bvh::build(mesh)
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let boxes: Vec<Aabb> = (0..mesh.n_faces())
            .map(|j| Aabb::from_points(mesh.triangle(j).iter()))
            .collect();
        let centroids: Vec<Point> = (0..mesh.n_faces()).map(|j| mesh.centroid(j)).collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * mesh.n_faces() / LEAF_SIZE + 1),
            order: (0..mesh.n_faces()).collect(),
            n_faces: mesh.n_faces(),
        };
        bvh.split(0, mesh.n_faces(), &boxes, &centroids);
        Ok(bvh)
    }

    fn split(&mut self, start: usize, end: usize, boxes: &[Aabb], centroids: &[Point]) -> usize {
        let slice = &mut self.order[start..end];
        let bounds = slice.iter().fold(Aabb::empty(), |b, &j| b.union(&boxes[j]));
        let id = self.nodes.len();
        if slice.len() <= LEAF_SIZE {
            self.nodes.push(Node {
                bounds,
                kind: NodeKind::Leaf {
                    start,
                    len: slice.len(),
                },
            });
            return id;
        }
        let axis = Aabb::from_points(slice.iter().map(|&j| &centroids[j])).longest_axis();
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        self.nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf { start, len: 0 },
        });
        let left = self.split(start, start + mid, boxes, centroids);
        let right = self.split(start + mid, end, boxes, centroids);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn n_faces(&self) -> usize {
        self.n_faces
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i].kind {
                NodeKind::Leaf { .. } => 1,
                NodeKind::Inner { left, right } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Face lists of all leaves, in traversal order.
    pub fn leaves(&self) -> Vec<&[usize]> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Leaf { start, len } => Some(&self.order[start..start + len]),
                NodeKind::Inner { .. } => None,
            })
            .collect()
    }

    /// Checks the structural invariants against `mesh`: every face in exactly
    /// one leaf, every box containing its children and faces, bounded depth.
    pub fn validate(&self, mesh: &TriMesh) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMesh(format!("BVH: {m}")));
        if mesh.n_faces() != self.n_faces {
            return bad("face count differs from mesh".into());
        }
        let mut seen = vec![0usize; self.n_faces];
        for leaf in self.leaves() {
            for &j in leaf {
                seen[j] += 1;
            }
        }
        if let Some(j) = seen.iter().position(|&c| c != 1) {
            return bad(format!("face {j} appears in {} leaves", seen[j]));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Leaf { start, len } => {
                    for &j in &self.order[start..start + len] {
                        let b = Aabb::from_points(mesh.triangle(j).iter());
                        if !node.bounds.contains(&b) {
                            return bad(format!("leaf {i} does not contain face {j}"));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    for c in [left, right] {
                        if !node.bounds.contains(&self.nodes[c].bounds) {
                            return bad(format!("node {i} does not contain child {c}"));
                        }
                    }
                }
            }
        }
        let limit = 2.0 * (self.n_faces as f64).log2() + 32.0;
        if self.depth() as f64 > limit {
            return bad(format!("depth {} exceeds {limit}", self.depth()));
        }
        Ok(())
    }

    /// Nearest intersection with `t` in `[t_min, t_max]`.
    pub fn intersect(
        &self,
        mesh: &TriMesh,
        origin: &Point,
        dir: &Vec3,
        t_min: f64,
        t_max: f64,
    ) -> Option<RayHit> {
        let inv = dir.map(|c| 1.0 / c);
        let mut best: Option<RayHit> = None;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            let limit = best.map_or(t_max, |b| b.t + TIE_EPS);
            if node.bounds.ray_entry(origin, &inv, t_min, limit).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
                NodeKind::Leaf { start, len } => {
                    for &j in &self.order[start..start + len] {
                        if let Some(hit) = face_hit(mesh, j, origin, dir, t_min, t_max) {
                            if better_ray(&hit, best.as_ref()) {
                                best = Some(hit);
                            }
                        }
                    }
                }
            }
        }
        best
    }

    /// Closest point on the mesh surface to `p`.
    pub fn closest_point(&self, mesh: &TriMesh, p: &Point) -> Option<ClosestHit> {
        let mut best: Option<(usize, Point, f64)> = None;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if let Some((_, _, d)) = best {
                if node.bounds.distance_squared(p).sqrt() > d + TIE_EPS {
                    continue;
                }
            }
            match node.kind {
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left].bounds.distance_squared(p);
                    let dr = self.nodes[right].bounds.distance_squared(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
                NodeKind::Leaf { start, len } => {
                    for &j in &self.order[start..start + len] {
                        let q = closest_point_on_triangle(p, &mesh.triangle(j));
                        let d = (q - p).norm();
                        let take = match best {
                            None => true,
                            Some((bj, _, bd)) => d < bd - TIE_EPS || ((d - bd).abs() <= TIE_EPS && j < bj),
                        };
                        if take {
                            best = Some((j, q, d));
                        }
                    }
                }
            }
        }
        best.map(|(face, point, distance)| ClosestHit { face, point, distance })
    }
}

pub(crate) fn face_hit(
    mesh: &TriMesh,
    face: usize,
    origin: &Point,
    dir: &Vec3,
    t_min: f64,
    t_max: f64,
) -> Option<RayHit> {
    let tri = mesh.triangle(face);
    let (t, u, v) = ray_triangle(origin, dir, &tri)?;
    if t < t_min || t > t_max {
        return None;
    }
    let point = tri[0] + (tri[1] - tri[0]) * u + (tri[2] - tri[0]) * v;
    Some(RayHit { face, t, point })
}

pub(crate) fn better_ray(hit: &RayHit, best: Option<&RayHit>) -> bool {
    match best {
        None => true,
        Some(b) => hit.t < b.t - TIE_EPS || ((hit.t - b.t).abs() <= TIE_EPS && hit.face < b.face),
    }
}
