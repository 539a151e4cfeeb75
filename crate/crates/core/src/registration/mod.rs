//! Rigid refinement of a cloud pose against the nominal mesh.
//!
//! Point-to-point ICP: each iteration pairs every transformed cloud point
//! with its closest point on the mesh, discards the worst tenth of the pairs
//! and solves the orthogonal Procrustes problem for the incremental motion.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Vec3};
use crate::mesh::TriMesh;
use crate::raycast::Bvh;
use crate::sensor::{CameraPose, PointCloud};

/// `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRepr", try_from = "TransformRepr")]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    /// `[w, x, y, z]`.
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let q = t.rotation.quaternion();
        Self {
            rotation: [q.w, q.i, q.j, q.k],
            translation: t.translation.into(),
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        let q = nalgebra::Quaternion::new(r.rotation[0], r.rotation[1], r.rotation[2], r.rotation[3]);
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("rotation quaternion has norm {}", q.norm())));
        }
        Ok(Self::new(UnitQuaternion::new_unchecked(q), r.translation.into()))
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rot = match Unit::try_new(axis, 1e-15) {
            Some(ax) => UnitQuaternion::from_axis_angle(&ax, angle),
            None => UnitQuaternion::identity(),
        };
        Self::new(rot, translation)
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let r = self.rotation.inverse();
        RigidTransform::new(r, -(r * self.translation))
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Pose of a camera whose world frame is moved by `self`.
    pub fn apply_to_pose(&self, pose: &CameraPose) -> CameraPose {
        CameraPose::new(self.apply(&pose.position), self.rotation * pose.orientation)
    }

    /// Largest of translation distance (m) and rotation angle (rad) between
    /// two transforms.
    pub fn distance(&self, other: &RigidTransform) -> f64 {
        let d = self.inverse().compose(other);
        d.translation.norm().max(d.rotation_angle())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpOptions {
    pub max_iter: usize,
    /// Stop once translation step (m) plus rotation step (rad) fall below this.
    pub tol: f64,
    /// Fraction of the largest residuals dropped each iteration.
    pub trim: f64,
    /// Consecutive residual increases tolerated before reporting divergence.
    pub divergence_window: usize,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-7,
            trim: 0.1,
            divergence_window: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    /// Correction to apply to the world-frame cloud.
    pub transform: RigidTransform,
    /// RMS point-to-mesh distance of all points under `transform`.
    pub rms_residual: f64,
    /// RMS under the initial transform.
    pub initial_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]`.
pub fn kabsch(src: &[Point], dst: &[Point]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            expected: src.len(),
            actual: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::TooFewCorrespondences(src.len()));
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, sign)) * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Ok(RigidTransform::new(rot, cd - rot * cs))
}

fn closest(mesh: &TriMesh, bvh: &Bvh, pts: &[Point], t: &RigidTransform) -> Vec<(Point, Point, f64)> {
    pts.par_iter()
        .filter_map(|p| {
            let q = t.apply(p);
            bvh.closest_point(mesh, &q).map(|h| (q, h.point, h.distance))
        })
        .collect()
}

fn rms(pairs: &[(Point, Point, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    (pairs.iter().map(|p| p.2 * p.2).sum::<f64>() / pairs.len() as f64).sqrt()
}

/// RMS closest-point distance from the transformed world points to the mesh.
pub fn rms_residual(mesh: &TriMesh, bvh: &Bvh, world_points: &[Point], t: &RigidTransform) -> f64 {
    rms(&closest(mesh, bvh, world_points, t))
}

/// Aligns the world-frame points of `cloud` to `mesh`, starting from
/// `initial`. The returned transform is the best (lowest full RMS) iterate,
/// so it is never worse than `initial`.
pub fn icp_align(
    cloud: &PointCloud,
    mesh: &TriMesh,
    bvh: &Bvh,
    initial: &RigidTransform,
    opts: &IcpOptions,
) -> Result<IcpResult> {
    let pts: Vec<Point> = cloud.world_points().collect();
    icp_align_points(&pts, mesh, bvh, initial, opts)
}

pub fn icp_align_points(
    pts: &[Point],
    mesh: &TriMesh,
    bvh: &Bvh,
    initial: &RigidTransform,
    opts: &IcpOptions,
) -> Result<IcpResult> {
    if !(0.0..1.0).contains(&opts.trim) || !(opts.tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad ICP options {opts:?}")));
    }
    let mut t = *initial;
    let mut pairs = closest(mesh, bvh, pts, &t);
    if pairs.len() < 3 {
        return Err(Error::TooFewCorrespondences(pairs.len()));
    }
    let initial_rms = rms(&pairs);
    let mut best = (t, initial_rms);
    let mut prev_trimmed = f64::INFINITY;
    let mut rising = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        pairs.sort_by(|a, b| a.2.total_cmp(&b.2));
        let keep = ((pairs.len() as f64 * (1.0 - opts.trim)).ceil() as usize)
            .max(3)
            .min(pairs.len());
        let kept = &pairs[..keep];
        let trimmed = rms(kept);
        if trimmed > prev_trimmed {
            rising += 1;
            if rising >= opts.divergence_window {
                return Err(Error::Divergence(rising));
            }
        } else {
            rising = 0;
        }
        prev_trimmed = trimmed;

        let src: Vec<Point> = kept.iter().map(|p| p.0).collect();
        let dst: Vec<Point> = kept.iter().map(|p| p.1).collect();
        let step = kabsch(&src, &dst)?;
        t = step.compose(&t);
        pairs = closest(mesh, bvh, pts, &t);
        if pairs.len() < 3 {
            return Err(Error::TooFewCorrespondences(pairs.len()));
        }
        let full = rms(&pairs);
        if full < best.1 {
            best = (t, full);
        }
        if step.translation.norm() + step.rotation_angle() < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        transform: best.0,
        rms_residual: best.1,
        initial_rms,
        iterations,
        converged,
    })
}
