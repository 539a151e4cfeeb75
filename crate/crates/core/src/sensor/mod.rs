//! Stereo-camera model and synthetic point-cloud generation.
//!
//! Each simulated point is the first intersection of a pixel-centre ray with
//! the ground-truth mesh, expressed in the camera frame, plus isotropic
//! zero-mean Gaussian noise whose standard deviation grows exponentially with
//! range: `σ(ρ) = a·exp(b·ρ)`.

mod io;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Vec3};
use crate::mesh::TriMesh;
use crate::raycast::Bvh;

pub use io::{read_cloud, sidecar_path, write_cloud, CloudSidecar};

/// Rigid camera pose: maps camera-frame coordinates (x right, y down,
/// z along the optical axis) to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Point,
    pub orientation: UnitQuaternion<f64>,
}

impl CameraPose {
    pub fn new(position: Point, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// Camera at `position` with its optical axis through `target`. The image
    /// y axis points away from `up`.
    pub fn look_at(position: Point, target: Point, up: Vec3) -> Result<Self> {
        let forward = target - position;
        if forward.norm() == 0.0 {
            return Err(Error::InvalidArgument("look_at target equals position".into()));
        }
        let z = forward.normalize();
        let mut right = z.cross(&up);
        if right.norm() < 1e-9 {
            right = z.cross(&Vec3::x());
        }
        let x = right.normalize();
        let y = z.cross(&x);
        let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
        Ok(Self::new(position, UnitQuaternion::from_rotation_matrix(&r)))
    }

    /// Camera on a circle of radius `distance` about `target` in the x–z
    /// plane, tilted by `heading` (radians) from the +z axis and looking at
    /// `target`.
    pub fn orbit(target: Point, distance: f64, heading: f64) -> Result<Self> {
        if !(distance > 0.0) {
            return Err(Error::InvalidArgument(format!("camera distance must be positive, got {distance}")));
        }
        let pos = target + Vec3::new(heading.sin(), 0.0, heading.cos()) * distance;
        Self::look_at(pos, target, Vec3::y())
    }

    pub fn optical_axis(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }

    pub fn to_world(&self, p: &Point) -> Point {
        self.position + self.orientation * p.coords
    }

    pub fn to_camera(&self, p: &Point) -> Point {
        Point::from(self.orientation.inverse() * (p - self.position))
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn from_wxyz(position: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !((norm - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidArgument(format!("pose quaternion has norm {norm}, expected 1")));
        }
        Ok(Self::new(
            Point::from(position),
            UnitQuaternion::new_unchecked(quat),
        ))
    }
}

/// Range-dependent noise `σ(ρ) = a·exp(b·ρ)`, with `a` in metres and `b` in
/// 1/metre. `σ` is a standard deviation; the per-point covariance is `σ²I₃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub a: f64,
    pub b: f64,
}

impl NoiseModel {
    /// Coefficients for a 1280×720 stereo depth stream.
    pub const STEREO_1280X720: NoiseModel = NoiseModel { a: 0.0184, b: 0.2106 };

    pub fn sigma(&self, range: f64) -> Result<f64> {
        if !(range >= 0.0) {
            return Err(Error::InvalidArgument(format!("range must be non-negative, got {range}")));
        }
        Ok(self.a * (self.b * range).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Horizontal and vertical field of view, radians.
    pub fov: [f64; 2],
    /// Image width and height, pixels.
    pub resolution: [u32; 2],
    pub noise: NoiseModel,
    pub min_range: f64,
    pub max_range: f64,
    /// Cast one ray every `stride` pixels along each image axis.
    pub stride: u32,
}

impl Default for CameraModel {
    /// Intel RealSense D415 depth stream at 1280×720 (65°×40° field of view).
    fn default() -> Self {
        Self {
            fov: [65f64.to_radians(), 40f64.to_radians()],
            resolution: [1280, 720],
            noise: NoiseModel::STEREO_1280X720,
            min_range: 0.1,
            max_range: 10.0,
            stride: 1,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.fov.iter().any(|f| !(*f > 0.0 && *f < std::f64::consts::PI)) {
            return bad(format!("field of view {:?} outside (0, π)", self.fov));
        }
        if self.resolution.contains(&0) || self.stride == 0 {
            return bad("resolution and stride must be positive".into());
        }
        if !(self.noise.a >= 0.0) || !self.noise.b.is_finite() {
            return bad(format!("invalid noise coefficients {:?}", self.noise));
        }
        if !(self.min_range >= 0.0 && self.max_range > self.min_range) {
            return bad(format!("invalid range limits [{}, {}]", self.min_range, self.max_range));
        }
        Ok(())
    }

    fn focal(&self) -> (f64, f64) {
        (
            self.resolution[0] as f64 / 2.0 / (self.fov[0] / 2.0).tan(),
            self.resolution[1] as f64 / 2.0 / (self.fov[1] / 2.0).tan(),
        )
    }

    /// Unit ray direction through the centre of pixel `(u, v)`, camera frame.
    pub fn pixel_ray(&self, u: u32, v: u32) -> Vec3 {
        let (fx, fy) = self.focal();
        Vec3::new(
            (u as f64 + 0.5 - self.resolution[0] as f64 / 2.0) / fx,
            (v as f64 + 0.5 - self.resolution[1] as f64 / 2.0) / fy,
            1.0,
        )
        .normalize()
    }

    /// Continuous pixel coordinates of a camera-frame point in front of the
    /// camera.
    pub fn project(&self, p: &Point) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let (fx, fy) = self.focal();
        Some((
            fx * p.x / p.z + self.resolution[0] as f64 / 2.0,
            fy * p.y / p.z + self.resolution[1] as f64 / 2.0,
        ))
    }
}

pub fn noise_sigma(model: &CameraModel, range: f64) -> Result<f64> {
    model.noise.sigma(range)
}

/// Points in the camera frame together with the pose and model that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub pose: CameraPose,
    pub model: CameraModel,
    /// Acquisition index `k`.
    pub seq: u64,
    pub config_hash: Option<String>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn world_points(&self) -> impl Iterator<Item = Point> + '_ {
        self.points.iter().map(|p| self.pose.to_world(p))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of sub-stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream)
}

/// Independent noise stream for one pixel ray, so that results do not
/// depend on evaluation order.
pub(crate) fn ray_rng(seed: u64, ray: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, ray))
}

/// Pixel window `[u0, u1) × [v0, v1)` that can see `mesh`; the whole image
/// if any corner of the mesh box is behind the camera.
fn visible_window(mesh: &TriMesh, pose: &CameraPose, model: &CameraModel) -> Option<[u32; 4]> {
    let [w, h] = model.resolution;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in mesh.bbox().corners() {
        let pc = pose.to_camera(&c);
        let Some((u, v)) = model.project(&pc) else {
            return Some([0, w, 0, h]);
        };
        lo = [lo[0].min(u), lo[1].min(v)];
        hi = [hi[0].max(u), hi[1].max(v)];
    }
    let clamp = |x: f64, n: u32| x.clamp(0.0, n as f64);
    let u0 = clamp(lo[0].floor() - 1.0, w) as u32;
    let u1 = clamp(hi[0].ceil() + 1.0, w) as u32;
    let v0 = clamp(lo[1].floor() - 1.0, h) as u32;
    let v1 = clamp(hi[1].ceil() + 1.0, h) as u32;
    (u0 < u1 && v0 < v1).then_some([u0, u1, v0, v1])
}

/// Renders `truth_mesh` from `pose` and perturbs each hit with range-scaled
/// Gaussian noise. Deterministic in `seed`; pixels outside the projected
/// bounding box of the mesh are skipped since their rays cannot hit it.
pub fn simulate_cloud(
    truth_mesh: &TriMesh,
    bvh: &Bvh,
    pose: &CameraPose,
    model: &CameraModel,
    seed: u64,
) -> Result<PointCloud> {
    model.validate()?;
    let mut cloud = PointCloud {
        points: Vec::new(),
        pose: *pose,
        model: *model,
        seq: 0,
        config_hash: None,
    };
    let Some([u0, u1, v0, v1]) = visible_window(truth_mesh, pose, model) else {
        return Ok(cloud);
    };
    let s = model.stride;
    let rows: Vec<u32> = (v0..v1).filter(|v| v % s == 0).collect();
    let per_row: Vec<Vec<Point>> = rows
        .par_iter()
        .map(|&v| {
            let mut out = Vec::new();
            for u in (u0..u1).filter(|u| u % s == 0) {
                let dir_c = model.pixel_ray(u, v);
                let dir_w = pose.orientation * dir_c;
                let Some(hit) =
                    bvh.intersect(truth_mesh, &pose.position, &dir_w, model.min_range, model.max_range)
                else {
                    continue;
                };
                let sigma = model.noise.a * (model.noise.b * hit.t).exp();
                let clean = Point::from(dir_c * hit.t);
                if sigma == 0.0 {
                    out.push(clean);
                    continue;
                }
                let ray = v as u64 * model.resolution[0] as u64 + u as u64;
                let mut rng = ray_rng(seed, ray);
                let eps = Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                out.push(clean + eps * sigma);
            }
            out
        })
        .collect();
    cloud.points = per_row.into_iter().flatten().collect();
    Ok(cloud)
}
