use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point, Vec3};
use crate::mesh::TriMesh;
use crate::raycast::{Bvh, CorrespondencePolicy};
use crate::registration::RigidTransform;
use crate::sensor::PointCloud;

/// Observations of one cloud: per point the residual `δ = z − z̄`, the face
/// it landed on, that face's unit normal and the noise standard deviation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementBatch {
    pub residuals: Vec<Vec3>,
    pub face_of: Vec<usize>,
    pub sigma_of: Vec<f64>,
    pub normals: Vec<Vec3>,
    /// Points with no correspondence on the mesh.
    pub dropped: usize,
    /// Points whose footpoint lies within the border exclusion band.
    pub excluded: usize,
}

/// One scalar pseudo-measurement per observed face: the information-weighted
/// sum of all projected residuals on that face.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompressedBatch {
    /// Strictly increasing face indices.
    pub faces: Vec<usize>,
    /// `Σ 1/σᵢ²`.
    pub information: Vec<f64>,
    /// `Σ n̂ᵀδᵢ/σᵢ²`.
    pub weighted: Vec<f64>,
    /// Number of raw measurements per face.
    pub counts: Vec<u64>,
}

impl CompressedBatch {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Fused scalar observation `y` of face `faces[m]`.
    pub fn value(&self, m: usize) -> f64 {
        self.weighted[m] / self.information[m]
    }

    /// Variance of `value(m)`.
    pub fn variance(&self, m: usize) -> f64 {
        1.0 / self.information[m]
    }
}

impl MeasurementBatch {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn push(&mut self, residual: Vec3, face: usize, sigma: f64, normal: Vec3) {
        self.residuals.push(residual);
        self.face_of.push(face);
        self.sigma_of.push(sigma);
        self.normals.push(normal);
    }

    pub fn validate(&self, n_faces: usize) -> Result<()> {
        let n = self.residuals.len();
        for len in [self.face_of.len(), self.sigma_of.len(), self.normals.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        if let Some(&j) = self.face_of.iter().find(|&&j| j >= n_faces) {
            return Err(Error::InvalidArgument(format!("face index {j} out of range for {n_faces} faces")));
        }
        if self.residuals.iter().chain(&self.normals).any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("measurement batch"));
        }
        if let Some(s) = self.sigma_of.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("measurement sigma must be positive and finite, got {s}")));
        }
        Ok(())
    }

    /// Projected scalar residual `n̂ᵀδ` of measurement `i`.
    pub fn projected(&self, i: usize) -> f64 {
        self.normals[i].dot(&self.residuals[i])
    }

    /// Fuses all measurements on the same face into one scalar observation.
    pub fn compress(&self, n_faces: usize) -> Result<CompressedBatch> {
        self.validate(n_faces)?;
        let mut info = vec![0.0; n_faces];
        let mut weighted = vec![0.0; n_faces];
        let mut counts = vec![0u64; n_faces];
        for i in 0..self.len() {
            let j = self.face_of[i];
            let w = 1.0 / (self.sigma_of[i] * self.sigma_of[i]);
            info[j] += self.normals[i].norm_squared() * w;
            weighted[j] += self.projected(i) * w;
            counts[j] += 1;
        }
        let mut out = CompressedBatch::default();
        for j in (0..n_faces).filter(|&j| counts[j] > 0) {
            out.faces.push(j);
            out.information.push(info[j]);
            out.weighted.push(weighted[j]);
            out.counts.push(counts[j]);
        }
        Ok(out)
    }
}

/// Turns a cloud into face observations against the nominal `mesh`.
///
/// Points are moved to the world frame by the cloud pose and then by
/// `correction` (an ICP result, if any). Points without a correspondence are
/// counted in `dropped`; points whose footpoint lies closer than
/// `border_exclusion` to the mesh boundary are counted in `excluded`. The
/// noise level of each point uses its camera-frame range.
pub fn assemble_batch(
    cloud: &PointCloud,
    mesh: &TriMesh,
    bvh: &Bvh,
    border_exclusion: f64,
    policy: &dyn CorrespondencePolicy,
    correction: Option<&RigidTransform>,
) -> Result<MeasurementBatch> {
    if !(border_exclusion >= 0.0) {
        return Err(Error::InvalidArgument(format!("border exclusion must be non-negative, got {border_exclusion}")));
    }
    let pose = match correction {
        Some(t) => t.apply_to_pose(&cloud.pose),
        None => cloud.pose,
    };
    let origin = pose.position;
    let noise = cloud.model.noise;
    enum Outcome {
        Hit(Vec3, usize, f64, Vec3),
        Dropped,
        Excluded,
    }
    let outcomes: Vec<Outcome> = cloud
        .points
        .par_iter()
        .map(|zc| {
            let z: Point = pose.to_world(zc);
            let Some(c) = policy.correspond(bvh, mesh, &z, &origin) else {
                return Outcome::Dropped;
            };
            if c.border_distance < border_exclusion {
                return Outcome::Excluded;
            }
            let Some(n) = mesh.face_normals()[c.face_index] else {
                return Outcome::Dropped;
            };
            let sigma = noise.a * (noise.b * zc.coords.norm()).exp();
            Outcome::Hit(z - c.footpoint, c.face_index, sigma, n)
        })
        .collect();
    let mut batch = MeasurementBatch::default();
    for o in outcomes {
        match o {
            Outcome::Hit(d, j, s, n) => batch.push(d, j, s, n),
            Outcome::Dropped => batch.dropped += 1,
            Outcome::Excluded => batch.excluded += 1,
        }
    }
    if batch.sigma_of.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument("noise model yields non-positive sigma".into()));
    }
    Ok(batch)
}
