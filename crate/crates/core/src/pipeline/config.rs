use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::{Protrusion, SphericalDefect};
use crate::sensor::{CameraModel, NoiseModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefectConfig {
    pub enabled: bool,
    pub radius_mm: f64,
    pub center_mm: [f64; 2],
    pub protrusion: Protrusion,
}

impl Default for DefectConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            radius_mm: 5.0,
            center_mm: [0.0, 0.0],
            protrusion: Protrusion::Outward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Noise scale `a`, metres.
    pub a: f64,
    /// Noise growth `b`, 1/metre.
    pub b: f64,
    pub resolution: [u32; 2],
    pub fov_deg: [f64; 2],
    pub stride: u32,
    pub min_range_m: f64,
    pub max_range_m: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let m = CameraModel::default();
        Self {
            a: m.noise.a,
            b: m.noise.b,
            resolution: m.resolution,
            fov_deg: [m.fov[0].to_degrees(), m.fov[1].to_degrees()],
            stride: m.stride,
            min_range_m: m.min_range,
            max_range_m: m.max_range,
        }
    }
}

impl CameraConfig {
    pub fn model(&self) -> CameraModel {
        CameraModel {
            fov: [self.fov_deg[0].to_radians(), self.fov_deg[1].to_radians()],
            resolution: self.resolution,
            noise: NoiseModel { a: self.a, b: self.b },
            min_range: self.min_range_m,
            max_range: self.max_range_m,
            stride: self.stride,
        }
    }
}

/// Rigid error injected into the reported camera pose of every cloud.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseErrorConfig {
    pub translation_mm: f64,
    pub rotation_deg: f64,
}

/// Everything that determines a run. Lengths carry their unit in the name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh_size_mm: f64,
    /// Resolution of the defective ground-truth tablet.
    pub truth_mesh_size_mm: f64,
    pub tablet_mm: [f64; 2],
    pub defect: DefectConfig,
    /// Uniform offset of the whole truth tablet along +z.
    pub lift_mm: f64,
    pub distance_m: f64,
    pub heading_deg: f64,
    pub camera: CameraConfig,
    pub n_clouds: usize,
    pub sigma0_mm: f64,
    pub border_mm: f64,
    pub seed: u64,
    /// Filter name: `info` or `covariance`.
    pub mode: String,
    /// Correspondence policy: `ray` or `closest-point`.
    pub correspondence: String,
    pub icp: bool,
    pub pose_error: PoseErrorConfig,
    pub flag_threshold_mm: f64,
    pub flag_z: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh_size_mm: 5.0,
            truth_mesh_size_mm: 1.0,
            tablet_mm: [160.0, 100.0],
            defect: DefectConfig::default(),
            lift_mm: 0.0,
            distance_m: 0.5,
            heading_deg: 0.0,
            camera: CameraConfig::default(),
            n_clouds: 50,
            sigma0_mm: 50.0,
            border_mm: 6.0,
            seed: 1,
            mode: "info".into(),
            correspondence: "ray".into(),
            icp: false,
            pose_error: PoseErrorConfig::default(),
            flag_threshold_mm: 1.0,
            flag_z: 3.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let pos = [
            ("mesh_size_mm", self.mesh_size_mm),
            ("truth_mesh_size_mm", self.truth_mesh_size_mm),
            ("tablet width", self.tablet_mm[0]),
            ("tablet height", self.tablet_mm[1]),
            ("distance_m", self.distance_m),
            ("sigma0_mm", self.sigma0_mm),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.border_mm >= 0.0) {
            return bad(format!("border_mm must be non-negative, got {}", self.border_mm));
        }
        if !self.lift_mm.is_finite() || !self.heading_deg.is_finite() {
            return bad("lift_mm and heading_deg must be finite".into());
        }
        if !(self.pose_error.translation_mm >= 0.0 && self.pose_error.rotation_deg >= 0.0) {
            return bad("pose error magnitudes must be non-negative".into());
        }
        self.camera.model().validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            format: "TOML",
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            msg: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a `.toml` or `.json` file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn defect(&self) -> Option<SphericalDefect> {
        let d = &self.defect;
        d.enabled.then(|| {
            SphericalDefect::hemisphere(
                [d.center_mm[0] * 1e-3, d.center_mm[1] * 1e-3],
                d.radius_mm * 1e-3,
                d.protrusion,
            )
        })
    }
}
