use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CameraModel, CameraPose, NoiseModel, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::Point;

/// JSON written next to every cloud file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSidecar {
    pub position: [f64; 3],
    /// `[w, x, y, z]`.
    pub quaternion: [f64; 4],
    pub seq: u64,
    pub model: SidecarModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarModel {
    pub a: f64,
    pub b: f64,
    /// Radians.
    pub fov: [f64; 2],
    pub res: [u32; 2],
    pub min_range: f64,
    pub max_range: f64,
    pub stride: u32,
}

impl From<&CameraModel> for SidecarModel {
    fn from(m: &CameraModel) -> Self {
        Self {
            a: m.noise.a,
            b: m.noise.b,
            fov: m.fov,
            res: m.resolution,
            min_range: m.min_range,
            max_range: m.max_range,
            stride: m.stride,
        }
    }
}

impl From<&SidecarModel> for CameraModel {
    fn from(m: &SidecarModel) -> Self {
        Self {
            fov: m.fov,
            resolution: m.res,
            noise: NoiseModel { a: m.a, b: m.b },
            min_range: m.min_range,
            max_range: m.max_range,
            stride: m.stride,
        }
    }
}

/// `cloud.ply` → `cloud.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(64 * cloud.len() + 256);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment seq {}", cloud.seq);
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in &cloud.points {
        let _ = writeln!(s, "{:e} {:e} {:e}", p.x, p.y, p.z);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))?;

    let sidecar = CloudSidecar {
        position: cloud.pose.position.coords.into(),
        quaternion: cloud.pose.quaternion_wxyz(),
        seq: cloud.seq,
        model: (&cloud.model).into(),
        config_hash: cloud.config_hash.clone(),
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
}

fn ply_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        format: "PLY",
        line,
        msg: msg.into(),
    }
}

/// Parses an ASCII PLY body with one `vertex` element whose first three
/// properties are `x y z`.
pub(crate) fn parse_ply_points(text: &str) -> Result<Vec<Point>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(ply_err(1, "missing `ply` magic")),
    }
    let mut n_vertex: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut saw_format = false;
    loop {
        let Some((ln, line)) = lines.next() else {
            return Err(ply_err(0, "missing end_header"));
        };
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => return Err(ply_err(ln, format!("unsupported format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    n_vertex = Some(count.parse().map_err(|_| ply_err(ln, "bad vertex count"))?);
                }
            }
            ["property", ty, name] if in_vertex => {
                if !matches!(*ty, "double" | "float" | "float64" | "float32") {
                    return Err(ply_err(ln, format!("unsupported property type `{ty}`")));
                }
                props.push(name.to_string());
            }
            ["property", ..] => {}
            _ => return Err(ply_err(ln, format!("unexpected header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(ply_err(0, "missing format line"));
    }
    let n = n_vertex.ok_or_else(|| ply_err(0, "no vertex element"))?;
    if props.len() < 3 || props[..3] != ["x", "y", "z"] {
        return Err(ply_err(0, "vertex properties must start with x y z"));
    }
    let mut pts = Vec::with_capacity(n);
    for (ln, line) in lines {
        if pts.len() == n {
            if line.is_empty() {
                continue;
            }
            return Err(ply_err(ln, "more vertices than declared"));
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| ply_err(ln, "bad number"))?;
        if vals.len() != props.len() {
            return Err(ply_err(ln, format!("expected {} values, found {}", props.len(), vals.len())));
        }
        if !vals[..3].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("point cloud"));
        }
        pts.push(Point::new(vals[0], vals[1], vals[2]));
    }
    if pts.len() != n {
        return Err(ply_err(0, format!("declared {n} vertices, found {}", pts.len())));
    }
    Ok(pts)
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let points = parse_ply_points(&text)?;
    let side = sidecar_path(path);
    let json = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CloudSidecar = serde_json::from_str(&json)?;
    let pose = CameraPose::from_wxyz(meta.position, meta.quaternion)?;
    Ok(PointCloud {
        points,
        pose,
        model: (&meta.model).into(),
        seq: meta.seq,
        config_hash: meta.config_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn cloud(points: Vec<Point>) -> PointCloud {
        PointCloud {
            points,
            pose: CameraPose::look_at(Point::new(0.1, 0.0, 0.5), Point::origin(), Vec3::y()).unwrap(),
            model: CameraModel::default(),
            seq: 4,
            config_hash: Some("0123456789abcdef".into()),
        }
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for pts in [
            vec![],
            vec![
                Point::new(0.1, -0.2, 0.5),
                Point::new(1e-7, 3.0, -0.25),
                Point::new(std::f64::consts::PI, 0.0, 1.0 / 3.0),
            ],
        ] {
            let c = cloud(pts);
            let p = dir.path().join("c.ply");
            write_cloud(&c, &p).unwrap();
            let back = read_cloud(&p).unwrap();
            assert_eq!(back.points, c.points);
            assert_eq!(back.seq, 4);
            assert_eq!(back.model, c.model);
            assert_eq!(back.config_hash, c.config_hash);
            assert!(back.pose.orientation.angle_to(&c.pose.orientation) < 1e-12);
        }
    }

    #[test]
    fn missing_sidecar_and_bad_ply() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        write_cloud(&cloud(vec![Point::origin()]), &p).unwrap();
        std::fs::remove_file(sidecar_path(&p)).unwrap();
        assert!(matches!(read_cloud(&p), Err(Error::Io { .. })));

        let bad = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n";
        assert!(matches!(parse_ply_points(bad), Err(Error::Parse { .. })));
        assert!(parse_ply_points("solid x\n").is_err());
        let extra = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n4 5 6\n";
        assert!(parse_ply_points(extra).is_err());
        let nan = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\nnan 2 3\n";
        assert!(parse_ply_points(nan).is_err());
    }
}
