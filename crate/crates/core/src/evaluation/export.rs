use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMapRow {
    pub face_index: usize,
    pub centroid: [f64; 3],
    pub value: f64,
}

/// Blue (negative) through white to red (positive), scaled by `max_abs`.
fn diverging(v: f64, max_abs: f64) -> [u8; 3] {
    let s = if max_abs > 0.0 { (v / max_abs).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |t: f64| (255.0 * (1.0 - t)).round() as u8;
    if s >= 0.0 {
        [255, fade(s), fade(s)]
    } else {
        [fade(-s), fade(-s), 255]
    }
}

/// Writes `csv_path` (face_index, centroid, value) and, next to it, an ASCII
/// PLY with one colour per face.
pub fn export_error_map(mesh: &TriMesh, values: &[f64], csv_path: impl AsRef<Path>) -> Result<()> {
    if values.len() != mesh.n_faces() {
        return Err(Error::LengthMismatch {
            expected: mesh.n_faces(),
            actual: values.len(),
        });
    }
    let csv_path = csv_path.as_ref();
    let mut csv = String::from("face_index,cx,cy,cz,value\n");
    for (j, v) in values.iter().enumerate() {
        let c = mesh.centroid(j);
        let _ = writeln!(csv, "{j},{},{},{},{}", c.x, c.y, c.z, v);
    }
    std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;

    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut ply = String::from("ply\nformat ascii 1.0\ncomment per-face deviation map\n");
    let _ = writeln!(ply, "element vertex {}", mesh.n_vertices());
    ply.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(ply, "element face {}", mesh.n_faces());
    ply.push_str("property list uchar int vertex_indices\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for v in mesh.vertices() {
        let _ = writeln!(ply, "{} {} {}", v.x, v.y, v.z);
    }
    for (f, v) in mesh.faces().iter().zip(values) {
        let [r, g, b] = diverging(*v, max_abs);
        let _ = writeln!(ply, "3 {} {} {} {r} {g} {b}", f[0], f[1], f[2]);
    }
    let ply_path = csv_path.with_extension("ply");
    std::fs::write(&ply_path, ply).map_err(|e| Error::io(&ply_path, e))
}

pub fn read_error_map(csv_path: impl AsRef<Path>) -> Result<Vec<ErrorMapRow>> {
    let path = csv_path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: &str| Error::Parse {
        format: "CSV",
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "face_index,cx,cy,cz,value" => {}
        _ => return Err(err(1, "missing header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(err(i + 1, "expected 5 columns"));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| err(i + 1, "bad number"));
        rows.push(ErrorMapRow {
            face_index: cols[0].parse().map_err(|_| err(i + 1, "bad face index"))?,
            centroid: [f(cols[1])?, f(cols[2])?, f(cols[3])?],
            value: f(cols[4])?,
        });
    }
    Ok(rows)
}
