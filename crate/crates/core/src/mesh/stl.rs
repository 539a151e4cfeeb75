//! Binary and ASCII STL reading and writing.
//!
//! STL stores a triangle soup; on parse, vertices are merged when their
//! coordinates agree after quantisation to 1e-9 m, which is what gives the
//! mesh its adjacency.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, Vec3};

use super::TriMesh;

const HEADER_LEN: usize = 80;
const RECORD_LEN: usize = 50;
const MERGE_QUANTUM: f64 = 1e-9;
const TAG_PREFIX: &str = "surfdefect ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StlFormat {
    Binary,
    Ascii,
}

impl std::str::FromStr for StlFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(StlFormat::Binary),
            "ascii" => Ok(StlFormat::Ascii),
            _ => Err(Error::InvalidArgument(format!("unknown STL format `{s}`"))),
        }
    }
}

pub fn parse_stl(bytes: &[u8]) -> Result<TriMesh> {
    if looks_binary(bytes) {
        return parse_binary(bytes);
    }
    let trimmed = bytes.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(0);
    if bytes[trimmed..].starts_with(b"solid") {
        if let Ok(text) = std::str::from_utf8(bytes) {
            return parse_ascii(text);
        }
    }
    parse_binary(bytes)
}

pub fn read_stl(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_stl(&bytes)
}

/// Serialises `mesh`. `tag` is embedded in the binary header or the ASCII
/// solid name so that artifacts can be traced back to the run that made them.
pub fn write_stl(mesh: &TriMesh, format: StlFormat, tag: Option<&str>) -> Vec<u8> {
    match format {
        StlFormat::Binary => write_binary(mesh, tag),
        StlFormat::Ascii => write_ascii(mesh, tag).into_bytes(),
    }
}

pub fn write_stl_file(
    path: impl AsRef<Path>,
    mesh: &TriMesh,
    format: StlFormat,
    tag: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_stl(mesh, format, tag)).map_err(|e| Error::io(path, e))
}

/// Returns the tag written by [`write_stl`], if any.
pub fn stl_header_tag(bytes: &[u8]) -> Option<String> {
    let head = if looks_binary(bytes) {
        &bytes[..HEADER_LEN]
    } else {
        let end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
        let line = bytes[..end].strip_prefix(b"solid ")?;
        line
    };
    let text = std::str::from_utf8(head).ok()?;
    let text = text.trim_end_matches(['\0', ' ', '\r']);
    text.strip_prefix(TAG_PREFIX)
        .map(str::to_string)
        .filter(|t| !t.is_empty())
}

fn looks_binary(bytes: &[u8]) -> bool {
    if bytes.len() < HEADER_LEN + 4 {
        return false;
    }
    let n = u32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap()) as usize;
    bytes.len() == HEADER_LEN + 4 + n * RECORD_LEN
}

fn parse_binary(bytes: &[u8]) -> Result<TriMesh> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::TruncatedStl {
            expected: HEADER_LEN + 4,
            found: bytes.len(),
        });
    }
    let declared = u32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap()) as usize;
    let body = bytes.len() - HEADER_LEN - 4;
    let expected = HEADER_LEN + 4 + declared * RECORD_LEN;
    if body % RECORD_LEN == 0 && body / RECORD_LEN != declared {
        return Err(Error::TriangleCountMismatch {
            declared,
            actual: body / RECORD_LEN,
        });
    }
    if bytes.len() != expected {
        return Err(Error::TruncatedStl {
            expected,
            found: bytes.len(),
        });
    }

    let mut builder = SoupBuilder::default();
    for rec in bytes[HEADER_LEN + 4..].chunks_exact(RECORD_LEN) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        // floats 0..3 are the stored normal, which is recomputed from the winding
        let tri = [
            Point::new(f(3), f(4), f(5)),
            Point::new(f(6), f(7), f(8)),
            Point::new(f(9), f(10), f(11)),
        ];
        builder.push(tri)?;
    }
    builder.finish()
}

fn parse_ascii(text: &str) -> Result<TriMesh> {
    let err = |line: usize, msg: &str| Error::Parse {
        format: "ASCII STL",
        line,
        msg: msg.to_string(),
    };
    let mut builder = SoupBuilder::default();
    let mut corners: Vec<Point> = Vec::with_capacity(3);
    let mut in_loop = false;
    let mut saw_solid = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut tok = raw.split_whitespace();
        match tok.next() {
            None => continue,
            Some("solid") => saw_solid = true,
            Some("facet") | Some("endsolid") => {}
            Some("outer") => {
                if in_loop {
                    return Err(err(line, "nested outer loop"));
                }
                in_loop = true;
                corners.clear();
            }
            Some("vertex") => {
                if !in_loop {
                    return Err(err(line, "vertex outside outer loop"));
                }
                let xyz: Vec<f64> = tok
                    .map(|t| t.parse::<f64>().map_err(|_| err(line, "bad coordinate")))
                    .collect::<Result<_>>()?;
                if xyz.len() != 3 {
                    return Err(err(line, "vertex needs three coordinates"));
                }
                corners.push(Point::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("endloop") => {
                if corners.len() != 3 {
                    return Err(err(line, "facet must have exactly three vertices"));
                }
                builder.push([corners[0], corners[1], corners[2]])?;
                in_loop = false;
            }
            Some("endfacet") => {
                if in_loop {
                    return Err(err(line, "endfacet before endloop"));
                }
            }
            Some(other) => return Err(err(line, &format!("unexpected keyword `{other}`"))),
        }
    }
    if !saw_solid {
        return Err(err(1, "missing `solid`"));
    }
    if in_loop {
        return Err(Error::TruncatedStl {
            expected: 0,
            found: text.len(),
        });
    }
    builder.finish()
}

#[derive(Default)]
struct SoupBuilder {
    index: HashMap<[i64; 3], usize>,
    vertices: Vec<Point>,
    faces: Vec<[usize; 3]>,
}

impl SoupBuilder {
    fn push(&mut self, tri: [Point; 3]) -> Result<()> {
        let mut face = [0usize; 3];
        for (slot, p) in face.iter_mut().zip(tri.iter()) {
            if !p.coords.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite("STL vertex"));
            }
            let key = [
                (p.x / MERGE_QUANTUM).round() as i64,
                (p.y / MERGE_QUANTUM).round() as i64,
                (p.z / MERGE_QUANTUM).round() as i64,
            ];
            let next = self.vertices.len();
            *slot = *self.index.entry(key).or_insert_with(|| next);
            if *slot == next {
                self.vertices.push(*p);
            }
        }
        self.faces.push(face);
        Ok(())
    }

    fn finish(self) -> Result<TriMesh> {
        TriMesh::new(self.vertices, self.faces)
    }
}

fn record_normal(mesh: &TriMesh, face: usize) -> Vec3 {
    mesh.face_normals()[face].unwrap_or_else(Vec3::zeros)
}

fn write_binary(mesh: &TriMesh, tag: Option<&str>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 + RECORD_LEN * mesh.n_faces());
    let mut header = [b' '; HEADER_LEN];
    let text = match tag {
        Some(t) => format!("{TAG_PREFIX}{t}"),
        None => "binary STL written by surfdefect".to_string(),
    };
    let n = text.len().min(HEADER_LEN);
    header[..n].copy_from_slice(&text.as_bytes()[..n]);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.n_faces() as u32).to_le_bytes());
    for j in 0..mesh.n_faces() {
        let n = record_normal(mesh, j);
        for c in n.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        for p in mesh.triangle(j) {
            for c in p.coords.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

fn write_ascii(mesh: &TriMesh, tag: Option<&str>) -> String {
    let name = match tag {
        Some(t) => format!("{TAG_PREFIX}{t}"),
        None => "surfdefect".to_string(),
    };
    let mut s = String::new();
    writeln!(s, "solid {name}").unwrap();
    for j in 0..mesh.n_faces() {
        let n = record_normal(mesh, j);
        writeln!(s, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z).unwrap();
        writeln!(s, "    outer loop").unwrap();
        for p in mesh.triangle(j) {
            writeln!(s, "      vertex {:e} {:e} {:e}", p.x, p.y, p.z).unwrap();
        }
        writeln!(s, "    endloop").unwrap();
        writeln!(s, "  endfacet").unwrap();
    }
    writeln!(s, "endsolid {name}").unwrap();
    s
}
