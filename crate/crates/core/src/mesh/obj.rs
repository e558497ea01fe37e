//! Wavefront OBJ input/output (`v` and `f` records only).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let (v, f) = parse_obj(&text, path)?;
    TriangleMesh::new(v, f)
}

/// Parses vertices and faces; polygons are fan-triangulated.
pub fn parse_obj(text: &str, path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<[u32; 3]>)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(line_no, format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(err(line_no, "vertex needs three coordinates".into()));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|e| err(line_no, format!("bad face index {tok:?}: {e}")))?;
                    let resolved = match i {
                        0 => return Err(err(line_no, "face index 0 is invalid (OBJ is 1-based)".into())),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(err(line_no, format!("face index {i} out of range")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(err(line_no, "face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(err(text.lines().count(), "no faces found".into()));
    }
    Ok((vertices, faces))
}

pub fn to_obj_string(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_obj_string(mesh))?;
    Ok(())
}
