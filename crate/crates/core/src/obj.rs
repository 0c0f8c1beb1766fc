//! Wavefront OBJ subset: `v`, `vt`, `vn` and `f` records.
//!
//! Polygons are fan-triangulated. Materials, groups and other records are
//! ignored. Indices are 1-based; negative (relative) indices are accepted.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{compute_vertex_normals, TriMesh, Vec2, Vec3};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mesh, isolated) = parse_obj(&text)?;
    if !isolated.is_empty() {
        eprintln!(
            "warning: {}: {} isolated vertices given a +Z normal",
            path.display(),
            isolated.len()
        );
    }
    Ok(mesh)
}

/// Parses OBJ text. Returns the mesh and any isolated vertex indices.
pub fn parse_obj(text: &str) -> Result<(TriMesh, Vec<usize>)> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<Vec2> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    // Per-position uv / normal index, taken from the first face corner that
    // references the position.
    let mut vt_of: Vec<Option<usize>> = Vec::new();
    let mut vn_of: Vec<Option<usize>> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let tag = tokens.next().unwrap();
        let rest: Vec<&str> = tokens.collect();
        match tag {
            "v" => {
                let c = parse_floats(&rest, 3, line)?;
                positions.push(Vec3::new(c[0], c[1], c[2]));
                vt_of.push(None);
                vn_of.push(None);
            }
            "vt" => {
                let c = parse_floats(&rest, 2, line)?;
                texcoords.push(Vec2::new(c[0], c[1]));
            }
            "vn" => {
                let c = parse_floats(&rest, 3, line)?;
                normals.push(Vec3::new(c[0], c[1], c[2]));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        message: format!("face with {} corners", rest.len()),
                    });
                }
                let mut corners = Vec::with_capacity(rest.len());
                for tok in &rest {
                    let mut parts = tok.split('/');
                    let v = resolve_index(parts.next().unwrap_or(""), positions.len(), line, "v")?
                        .ok_or_else(|| Error::Parse {
                            line,
                            message: format!("face corner '{tok}' has no vertex index"),
                        })?;
                    let vt = resolve_index(parts.next().unwrap_or(""), texcoords.len(), line, "vt")?;
                    let vn = resolve_index(parts.next().unwrap_or(""), normals.len(), line, "vn")?;
                    if vt_of[v].is_none() {
                        vt_of[v] = vt;
                    }
                    if vn_of[v].is_none() {
                        vn_of[v] = vn;
                    }
                    corners.push(v as u32);
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }

    let uv = if !texcoords.is_empty() && vt_of.iter().all(Option::is_some) {
        Some(vt_of.iter().map(|i| texcoords[i.unwrap()]).collect())
    } else {
        None
    };
    let mesh = TriMesh::new(positions, faces, uv)?;
    if !normals.is_empty() && vn_of.iter().all(Option::is_some) {
        let n: Vec<Vec3> = vn_of
            .iter()
            .map(|i| {
                let v = normals[i.unwrap()];
                let len = v.norm();
                if len > 0.0 {
                    v / len
                } else {
                    Vec3::z()
                }
            })
            .collect();
        return Ok((mesh.with_replaced_normals(n)?, Vec::new()));
    }
    let (mesh, isolated) = compute_vertex_normals(&mesh);
    Ok((mesh, isolated))
}

fn parse_floats(tokens: &[&str], count: usize, line: usize) -> Result<Vec<f64>> {
    if tokens.len() < count {
        return Err(Error::Parse {
            line,
            message: format!("expected {count} numbers, found {}", tokens.len()),
        });
    }
    tokens[..count]
        .iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("'{t}' is not a number"),
            })
        })
        .collect()
}

fn resolve_index(tok: &str, len: usize, line: usize, what: &str) -> Result<Option<usize>> {
    if tok.is_empty() {
        return Ok(None);
    }
    let raw: i64 = tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("'{tok}' is not a {what} index"),
    })?;
    let idx = match raw {
        0 => {
            return Err(Error::Parse {
                line,
                message: format!("{what} index 0 (OBJ indices are 1-based)"),
            })
        }
        r if r > 0 => r - 1,
        r => len as i64 + r,
    };
    if idx < 0 || idx as usize >= len {
        return Err(Error::Parse {
            line,
            message: format!("{what} index {raw} out of range ({len} defined so far)"),
        });
    }
    Ok(Some(idx as usize))
}

/// Formats the mesh as OBJ text with 9 significant digits.
pub fn format_obj(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 96);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:.8e} {:.8e} {:.8e}", v.x, v.y, v.z);
    }
    if let Some(uv) = mesh.uv() {
        for t in uv {
            let _ = writeln!(out, "vt {:.8e} {:.8e}", t.x, t.y);
        }
    }
    for n in mesh.normals() {
        let _ = writeln!(out, "vn {:.8e} {:.8e} {:.8e}", n.x, n.y, n.z);
    }
    let has_uv = mesh.uv().is_some();
    for f in mesh.faces() {
        let [a, b, c] = f.map(|i| i + 1);
        if has_uv {
            let _ = writeln!(out, "f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}");
        } else {
            let _ = writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}");
        }
    }
    out
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_obj(mesh)).map_err(|e| Error::io(path, e))
}
