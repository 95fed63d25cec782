//! ASCII PLY mesh reader.
//!
//! Only `format ascii 1.0` is accepted. The vertex element needs `x`, `y` and
//! `z` properties (any scalar type, any order, extra properties ignored);
//! faces are optional and polygons with more than three corners are fanned
//! into triangles.

use std::path::Path;

use pose6d_core::Vec3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> PlyError {
    PlyError::Parse {
        line,
        message: message.into(),
    }
}

/// Vertices (scaled) and triangles of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

struct Element {
    name: String,
    count: usize,
    /// Property names; a list property is stored as `None`.
    properties: Vec<Option<String>>,
}

/// Reads a PLY file, multiplying coordinates by `scale` (LineMod meshes are
/// in millimetres: use 0.001 for metres).
pub fn load_ply(path: &Path, scale: f64) -> Result<PlyMesh, PlyError> {
    let text = std::fs::read(path).map_err(|source| PlyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    // Binary payloads are not UTF-8 in general; the header check below
    // reports them precisely, so decode lossily.
    parse_ply(&String::from_utf8_lossy(&text), scale)
}

pub fn parse_ply(text: &str, scale: f64) -> Result<PlyMesh, PlyError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        let (n, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "header ends without 'end_header'"))?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                let kind = words.next().unwrap_or("");
                if kind != "ascii" {
                    return Err(parse_err(
                        n,
                        format!("unsupported format '{kind}', only ascii is read"),
                    ));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = words
                    .next()
                    .ok_or_else(|| parse_err(n, "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(n, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(n, "property before any element"))?;
                let rest: Vec<&str> = words.collect();
                let prop = match rest.as_slice() {
                    ["list", _, _, _] => None,
                    [_, name] => Some(name.to_string()),
                    _ => return Err(parse_err(n, "malformed property line")),
                };
                element.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(parse_err(n, format!("unknown header keyword '{other}'"))),
        }
    }
    if !saw_format {
        return Err(parse_err(1, "missing format line"));
    }
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(0, "no vertex element"))?;
    let axis = |name: &str| {
        elements[vertex]
            .properties
            .iter()
            .position(|p| p.as_deref() == Some(name))
            .ok_or_else(|| parse_err(0, format!("vertex element lacks property '{name}'")))
    };
    let (ix, iy, iz) = (axis("x")?, axis("y")?, axis("z")?);

    let mut mesh = PlyMesh {
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    for element in &elements {
        for _ in 0..element.count {
            let (n, line) = lines.next().ok_or_else(|| {
                parse_err(0, format!("file ends inside element '{}'", element.name))
            })?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|w| w.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| parse_err(n, "non-numeric value"))?;
            match element.name.as_str() {
                "vertex" => {
                    if values.len() < element.properties.len() {
                        return Err(parse_err(n, "too few vertex values"));
                    }
                    let v = Vec3::new(values[ix], values[iy], values[iz]) * scale;
                    if !v.iter().all(|c| c.is_finite()) {
                        return Err(parse_err(n, "non-finite vertex"));
                    }
                    mesh.vertices.push(v);
                }
                "face" => {
                    let count = *values.first().ok_or_else(|| parse_err(n, "empty face"))? as usize;
                    if count < 3 || values.len() < count + 1 {
                        return Err(parse_err(n, "face needs at least three indices"));
                    }
                    let idx: Vec<u32> = values[1..=count].iter().map(|&v| v as u32).collect();
                    for k in 1..count - 1 {
                        mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    let n = mesh.vertices.len() as u32;
    if mesh.faces.iter().flatten().any(|&i| i >= n) {
        return Err(parse_err(0, "face index out of range"));
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CUBE: &str = "ply
format ascii 1.0
comment unit cube
element vertex 8
property float x
property float y
property float z
element face 6
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 1 2 6 5
4 2 3 7 6
4 3 0 4 7
";

    #[test]
    fn cube_has_eight_vertices_and_twelve_triangles() {
        let mesh = parse_ply(CUBE, 1.0).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.faces.len(), 12);
        let scaled = parse_ply(CUBE, 0.001).unwrap();
        assert_eq!(scaled.vertices[6], Vec3::new(0.001, 0.001, 0.001));
    }

    #[test]
    fn binary_is_rejected_with_line() {
        let text = CUBE.replace("format ascii 1.0", "format binary_little_endian 1.0");
        match parse_ply(&text, 1.0) {
            Err(PlyError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("binary_little_endian"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_z_is_rejected() {
        let text = CUBE.replace("property float z\n", "");
        let err = parse_ply(&text, 1.0).unwrap_err();
        assert!(err.to_string().contains("'z'"));
    }

    #[test]
    fn malformed_body_reports_line() {
        let text = CUBE.replace("1 1 0\n", "1 one 0\n");
        match parse_ply(&text, 1.0) {
            Err(PlyError::Parse { line, .. }) => assert_eq!(line, 13),
            other => panic!("{other:?}"),
        }
    }
}
