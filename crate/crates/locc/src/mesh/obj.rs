//! OBJ-subset reader and writer.
//!
//! Supported records: `v x y z [w]` and triangulated `f a b c` (each face
//! reference may carry `/vt/vn` suffixes, only the vertex index is used;
//! indices are 1-based and positive). Comments and unknown record types are
//! skipped. Anything malformed is a hard error — this parser also runs
//! under a fuzzer and must never panic on arbitrary input.

use std::io::Write;

use crate::geom::Vec3;

use super::{MeshError, TriMesh};

pub fn parse_obj(text: &str, id: &str) -> Result<TriMesh, MeshError> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let mut tokens = body.split_whitespace();
        let Some(kind) = tokens.next() else { continue };
        match kind {
            "v" => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() < 3 || coords.len() > 4 {
                    return Err(MeshError::Parse {
                        line,
                        msg: format!("vertex record needs 3 or 4 coordinates, got {}", coords.len()),
                    });
                }
                let mut p = Vec3::zeros();
                for (i, c) in coords.iter().take(3).enumerate() {
                    let v: f64 = c.parse().map_err(|_| MeshError::Parse {
                        line,
                        msg: format!("bad coordinate `{c}`"),
                    })?;
                    if !v.is_finite() {
                        return Err(MeshError::Parse {
                            line,
                            msg: format!("non-finite coordinate `{c}`"),
                        });
                    }
                    p[i] = v;
                }
                vertices.push(p);
            }
            "f" => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(MeshError::Parse {
                        line,
                        msg: format!(
                            "face must be a triangle (3 vertex refs), got {}",
                            refs.len()
                        ),
                    });
                }
                let mut idx = [0u32; 3];
                for (k, r) in refs.iter().enumerate() {
                    let first = r.split('/').next().unwrap_or("");
                    let v: i64 = first.parse().map_err(|_| MeshError::Parse {
                        line,
                        msg: format!("bad face index `{r}`"),
                    })?;
                    if v <= 0 {
                        return Err(MeshError::Parse {
                            line,
                            msg: format!("face index must be positive 1-based, got {v}"),
                        });
                    }
                    if v > u32::MAX as i64 {
                        return Err(MeshError::Parse {
                            line,
                            msg: format!("face index {v} out of range"),
                        });
                    }
                    idx[k] = (v - 1) as u32;
                }
                triangles.push(idx);
            }
            _ => {} // vn, vt, o, g, s, usemtl, mtllib, ...
        }
    }

    TriMesh::new(vertices, triangles, id)
}

pub fn write_obj(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "# {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len())?;
    writeln!(w, "o {}", mesh.id)?;
    for v in &mesh.vertices {
        writeln!(w, "v {:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = "\
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
";

    #[test]
    fn cube_parses_closed() {
        let m = parse_obj(CUBE, "cube").unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
        assert!(m.closed());
    }

    #[test]
    fn zero_face_index_is_a_parse_error() {
        let bad = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n";
        match parse_obj(bad, "bad") {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn open_sheet_is_not_closed() {
        let sheet = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n";
        let m = parse_obj(sheet, "sheet").unwrap();
        assert!(!m.closed());
    }

    #[test]
    fn slash_refs_and_comments_are_accepted() {
        let text = "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n";
        let m = parse_obj(text, "t").unwrap();
        assert_eq!(m.triangles.len(), 1);
    }

    #[test]
    fn quad_face_is_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert!(matches!(
            parse_obj(text, "q"),
            Err(MeshError::Parse { .. })
        ));
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n";
        assert!(matches!(
            parse_obj(text, "r"),
            Err(MeshError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn roundtrip_preserves_geometry() {
        let m = parse_obj(CUBE, "cube").unwrap();
        let mut buf = Vec::new();
        write_obj(&m, &mut buf).unwrap();
        let m2 = parse_obj(std::str::from_utf8(&buf).unwrap(), "cube").unwrap();
        assert_eq!(m.vertices, m2.vertices);
        assert_eq!(m.triangles, m2.triangles);
    }
}
