//! ASCII OBJ and PLY reading and writing.
//!
//! Only geometry is read: `v`/`f` records from OBJ, and the `vertex` (x, y, z)
//! and `face` (vertex index list) elements from ASCII PLY 1.0. Polygons with
//! more than three corners are fan-triangulated around their first corner.

use std::fmt::Write as _;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "obj" => Ok(MeshFormat::Obj),
            Some(ext) if ext == "ply" => Ok(MeshFormat::Ply),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer mesh format from {}",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Obj => "obj",
            MeshFormat::Ply => "ply",
        }
    }
}

pub fn load_mesh(bytes: &[u8], format: MeshFormat) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Format(format!("mesh file is not valid UTF-8: {e}")))?;
    let (positions, faces) = match format {
        MeshFormat::Obj => parse_obj(text)?,
        MeshFormat::Ply => parse_ply(text)?,
    };
    Mesh::new(positions, faces)
}

pub fn load_mesh_file(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_mesh(&bytes, format)
}

pub fn save_mesh(mesh: &Mesh, format: MeshFormat) -> Vec<u8> {
    match format {
        MeshFormat::Obj => write_obj(mesh),
        MeshFormat::Ply => write_ply(mesh, None),
    }
    .into_bytes()
}

pub fn save_mesh_file(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)?;
    std::fs::write(path, save_mesh(mesh, format)).map_err(|e| Error::io(path, e))
}

/// PLY with an extra per-vertex `quality` property, used for error maps.
pub fn save_ply_with_quality(mesh: &Mesh, quality: &[f64]) -> Result<Vec<u8>> {
    if quality.len() != mesh.vertex_count() {
        return Err(Error::Shape(format!(
            "quality field has {} values for {} vertices",
            quality.len(),
            mesh.vertex_count()
        )));
    }
    Ok(write_ply(mesh, Some(quality)).into_bytes())
}

type Parsed = (Vec<[f64; 3]>, Vec<[usize; 3]>);

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn fan(poly: &[usize], line: usize, faces: &mut Vec<[usize; 3]>) -> Result<()> {
    if poly.len() < 3 {
        return Err(Error::Format(format!(
            "line {line}: polygon with {} corners cannot be triangulated",
            poly.len()
        )));
    }
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
    Ok(())
}

fn parse_obj(text: &str) -> Result<Parsed> {
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for slot in &mut p {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(line_no, "vertex needs three coordinates"))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad coordinate `{tok}`")))?;
                }
                positions.push(p);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let index_part = tok.split('/').next().unwrap_or("");
                    let i: i64 = index_part
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad face index `{tok}`")))?;
                    // Negative indices are relative to the vertices read so far.
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        positions.len() as i64 + i
                    } else {
                        return Err(parse_err(line_no, "face index 0 is not valid in OBJ"));
                    };
                    if resolved < 0 {
                        return Err(parse_err(line_no, format!("face index `{tok}` out of range")));
                    }
                    poly.push(resolved as usize);
                }
                fan(&poly, line_no, &mut faces)?;
            }
            _ => {}
        }
    }
    Ok((positions, faces))
}

struct PlyElement {
    name: String,
    count: usize,
    /// Scalar property names, or `None` for a list property.
    props: Vec<(String, bool)>,
}

fn parse_ply(text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        Some((n, _)) => return Err(parse_err(n, "missing `ply` magic")),
        None => return Err(parse_err(1, "empty file")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(parse_err(n, "only ascii PLY is supported"));
                }
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(n, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(n, "element without a valid count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(n, "property before any element"))?;
                let parts: Vec<&str> = tok.collect();
                match parts.as_slice() {
                    ["list", _, _, name] => el.props.push((name.to_string(), true)),
                    [_, name] => el.props.push((name.to_string(), false)),
                    _ => return Err(parse_err(n, "malformed property line")),
                }
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(parse_err(n, format!("unknown header keyword `{other}`"))),
        }
    }
    if !header_done {
        return Err(parse_err(text.lines().count(), "missing end_header"));
    }

    let mut positions = Vec::new();
    let mut faces = Vec::new();
    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut last_line = 0;
    for el in &elements {
        let xyz: Option<[usize; 3]> = if el.name == "vertex" {
            let find = |key: &str| el.props.iter().position(|(p, list)| p == key && !list);
            match (find("x"), find("y"), find("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => return Err(Error::Format("vertex element lacks x/y/z".into())),
            }
        } else {
            None
        };
        let list_prop = el
            .props
            .iter()
            .position(|(p, list)| *list && (p == "vertex_indices" || p == "vertex_index"));
        let has_lists = el.props.iter().any(|(_, list)| *list);

        for _ in 0..el.count {
            let (n, line) = body.next().ok_or_else(|| {
                parse_err(
                    last_line + 1,
                    format!("file ends before {} `{}` records", el.count, el.name),
                )
            })?;
            last_line = n;
            if !has_lists {
                let vals: Vec<&str> = line.split_whitespace().collect();
                if vals.len() != el.props.len() {
                    return Err(parse_err(
                        n,
                        format!("expected {} values, found {}", el.props.len(), vals.len()),
                    ));
                }
                if let Some(idx) = xyz {
                    let mut p = [0.0; 3];
                    for k in 0..3 {
                        p[k] = vals[idx[k]]
                            .parse()
                            .map_err(|_| parse_err(n, format!("bad coordinate `{}`", vals[idx[k]])))?;
                    }
                    positions.push(p);
                }
                continue;
            }
            // Rows with list properties are walked property by property.
            let mut vals = line.split_whitespace();
            for (pi, (_, is_list)) in el.props.iter().enumerate() {
                if *is_list {
                    let len: usize = vals
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| parse_err(n, "bad list length"))?;
                    let mut items = Vec::with_capacity(len);
                    for _ in 0..len {
                        let v: usize = vals
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| parse_err(n, "bad list entry"))?;
                        items.push(v);
                    }
                    if Some(pi) == list_prop && el.name == "face" {
                        fan(&items, n, &mut faces)?;
                    }
                } else if vals.next().is_none() {
                    return Err(parse_err(n, "record is missing values"));
                }
            }
            if vals.next().is_some() {
                return Err(parse_err(n, "record has trailing values"));
            }
        }
    }
    if let Some((n, _)) = body.next() {
        return Err(parse_err(n, "data after the last declared element"));
    }
    Ok((positions, faces))
}

fn write_obj(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.vertex_count() * 48 + mesh.face_count() * 24);
    for p in &mesh.positions {
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

fn write_ply(mesh: &Mesh, quality: Option<&[f64]>) -> String {
    let mut s = String::with_capacity(mesh.vertex_count() * 56 + mesh.face_count() * 24 + 200);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertex_count());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if quality.is_some() {
        s.push_str("property double quality\n");
    }
    let _ = writeln!(s, "element face {}", mesh.face_count());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, p) in mesh.positions.iter().enumerate() {
        match quality {
            Some(q) => {
                let _ = writeln!(s, "{} {} {} {}", p[0], p[1], p[2], q[i]);
            }
            None => {
                let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
            }
        }
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{shapes, validate_mesh};

    #[test]
    fn minimal_obj() {
        let m = load_mesh(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", MeshFormat::Obj).unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn obj_quad_is_fan_triangulated() {
        let src = b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let m = load_mesh(src, MeshFormat::Obj).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_with_texture_indices_and_comments() {
        let src = b"# header\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1 # tri\n";
        let m = load_mesh(src, MeshFormat::Obj).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn ply_tetrahedron() {
        let src = "ply\nformat ascii 1.0\ncomment tet\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 4\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 1 2 3\n3 0 3 2\n";
        let m = load_mesh(src.as_bytes(), MeshFormat::Ply).unwrap();
        assert_eq!((m.vertex_count(), m.face_count()), (4, 4));
    }

    #[test]
    fn ply_extra_vertex_properties() {
        let src = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n9 0 0 0\n9 1 0 0\n9 0 1 0\n3 0 1 2\n";
        let m = load_mesh(src.as_bytes(), MeshFormat::Ply).unwrap();
        assert_eq!(m.positions[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn ply_truncated_reports_line() {
        let src = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n";
        match load_mesh(src.as_bytes(), MeshFormat::Ply) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 12),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn obj_bad_coordinate_reports_line() {
        match load_mesh(b"v 0 0 0\nv 1 x 0\n", MeshFormat::Obj) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn two_corner_polygon_is_format_error() {
        let r = load_mesh(b"v 0 0 0\nv 1 0 0\nf 1 2\n", MeshFormat::Obj);
        assert!(matches!(r, Err(Error::Format(_))));
    }

    #[test]
    fn binary_ply_rejected() {
        let src = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(matches!(
            load_mesh(src.as_bytes(), MeshFormat::Ply),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn save_obj_minimal() {
        let m = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let text = String::from_utf8(save_mesh(&m, MeshFormat::Obj)).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 1);
    }

    #[test]
    fn icosphere_round_trip_both_formats() {
        let m = shapes::icosphere(2, 1.0);
        for fmt in [MeshFormat::Obj, MeshFormat::Ply] {
            let back = load_mesh(&save_mesh(&m, fmt), fmt).unwrap();
            assert_eq!(back.faces, m.faces);
            for (a, b) in back.positions.iter().zip(&m.positions) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() <= 1e-9);
                }
            }
            assert!(validate_mesh(&back).ok());
        }
    }

    #[test]
    fn quality_ply_loads_back() {
        let m = shapes::tetrahedron();
        let bytes = save_ply_with_quality(&m, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        let back = load_mesh(&bytes, MeshFormat::Ply).unwrap();
        assert_eq!(back, m);
        assert!(save_ply_with_quality(&m, &[0.0]).is_err());
    }
}
