//! Binary little-endian PLY point sets and triangle meshes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Vertices with optional per-vertex scalars and triangles.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<[f64; 3]>,
    /// Named per-vertex scalar properties, each of vertex length.
    pub scalars: Vec<(String, Vec<f64>)>,
    pub faces: Vec<[u32; 3]>,
    /// Header comment lines, without the `comment ` prefix.
    pub comments: Vec<String>,
}

pub fn write_ply(path: &Path, data: &PlyData) -> Result<()> {
    let n = data.vertices.len();
    for (name, v) in &data.scalars {
        if v.len() != n {
            return Err(Error::Contract(format!("scalar {name} has {} values for {n} vertices", v.len())));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Contract(format!("bad property name {name:?}")));
        }
    }
    let mut head = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in &data.comments {
        if c.contains('\n') {
            return Err(Error::Contract("comment contains a newline".into()));
        }
        head += &format!("comment {c}\n");
    }
    head += &format!("element vertex {n}\nproperty double x\nproperty double y\nproperty double z\n");
    for (name, _) in &data.scalars {
        head += &format!("property double {name}\n");
    }
    if !data.faces.is_empty() {
        head += &format!("element face {}\nproperty list uchar uint vertex_indices\n", data.faces.len());
    }
    head += "end_header\n";
    let mut buf = head.into_bytes();
    for (i, p) in data.vertices.iter().enumerate() {
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for (_, s) in &data.scalars {
            buf.extend_from_slice(&s[i].to_le_bytes());
        }
    }
    for f in &data.faces {
        buf.push(3);
        for v in f {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Kind {
    fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "char" | "int8" => Kind::I8,
            "uchar" | "uint8" => Kind::U8,
            "short" | "int16" => Kind::I16,
            "ushort" | "uint16" => Kind::U16,
            "int" | "int32" => Kind::I32,
            "uint" | "uint32" => Kind::U32,
            "float" | "float32" => Kind::F32,
            "double" | "float64" => Kind::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Kind::I8 | Kind::U8 => 1,
            Kind::I16 | Kind::U16 => 2,
            Kind::I32 | Kind::U32 | Kind::F32 => 4,
            Kind::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Kind::I8 => b[0] as i8 as f64,
            Kind::U8 => b[0] as f64,
            Kind::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Kind::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Kind::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Kind::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Kind::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Kind::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum Prop {
    Scalar(String, Kind),
    List(Kind, Kind),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Prop>,
}

/// Reads binary little-endian PLY files with a `vertex` element (x, y, z and
/// any scalar properties) and an optional triangle `face` element.
pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m.to_string());
    let end = find(&bytes, b"end_header\n").ok_or_else(|| bad("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not text"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut out = PlyData::default();
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    for line in lines {
        let w: Vec<&str> = line.split_whitespace().collect();
        match w.as_slice() {
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", ..] => return Err(bad("only binary_little_endian 1.0 is supported")),
            ["comment", ..] => out.comments.push(line.trim_start()["comment".len()..].trim_start().to_string()),
            ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, _] => {
                let (c, i) = (Kind::parse(c), Kind::parse(i));
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.props.push(Prop::List(
                    c.ok_or_else(|| bad("bad list count type"))?,
                    i.ok_or_else(|| bad("bad list item type"))?,
                ));
            }
            ["property", t, name] => {
                let k = Kind::parse(t).ok_or_else(|| bad("bad property type"))?;
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.props.push(Prop::Scalar(name.to_string(), k));
            }
            [] => {}
            _ => return Err(bad(&format!("unexpected header line {line:?}"))),
        }
    }
    if !format_ok {
        return Err(bad("missing format line"));
    }
    let mut pos = end + "end_header\n".len();
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::consistency(path, "file shorter than its header declares"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let mut scalars: Vec<(String, Vec<f64>)> = Vec::new();
        if is_vertex {
            for p in &el.props {
                if let Prop::Scalar(name, _) = p {
                    if !["x", "y", "z"].contains(&name.as_str()) {
                        scalars.push((name.clone(), Vec::with_capacity(el.count)));
                    }
                }
            }
        }
        for _ in 0..el.count {
            let mut xyz = [f64::NAN; 3];
            let mut si = 0;
            for p in &el.props {
                match p {
                    Prop::Scalar(name, k) => {
                        let v = k.read(take(&mut pos, k.size())?);
                        if is_vertex {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {
                                    scalars[si].1.push(v);
                                    si += 1;
                                }
                            }
                        }
                    }
                    Prop::List(ck, ik) => {
                        let n = ck.read(take(&mut pos, ck.size())?) as usize;
                        let items: Vec<f64> = (0..n)
                            .map(|_| take(&mut pos, ik.size()).map(|b| ik.read(b)))
                            .collect::<Result<_>>()?;
                        if is_face {
                            if n != 3 {
                                return Err(bad("only triangle faces are supported"));
                            }
                            out.faces.push([items[0] as u32, items[1] as u32, items[2] as u32]);
                        }
                    }
                }
            }
            if is_vertex {
                if xyz.iter().any(|v| v.is_nan()) {
                    return Err(bad("vertex element lacks x, y or z"));
                }
                out.vertices.push(xyz);
            }
        }
        if is_vertex {
            out.scalars = scalars;
        }
    }
    if pos != bytes.len() {
        return Err(Error::consistency(path, "trailing bytes after the last element"));
    }
    if out.faces.iter().flatten().any(|i| *i as usize >= out.vertices.len()) {
        return Err(Error::consistency(path, "face index out of range"));
    }
    Ok(out)
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Value of a `key value` header comment.
pub fn comment_value<'a>(data: &'a PlyData, key: &str) -> Option<&'a str> {
    data.comments.iter().find_map(|c| {
        let (k, v) = c.split_once(' ')?;
        (k == key).then_some(v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        let d = PlyData {
            vertices: vec![[0.1, -2.0, 3.5], [1e-9, 0.0, 7.0], [1.0, 1.0, 1.0]],
            scalars: vec![("relevancy".into(), vec![0.5, 0.25, 0.75])],
            faces: vec![[0, 1, 2]],
            comments: vec!["version semfield-ply/1".into(), "config_hash abc".into()],
        };
        write_ply(&p, &d).unwrap();
        let back = read_ply(&p).unwrap();
        assert_eq!(back, d);
        assert_eq!(comment_value(&back, "config_hash"), Some("abc"));
    }

    #[test]
    fn truncated_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        let d = PlyData {
            vertices: vec![[0.0; 3]; 4],
            ..Default::default()
        };
        write_ply(&p, &d).unwrap();
        let b = fs::read(&p).unwrap();
        fs::write(&p, &b[..b.len() - 3]).unwrap();
        assert!(matches!(read_ply(&p), Err(Error::Consistency { .. })));
        fs::write(&p, b"plx\n").unwrap();
        assert!(matches!(read_ply(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn reads_float_vertices_and_int_faces() {
        let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for v in [0f32, 0., 0., 1., 0., 0., 0., 1., 0.] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.push(3);
        for i in [0i32, 1, 2] {
            b.extend_from_slice(&i.to_le_bytes());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ply");
        fs::write(&p, b).unwrap();
        let d = read_ply(&p).unwrap();
        assert_eq!(d.vertices[1], [1.0, 0.0, 0.0]);
        assert_eq!(d.faces, vec![[0, 1, 2]]);
    }
}
