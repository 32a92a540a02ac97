//! Mesh and descriptor file formats.
//!
//! * OBJ: `v` and `f` records only, 1-based (or negative relative) indices;
//!   polygons are fan-triangulated.
//! * PLY: `binary_little_endian 1.0` with a `vertex` element carrying `x y z`
//!   and a `face` element with a `vertex_indices` (or `vertex_index`) list.
//! * Descriptor sidecar: `GCDF`, u32 version 1, u32 vertex count, u32 dimension,
//!   then vertex-major little-endian f32.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::mesh::{Descriptors, TriangleMesh};
use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

const GCDF_MAGIC: &[u8; 4] = b"GCDF";
const GCDF_VERSION: u32 = 1;

/// Loads an OBJ or PLY mesh, chosen by file extension.
pub fn load_mesh<T: Real>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let (vertices, faces) = match ext.as_str() {
        "obj" => parse_obj(std::str::from_utf8(&bytes).map_err(|e| Error::Parse(format!("obj is not utf-8: {e}")))?)?,
        "ply" => parse_ply(&bytes)?,
        other => return Err(Error::Parse(format!("unsupported mesh extension {other:?}"))),
    };
    TriangleMesh::new(vertices, faces, None)
}

/// Loads a mesh and attaches the descriptor sidecar.
pub fn load_mesh_with_descriptors<T: Real>(mesh: impl AsRef<Path>, descriptors: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let m: TriangleMesh<T> = load_mesh(mesh)?;
    let d = read_descriptors(descriptors)?;
    m.with_descriptors(Some(d))
}

pub fn parse_obj<T: Real>(text: &str) -> Result<(Vec<Vec3<T>>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [T::zero(); 3];
                for c in &mut p {
                    let tok = it.next().ok_or_else(|| Error::Parse(format!("line {}: short vertex", lineno + 1)))?;
                    let x: f64 = tok.parse().map_err(|_| Error::Parse(format!("line {}: bad coordinate {tok:?}", lineno + 1)))?;
                    *c = T::lit(x);
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| Error::Parse(format!("line {}: bad index {tok:?}", lineno + 1)))?;
                    let idx = match i {
                        i if i > 0 => (i - 1) as usize,
                        i if i < 0 => {
                            let back = i.unsigned_abs() as usize;
                            if back > vertices.len() {
                                return Err(Error::Parse(format!("line {}: relative index {i} before start", lineno + 1)));
                            }
                            vertices.len() - back
                        }
                        _ => return Err(Error::Parse(format!("line {}: index 0 is invalid in OBJ", lineno + 1))),
                    };
                    poly.push(idx);
                }
                if poly.len() < 3 {
                    return Err(Error::Parse(format!("line {}: face with fewer than 3 vertices", lineno + 1)));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::Parse(format!("unknown PLY type {name:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, buf: &[u8], pos: &mut usize) -> Result<f64> {
        let n = self.size();
        let b = buf.get(*pos..*pos + n).ok_or_else(|| Error::Parse("PLY body truncated".into()))?;
        *pos += n;
        Ok(match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

pub fn parse_ply<T: Real>(bytes: &[u8]) -> Result<(Vec<Vec3<T>>, Vec<[usize; 3]>)> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Parse("PLY header has no end_header".into()))?;
    let mut body = end + END.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        return Err(Error::Parse("PLY end_header not followed by newline".into()));
    }
    body += 1;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Parse("PLY header is not ASCII".into()))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Parse("missing ply magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, _] => return Err(Error::Parse(format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::Parse(format!("bad element count {count:?}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .properties
                .push(Property::List { name: name.to_string(), count: Scalar::parse(count)?, item: Scalar::parse(item)? }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Parse("property before element".into()))?
                .properties
                .push(Property::Scalar { name: name.to_string(), ty: Scalar::parse(ty)? }),
            _ => {}
        }
    }
    if !format_ok {
        return Err(Error::Parse("PLY format line missing".into()));
    }
    let mut pos = body;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [None; 3];
            let mut poly: Vec<usize> = Vec::new();
            for prop in &el.properties {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = ty.read(bytes, &mut pos)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => xyz[0] = Some(v),
                                "y" => xyz[1] = Some(v),
                                "z" => xyz[2] = Some(v),
                                _ => {}
                            }
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = count.read(bytes, &mut pos)? as usize;
                        let wanted = el.name == "face" && (name == "vertex_indices" || name == "vertex_index");
                        for _ in 0..n {
                            let v = item.read(bytes, &mut pos)?;
                            if wanted {
                                if v < 0.0 {
                                    return Err(Error::Parse(format!("negative PLY face index {v}")));
                                }
                                poly.push(v as usize);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                let [Some(x), Some(y), Some(z)] = xyz else {
                    return Err(Error::Parse("PLY vertex lacks x/y/z".into()));
                };
                vertices.push([T::lit(x), T::lit(y), T::lit(z)]);
            } else if el.name == "face" {
                if poly.len() < 3 {
                    return Err(Error::Parse("PLY face with fewer than 3 vertices".into()));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
        }
    }
    Ok((vertices, faces))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_obj<T: Real>(mesh: &TriangleMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    for v in mesh.vertices() {
        s.push_str(&format!("v {:?} {:?} {:?}\n", v[0].as_f64(), v[1].as_f64(), v[2].as_f64()));
    }
    for f in mesh.faces() {
        s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    write_file(path.as_ref(), s.as_bytes())
}

/// Writes binary little-endian PLY with double-precision coordinates.
pub fn write_ply<T: Real>(mesh: &TriangleMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    )
    .into_bytes();
    for v in mesh.vertices() {
        for c in v {
            out.extend_from_slice(&c.as_f64().to_le_bytes());
        }
    }
    for f in mesh.faces() {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    write_file(path.as_ref(), &out)
}

/// Writes OBJ or PLY by extension.
pub fn write_mesh<T: Real>(mesh: &TriangleMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => write_obj(mesh, path),
        Some("ply") => write_ply(mesh, path),
        other => Err(Error::Parse(format!("unsupported mesh extension {other:?}"))),
    }
}

pub fn read_descriptors<T: Real>(path: impl AsRef<Path>) -> Result<Descriptors<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_descriptors(&bytes)
}

pub fn decode_descriptors<T: Real>(bytes: &[u8]) -> Result<Descriptors<T>> {
    if bytes.len() < 16 || &bytes[..4] != GCDF_MAGIC {
        return Err(Error::Parse("descriptor file lacks GCDF header".into()));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let (version, count, dim) = (word(4), word(8) as usize, word(12) as usize);
    if version != GCDF_VERSION {
        return Err(Error::Parse(format!("unsupported GCDF version {version}")));
    }
    let expected = 16 + 4 * count * dim;
    if bytes.len() != expected {
        return Err(Error::Parse(format!("GCDF payload is {} bytes, expected {expected}", bytes.len())));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Descriptors::new(dim, values)
}

pub fn encode_descriptors<T: Real>(d: &Descriptors<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * d.values().len());
    out.extend_from_slice(GCDF_MAGIC);
    out.extend_from_slice(&GCDF_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.len() as u32).to_le_bytes());
    out.extend_from_slice(&(d.dim() as u32).to_le_bytes());
    for v in d.values() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn write_descriptors<T: Real>(d: &Descriptors<T>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_descriptors(d))
}
