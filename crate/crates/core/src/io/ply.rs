//! Minimal PLY support: vertex positions, optionally colored.
//!
//! Reads `ascii 1.0` and `binary_little_endian 1.0` files whose vertex element
//! carries scalar `x`, `y`, `z` of type float or double. Other scalar vertex
//! properties are skipped; list properties in or before the vertex element are
//! rejected.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

const FORMAT: &str = "PLY";

/// Planar correspondences.
pub const LIGHT_BLUE: [u8; 3] = [173, 216, 230];
/// Non-planar correspondences.
pub const RED: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|(_, s)| s.size()).sum()
    }
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn err(offset: usize, msg: impl Into<String>) -> Error {
    Error::format(FORMAT, offset as u64, msg)
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    // Properties after an unsupported list are fatal only if their element is needed.
    let mut list_props: Vec<(usize, String, usize)> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(offset, "unterminated header"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| err(offset, "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        let line_offset = offset;
        offset += end + 1;
        if first {
            if line != "ply" {
                return Err(err(0, "missing `ply` magic"));
            }
            first = false;
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                encoding = Some(match (tok.next(), tok.next()) {
                    (Some("ascii"), Some("1.0")) => PlyEncoding::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyEncoding::BinaryLittleEndian,
                    (f, _) => {
                        return Err(err(line_offset, format!("unsupported format `{}`", f.unwrap_or(""))))
                    }
                });
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| err(line_offset, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| err(line_offset, format!("element `{name}` has no valid count")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(line_offset, "property before any element"))?;
                let ty = tok.next().unwrap_or("");
                if ty == "list" {
                    let name = tok.nth(2).unwrap_or("?").to_string();
                    list_props.push((elements.len() - 1, name, line_offset));
                    continue;
                }
                let name = tok.next().ok_or_else(|| err(line_offset, "property without name"))?;
                let scalar = Scalar::parse(ty).ok_or_else(|| {
                    err(line_offset, format!("unsupported type `{ty}` for property `{name}`"))
                })?;
                el.props.push((name.to_string(), scalar));
            }
            Some("end_header") => break,
            Some(other) => return Err(err(line_offset, format!("unexpected header keyword `{other}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| err(0, "header has no format line"))?;
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(0, "header declares no vertex element"))?;
    if let Some((_, name, at)) = list_props.iter().find(|(el, _, _)| *el <= vertex) {
        return Err(err(*at, format!("unsupported list property `{name}`")));
    }
    Ok(Header { encoding, elements, body_offset: offset })
}

/// Reads vertex positions in file order.
pub fn parse_ply(bytes: &[u8]) -> Result<Vec<Vec3>> {
    let header = parse_header(bytes)?;
    let vi = header.elements.iter().position(|e| e.name == "vertex").unwrap();
    let vertex = &header.elements[vi];
    let mut xyz = [0usize; 3];
    for (slot, axis) in xyz.iter_mut().zip(["x", "y", "z"]) {
        let idx = vertex
            .props
            .iter()
            .position(|(n, _)| n == axis)
            .ok_or_else(|| err(0, format!("vertex element lacks property `{axis}`")))?;
        if !matches!(vertex.props[idx].1, Scalar::F32 | Scalar::F64) {
            return Err(err(0, format!("property `{axis}` must be float or double")));
        }
        *slot = idx;
    }

    match header.encoding {
        PlyEncoding::BinaryLittleEndian => {
            let skip: usize = header.elements[..vi].iter().map(|e| e.count * e.stride()).sum();
            let start = header.body_offset + skip;
            let stride = vertex.stride();
            let offsets: Vec<usize> = vertex
                .props
                .iter()
                .scan(0, |acc, (_, s)| {
                    let o = *acc;
                    *acc += s.size();
                    Some(o)
                })
                .collect();
            let need = start + stride * vertex.count;
            if bytes.len() < need {
                return Err(err(bytes.len(), format!("expected {} vertices, data ends early", vertex.count)));
            }
            Ok((0..vertex.count)
                .map(|i| {
                    let rec = &bytes[start + i * stride..start + (i + 1) * stride];
                    let get = |k: usize| vertex.props[xyz[k]].1.read_le(&rec[offsets[xyz[k]]..]);
                    Vec3::new(get(0), get(1), get(2))
                })
                .collect())
        }
        PlyEncoding::Ascii => {
            let body = std::str::from_utf8(&bytes[header.body_offset..])
                .map_err(|_| err(header.body_offset, "ascii body is not valid UTF-8"))?;
            let mut lines = body.lines().filter(|l| !l.trim().is_empty());
            for e in &header.elements[..vi] {
                for _ in 0..e.count {
                    lines.next().ok_or_else(|| err(header.body_offset, format!("element `{}` truncated", e.name)))?;
                }
            }
            let mut out = Vec::with_capacity(vertex.count);
            for i in 0..vertex.count {
                let line = lines
                    .next()
                    .ok_or_else(|| err(bytes.len(), format!("expected {} vertices, found {i}", vertex.count)))?;
                let vals: Vec<&str> = line.split_whitespace().collect();
                if vals.len() != vertex.props.len() {
                    return Err(err(header.body_offset, format!("vertex {i} has {} fields, expected {}", vals.len(), vertex.props.len())));
                }
                let get = |k: usize| -> Result<f64> {
                    vals[xyz[k]]
                        .parse()
                        .map_err(|_| err(header.body_offset, format!("vertex {i}: bad number `{}`", vals[xyz[k]])))
                };
                out.push(Vec3::new(get(0)?, get(1)?, get(2)?));
            }
            Ok(out)
        }
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<Vec<Vec3>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Encodes points as `double` x/y/z, plus `uchar` red/green/blue when colors are given.
pub fn encode_ply(points: &[Vec3], colors: Option<&[[u8; 3]]>, encoding: PlyEncoding) -> Result<Vec<u8>> {
    if let Some(c) = colors {
        if c.len() != points.len() {
            return Err(Error::Contract(format!("{} colors for {} points", c.len(), points.len())));
        }
    }
    let mut out = Vec::new();
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!("ply\nformat {fmt} 1.0\nelement vertex {}\n", points.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    for (i, p) in points.iter().enumerate() {
        match encoding {
            PlyEncoding::BinaryLittleEndian => {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = colors {
                    out.extend_from_slice(&c[i]);
                }
            }
            PlyEncoding::Ascii => {
                write!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
                if let Some(c) = colors {
                    write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2]).unwrap();
                }
                out.push(b'\n');
            }
        }
    }
    Ok(out)
}

pub fn write_ply(
    path: impl AsRef<Path>,
    points: &[Vec3],
    colors: Option<&[[u8; 3]]>,
    encoding: PlyEncoding,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(points, colors, encoding)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
