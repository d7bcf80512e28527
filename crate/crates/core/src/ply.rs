//! PLY point-cloud I/O (ASCII and binary little-endian).
//!
//! Only the `vertex` element is interpreted; any other element is parsed and
//! skipped so files carrying faces still load.

use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, PlyError, Result};

const DEFAULT_GRAY: f32 = 0.5;

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
    fn parse(name: &str) -> Option<Scalar> {
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

    /// Factor mapping a stored color value into `[0, 1]`.
    fn color_scale(self) -> f64 {
        match self {
            Scalar::I8 | Scalar::U8 => 1.0 / 255.0,
            Scalar::I16 | Scalar::U16 => 1.0 / 65535.0,
            Scalar::I32 | Scalar::U32 => 1.0 / u32::MAX as f64,
            Scalar::F32 | Scalar::F64 => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, PlyError> {
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some(rel_end) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(PlyError::MalformedHeader {
                line: line_no + 1,
                reason: "missing end_header".into(),
            });
        };
        let raw = &bytes[offset..offset + rel_end];
        offset += rel_end + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| PlyError::MalformedHeader {
                line: line_no,
                reason: "header is not valid UTF-8".into(),
            })?
            .trim_end_matches('\r')
            .trim();
        let malformed = |reason: &str| PlyError::MalformedHeader {
            line: line_no,
            reason: reason.to_string(),
        };
        if line_no == 1 {
            if line != "ply" {
                return Err(malformed("first line must be `ply`"));
            }
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let fmt = tokens.next().ok_or_else(|| malformed("format without encoding"))?;
                encoding = Some(match fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    other => {
                        return Err(PlyError::UnsupportedEncoding {
                            line: line_no,
                            format: other.to_string(),
                        })
                    }
                });
            }
            Some("element") => {
                let name = tokens.next().ok_or_else(|| malformed("element without name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| malformed("element count is not an unsigned integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?;
                let first = tokens.next().ok_or_else(|| malformed("empty property"))?;
                let prop = if first == "list" {
                    let count = tokens
                        .next()
                        .and_then(Scalar::parse)
                        .ok_or_else(|| malformed("bad list count type"))?;
                    let item = tokens
                        .next()
                        .and_then(Scalar::parse)
                        .ok_or_else(|| malformed("bad list item type"))?;
                    Property::List { count, item }
                } else {
                    let ty = Scalar::parse(first).ok_or_else(|| malformed("unknown property type"))?;
                    let name = tokens.next().ok_or_else(|| malformed("property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(malformed(&format!("unknown keyword `{other}`"))),
        }
    }
    let encoding = encoding.ok_or(PlyError::MalformedHeader {
        line: line_no,
        reason: "no format line".into(),
    })?;
    Ok(Header {
        encoding,
        elements,
        body_offset: offset,
    })
}

/// Column roles of the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[(usize, Scalar); 3]>,
}

fn vertex_layout(element: &Element) -> std::result::Result<VertexLayout, PlyError> {
    let find = |names: &[&str]| {
        element.properties.iter().enumerate().find_map(|(i, p)| match p {
            Property::Scalar { name, ty } if names.contains(&name.as_str()) => Some((i, *ty)),
            _ => None,
        })
    };
    let mut xyz = [0usize; 3];
    for (k, axis) in ["x", "y", "z"].iter().enumerate() {
        xyz[k] = find(&[axis])
            .ok_or_else(|| PlyError::MalformedHeader {
                line: 0,
                reason: format!("vertex element lacks property `{axis}`"),
            })?
            .0;
    }
    let red = find(&["red", "r", "diffuse_red"]);
    let green = find(&["green", "g", "diffuse_green"]);
    let blue = find(&["blue", "b", "diffuse_blue"]);
    let rgb = match (red, green, blue) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

struct BinaryCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BinaryCursor<'_> {
    fn read(&mut self, ty: Scalar) -> std::result::Result<f64, PlyError> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(PlyError::Truncated {
                offset: self.pos as u64,
                reason: format!("need {n} bytes, {} remain", self.bytes.len() - self.pos),
            });
        }
        let b = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }
}

struct AsciiCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl AsciiCursor<'_> {
    fn read(&mut self, _ty: Scalar) -> std::result::Result<f64, PlyError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PlyError::Truncated {
                offset: start as u64,
                reason: "expected another value".into(),
            });
        }
        let token = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        token.parse::<f64>().map_err(|_| PlyError::InvalidValue {
            offset: start as u64,
            reason: format!("`{token}` is not a number"),
        })
    }
}

/// Decode a PLY file held in memory.
pub fn parse_ply(bytes: &[u8]) -> std::result::Result<PointCloud, PlyError> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    match header.encoding {
        Encoding::Ascii => {
            let mut cur = AsciiCursor { bytes: body, pos: 0 };
            decode_body(&header, |ty| cur.read(ty), header.body_offset)
        }
        Encoding::BinaryLe => {
            let mut cur = BinaryCursor { bytes: body, pos: 0 };
            decode_body(&header, |ty| cur.read(ty), header.body_offset)
        }
    }
    .map_err(|e| shift_offset(e, header.body_offset as u64))
}

fn shift_offset(err: PlyError, by: u64) -> PlyError {
    match err {
        PlyError::Truncated { offset, reason } => PlyError::Truncated {
            offset: offset + by,
            reason,
        },
        PlyError::InvalidValue { offset, reason } => PlyError::InvalidValue {
            offset: offset + by,
            reason,
        },
        other => other,
    }
}

fn decode_body(
    header: &Header,
    mut read: impl FnMut(Scalar) -> std::result::Result<f64, PlyError>,
    _body_offset: usize,
) -> std::result::Result<PointCloud, PlyError> {
    let vertex_index = header.elements.iter().position(|e| e.name == "vertex");
    let mut cloud = PointCloud::empty();
    for (ei, element) in header.elements.iter().enumerate() {
        let layout = if Some(ei) == vertex_index {
            Some(vertex_layout(element)?)
        } else {
            None
        };
        let mut row = vec![0.0f64; element.properties.len()];
        for _ in 0..element.count {
            for (pi, prop) in element.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => row[pi] = read(*ty)?,
                    Property::List { count, item } => {
                        let n = read(*count)?;
                        for _ in 0..n.max(0.0) as usize {
                            read(*item)?;
                        }
                    }
                }
            }
            if let Some(layout) = &layout {
                let p = layout.xyz.map(|i| row[i]);
                if p.iter().any(|c| !c.is_finite()) {
                    return Err(PlyError::InvalidValue {
                        offset: 0,
                        reason: format!("vertex {} has a non-finite coordinate", cloud.len()),
                    });
                }
                let color = match layout.rgb {
                    Some(rgb) => rgb.map(|(i, ty)| (row[i] * ty.color_scale()) as f32),
                    None => [DEFAULT_GRAY; 3],
                };
                cloud.push(p, color);
            }
        }
        // Anything after the vertex element is irrelevant.
        if Some(ei) == vertex_index {
            break;
        }
    }
    Ok(cloud)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes).map_err(|source| Error::Ply {
        path: path.to_path_buf(),
        source,
    })
}

/// Encode a cloud. Binary files store `double` positions (lossless); ASCII
/// files use six decimals. Colors are written as `uchar`.
pub fn encode_ply(cloud: &PointCloud, binary: bool) -> Vec<u8> {
    let mut header = String::new();
    header.push_str("ply\n");
    header.push_str(if binary {
        "format binary_little_endian 1.0\n"
    } else {
        "format ascii 1.0\n"
    });
    let pos_ty = if binary { "double" } else { "float" };
    let _ = writeln!(header, "element vertex {}", cloud.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(header, "property {pos_ty} {axis}");
    }
    for ch in ["red", "green", "blue"] {
        let _ = writeln!(header, "property uchar {ch}");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    let quantize = |c: f32| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
    if binary {
        out.reserve(cloud.len() * 27);
        for (p, c) in cloud.points().iter().zip(cloud.colors()) {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend(c.iter().map(|&v| quantize(v)));
        }
    } else {
        let mut body = String::with_capacity(cloud.len() * 40);
        for (p, c) in cloud.points().iter().zip(cloud.colors()) {
            let _ = writeln!(
                body,
                "{:.6} {:.6} {:.6} {} {} {}",
                p[0],
                p[1],
                p[2],
                quantize(c[0]),
                quantize(c[1]),
                quantize(c[2])
            );
        }
        out.extend_from_slice(body.as_bytes());
    }
    out
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>, binary: bool) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ply(cloud, binary)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_xyz_only_defaults_to_gray() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n";
        let cloud = parse_ply(src).unwrap();
        assert_eq!(cloud.len(), 3);
        assert!(cloud.colors().iter().all(|c| *c == [0.5, 0.5, 0.5]));
        assert_eq!(cloud.points()[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn binary_uchar_color_is_scaled() {
        let mut src = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n".to_vec();
        for v in [1.0f32, 2.0, 3.0] {
            src.extend_from_slice(&v.to_le_bytes());
        }
        src.extend_from_slice(&[255, 0, 0]);
        let cloud = parse_ply(&src).unwrap();
        assert_eq!(cloud.colors()[0], [1.0, 0.0, 0.0]);
        assert_eq!(cloud.points()[0], [1.0, 2.0, 3.0]);
    }

    #[test]
    fn big_endian_is_rejected() {
        let src = b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        match parse_ply(src) {
            Err(PlyError::UnsupportedEncoding { line, format }) => {
                assert_eq!(line, 2);
                assert_eq!(format, "binary_big_endian");
            }
            other => panic!("expected unsupported encoding, got {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mut src = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        let header_len = src.len();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            src.extend_from_slice(&v.to_le_bytes());
        }
        match parse_ply(&src) {
            Err(PlyError::Truncated { offset, .. }) => assert_eq!(offset, (header_len + 16) as u64),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_names_line() {
        let src = b"ply\nformat ascii 1.0\nelement vertex three\nend_header\n";
        match parse_ply(src) {
            Err(PlyError::MalformedHeader { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed header, got {other:?}"),
        }
    }

    #[test]
    fn faces_after_vertices_are_ignored() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert_eq!(parse_ply(src).unwrap().len(), 3);
    }

    #[test]
    fn empty_cloud_writes_zero_count() {
        let bytes = encode_ply(&PointCloud::empty(), true);
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 0"));
        assert_eq!(parse_ply(&bytes).unwrap().len(), 0);
    }
}
