//! PLY point clouds, ASCII or binary little-endian.
//!
//! Required vertex properties: `x y z nx ny nz red green blue`. Integer color
//! channels are scaled by their type's maximum (255 for `uchar`); float colors
//! are taken as is.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::model::PointCloud;

const REQUIRED: [&str; 9] = ["x", "y", "z", "nx", "ny", "nz", "red", "green", "blue"];

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

    /// Full-scale value for color normalization; `None` for floats.
    fn color_scale(self) -> Option<f64> {
        match self {
            Scalar::I8 => Some(i8::MAX as f64),
            Scalar::U8 => Some(u8::MAX as f64),
            Scalar::I16 => Some(i16::MAX as f64),
            Scalar::U16 => Some(u16::MAX as f64),
            Scalar::I32 => Some(i32::MAX as f64),
            Scalar::U32 => Some(u32::MAX as f64),
            Scalar::F32 | Scalar::F64 => None,
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

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
    has_list: bool,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let bad = |msg: String| Error::format(path, msg);
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header is not terminated by end_header".into()))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| bad("header is not valid text".into()))?
            .trim_end_matches('\r')
            .trim()
            .to_string();
        offset += end + 1;
        if line == "end_header" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(bad("missing ply magic line".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in &lines[1..] {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => return Err(bad(format!("unsupported format {other}"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| bad(format!("bad element count in \"{line}\"")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", ..] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element".into()))?;
                e.has_list = true;
            }
            ["property", ty, name] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element".into()))?;
                let ty = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown property type {ty}")))?;
                e.properties.push((name.to_string(), ty));
            }
            _ => return Err(bad(format!("malformed header line \"{line}\""))),
        }
    }
    let encoding = encoding.ok_or_else(|| bad("missing format line".into()))?;
    Ok(Header {
        encoding,
        elements,
        body_offset: offset,
    })
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &bytes)
}

/// Parse PLY bytes; `path` is only used in error messages.
pub fn parse_ply(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    let bad = |msg: String| Error::format(path, msg);
    let header = parse_header(path, bytes)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| bad("no vertex element".into()))?;
    let vertex = &header.elements[vi];
    if vertex.has_list {
        return Err(bad("list properties on vertices are not supported".into()));
    }
    let mut columns = [0usize; 9];
    for (slot, name) in columns.iter_mut().zip(REQUIRED) {
        *slot = vertex
            .properties
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| bad(format!("missing required property {name}")))?;
    }
    let n = vertex.count;
    let width = vertex.properties.len();
    let mut rows = vec![0.0f64; n * width];

    match header.encoding {
        PlyEncoding::Ascii => {
            let body = std::str::from_utf8(&bytes[header.body_offset..])
                .map_err(|_| bad("ASCII body is not valid text".into()))?;
            let mut lines = body.lines().filter(|l| !l.trim().is_empty());
            for e in &header.elements[..vi] {
                for _ in 0..e.count {
                    lines.next().ok_or_else(|| bad(format!("truncated {} element", e.name)))?;
                }
            }
            for p in 0..n {
                let line = lines
                    .next()
                    .ok_or_else(|| bad(format!("expected {n} vertices, found {p}")))?;
                let mut fields = line.split_whitespace();
                for c in 0..width {
                    let tok = fields
                        .next()
                        .ok_or_else(|| bad(format!("vertex {p} has too few values")))?;
                    rows[p * width + c] = tok
                        .parse()
                        .map_err(|_| bad(format!("vertex {p}: cannot parse \"{tok}\"")))?;
                }
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut offset = header.body_offset;
            for e in &header.elements[..vi] {
                if e.has_list {
                    return Err(bad(format!("cannot skip list element {} before vertices", e.name)));
                }
                offset += e.count * e.properties.iter().map(|(_, t)| t.size()).sum::<usize>();
            }
            let stride: usize = vertex.properties.iter().map(|(_, t)| t.size()).sum();
            if bytes.len() < offset + n * stride {
                return Err(bad(format!("binary body too short for {n} vertices")));
            }
            for p in 0..n {
                let mut at = offset + p * stride;
                for (c, (_, ty)) in vertex.properties.iter().enumerate() {
                    rows[p * width + c] = ty.read_le(&bytes[at..]);
                    at += ty.size();
                }
            }
        }
    }

    let get = |p: usize, k: usize| rows[p * width + columns[k]];
    let scales: Vec<f64> = (6..9)
        .map(|k| vertex.properties[columns[k]].1.color_scale().unwrap_or(1.0))
        .collect();
    let positions = (0..n).map(|p| Vector3::new(get(p, 0), get(p, 1), get(p, 2))).collect();
    let normals = (0..n).map(|p| Vector3::new(get(p, 3), get(p, 4), get(p, 5))).collect();
    let colors = (0..n)
        .map(|p| [get(p, 6) / scales[0], get(p, 7) / scales[1], get(p, 8) / scales[2]])
        .collect();
    PointCloud::new(positions, colors, normals).map_err(|e| bad(e.to_string()))
}

/// Write all fields as doubles so a reload is exact.
pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(cloud, encoding);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ply(cloud: &PointCloud, encoding: PlyEncoding) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = writeln!(out, "ply\nformat {fmt} 1.0\nelement vertex {}", cloud.len());
    for name in REQUIRED {
        let _ = writeln!(out, "property double {name}");
    }
    out.extend_from_slice(b"end_header\n");
    for ((p, n), c) in cloud.positions().iter().zip(cloud.normals()).zip(cloud.colors()) {
        let values = [p.x, p.y, p.z, n.x, n.y, n.z, c[0], c[1], c[2]];
        match encoding {
            PlyEncoding::Ascii => {
                let line: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parse(text: &[u8]) -> Result<PointCloud> {
        parse_ply(Path::new("test.ply"), text)
    }

    #[test]
    fn minimal_ascii_file() {
        let text = b"ply\nformat ascii 1.0\ncomment one point\nelement vertex 1\n\
property float x\nproperty float y\nproperty float z\n\
property float nx\nproperty float ny\nproperty float nz\n\
property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
1 2 3 0 0 2 255 0 51\n";
        let c = parse(text).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.positions()[0], Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(c.normals()[0], Vector3::z());
        assert_eq!(c.colors()[0], [1.0, 0.0, 0.2]);
    }

    #[test]
    fn missing_property_is_named() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 1\n\
property float x\nproperty float y\nproperty float z\n\
property float ny\nproperty float nz\n\
property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
1 2 3 0 1 255 0 51\n";
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains("missing required property nx"), "{err}");
    }

    #[test]
    fn malformed_headers_and_zero_normals_fail() {
        assert!(parse(b"ply\nformat ascii 1.0\nelement vertex 1\n").is_err());
        assert!(parse(b"plx\nformat ascii 1.0\nend_header\n").is_err());
        let text = b"ply\nformat ascii 1.0\nelement vertex 1\n\
property float x\nproperty float y\nproperty float z\n\
property float nx\nproperty float ny\nproperty float nz\n\
property float red\nproperty float green\nproperty float blue\nend_header\n\
1 2 3 0 0 0 0.5 0.5 0.5\n";
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains("zero normal at point 0"), "{err}");
    }

    #[test]
    fn binary_with_extra_properties_and_faces() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n\
property float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\n\
property float nz\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
property uchar alpha\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n"
            .to_vec();
        for p in 0..2u8 {
            for v in [p as f32, 0.5, -1.0, 1.0, 0.0, 0.0] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.extend_from_slice(&[0, 255, 0, 255]);
        }
        let c = parse(&bytes).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.positions()[1], Vector3::new(1.0, 0.5, -1.0));
        assert_eq!(c.colors()[1], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 1000;
        let positions = (0..n)
            .map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random(), rng.random::<f64>() * 1e-3))
            .collect();
        let normals = (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5))
            .collect();
        let colors = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let cloud = PointCloud::new(positions, colors, normals).unwrap();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let back = parse(&encode_ply(&cloud, enc)).unwrap();
            assert_eq!(back, cloud);
        }
    }
}
