//! PLY reading and writing for point clouds.
//!
//! Reads `ascii 1.0` and `binary_little_endian 1.0` files. Only the `vertex`
//! element's `x`, `y` (and optional `z`) properties are kept; other vertex
//! properties and other elements are parsed and skipped. A uchar `change`
//! vertex property, when present, is returned by [`load_ply_labeled`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

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

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
}

fn header_err(line: usize, message: impl Into<String>) -> Error {
    Error::PlyHeader {
        line,
        message: message.into(),
    }
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line_no = 0;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| header_err(line_no + 1, e.to_string()))?;
        line_no += 1;
        if n == 0 {
            return Err(header_err(line_no, "unexpected end of file before end_header"));
        }
        let line = std::str::from_utf8(&buf)
            .map_err(|_| header_err(line_no, "header is not valid UTF-8"))?
            .trim();
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(header_err(
                    line_no,
                    format!("expected magic `ply`, found `{line}`"),
                ));
            }
            continue;
        }
        match keyword {
            "" | "comment" | "obj_info" => {}
            "format" => {
                let kind = tokens.next();
                let version = tokens.next();
                if version != Some("1.0") {
                    return Err(header_err(line_no, format!("unsupported format line `{line}`")));
                }
                encoding = Some(match kind {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    _ => return Err(header_err(line_no, format!("unsupported format `{line}`"))),
                });
            }
            "element" => {
                let (Some(name), Some(count), None) = (tokens.next(), tokens.next(), tokens.next()) else {
                    return Err(header_err(line_no, format!("malformed element line `{line}`")));
                };
                let count = count
                    .parse()
                    .map_err(|_| header_err(line_no, format!("bad element count `{count}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let Some(element) = elements.last_mut() else {
                    return Err(header_err(line_no, "property before any element"));
                };
                let parts: Vec<&str> = tokens.collect();
                let property = match parts.as_slice() {
                    ["list", count, item, name] => {
                        let (Some(count), Some(item)) = (Scalar::parse(count), Scalar::parse(item)) else {
                            return Err(header_err(line_no, format!("bad list types in `{line}`")));
                        };
                        Property {
                            name: name.to_string(),
                            kind: PropertyKind::List { count, item },
                        }
                    }
                    [ty, name] => {
                        let Some(ty) = Scalar::parse(ty) else {
                            return Err(header_err(line_no, format!("unknown property type `{ty}`")));
                        };
                        Property {
                            name: name.to_string(),
                            kind: PropertyKind::Scalar(ty),
                        }
                    }
                    _ => return Err(header_err(line_no, format!("malformed property line `{line}`"))),
                };
                element.properties.push(property);
            }
            "end_header" => break,
            other => return Err(header_err(line_no, format!("unknown header keyword `{other}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| header_err(line_no, "missing format line"))?;
    Ok(Header { encoding, elements })
}

/// Where the interesting vertex properties live.
struct VertexLayout {
    x: usize,
    y: usize,
    z: Option<usize>,
    change: Option<usize>,
}

fn vertex_layout(element: &Element) -> Result<VertexLayout> {
    let find = |name: &str| -> Result<Option<usize>> {
        match element.properties.iter().position(|p| p.name == name) {
            None => Ok(None),
            Some(i) => match element.properties[i].kind {
                PropertyKind::Scalar(_) => Ok(Some(i)),
                PropertyKind::List { .. } => Err(Error::PlyBody(format!(
                    "vertex property `{name}` must be a scalar"
                ))),
            },
        }
    };
    let (Some(x), Some(y)) = (find("x")?, find("y")?) else {
        return Err(Error::PlyBody("vertex element lacks x/y properties".into()));
    };
    Ok(VertexLayout {
        x,
        y,
        z: find("z")?,
        change: find("change")?,
    })
}

/// Vertex values for one element instance, one slot per property (lists hold NaN).
trait ElementSource {
    fn read_instance(&mut self, element: &Element, out: &mut Vec<f64>) -> Result<()>;
}

struct AsciiSource<R> {
    reader: R,
    tokens: std::vec::IntoIter<String>,
}

impl<R: BufRead> AsciiSource<R> {
    fn next_token(&mut self) -> Result<String> {
        loop {
            if let Some(t) = self.tokens.next() {
                return Ok(t);
            }
            let mut line = String::new();
            let n = self
                .reader
                .read_line(&mut line)
                .map_err(|e| Error::PlyBody(e.to_string()))?;
            if n == 0 {
                return Err(Error::PlyBody("unexpected end of file in body".into()));
            }
            self.tokens = line
                .split_whitespace()
                .map(str::to_string)
                .collect::<Vec<_>>()
                .into_iter();
        }
    }

    fn next_value(&mut self) -> Result<f64> {
        let t = self.next_token()?;
        t.parse::<f64>()
            .map_err(|_| Error::PlyBody(format!("bad numeric token `{t}`")))
    }
}

impl<R: BufRead> ElementSource for AsciiSource<R> {
    fn read_instance(&mut self, element: &Element, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for p in &element.properties {
            match p.kind {
                PropertyKind::Scalar(_) => out.push(self.next_value()?),
                PropertyKind::List { .. } => {
                    let n = self.next_value()?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(Error::PlyBody(format!("bad list length {n}")));
                    }
                    for _ in 0..n as usize {
                        self.next_token()?;
                    }
                    out.push(f64::NAN);
                }
            }
        }
        Ok(())
    }
}

struct BinarySource<R> {
    reader: R,
    buf: [u8; 8],
}

impl<R: Read> BinarySource<R> {
    fn read_scalar(&mut self, ty: Scalar) -> Result<f64> {
        let bytes = &mut self.buf[..ty.size()];
        self.reader
            .read_exact(bytes)
            .map_err(|_| Error::PlyBody("unexpected end of file in binary body".into()))?;
        Ok(ty.read_le(bytes))
    }
}

impl<R: Read> ElementSource for BinarySource<R> {
    fn read_instance(&mut self, element: &Element, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for p in &element.properties {
            match p.kind {
                PropertyKind::Scalar(ty) => out.push(self.read_scalar(ty)?),
                PropertyKind::List { count, item } => {
                    let n = self.read_scalar(count)?;
                    if n < 0.0 {
                        return Err(Error::PlyBody(format!("bad list length {n}")));
                    }
                    for _ in 0..n as usize {
                        self.read_scalar(item)?;
                    }
                    out.push(f64::NAN);
                }
            }
        }
        Ok(())
    }
}

fn read_body(header: &Header, source: &mut dyn ElementSource) -> Result<(PointCloud, Option<Vec<bool>>)> {
    let mut result = None;
    let mut values = Vec::new();
    for element in &header.elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                source.read_instance(element, &mut values)?;
            }
            continue;
        }
        let layout = vertex_layout(element)?;
        let dim = if layout.z.is_some() { 3 } else { 2 };
        let mut coords = Vec::with_capacity(element.count * dim);
        let mut labels = layout.change.map(|_| Vec::with_capacity(element.count));
        for index in 0..element.count {
            source.read_instance(element, &mut values)?;
            let p = [Some(layout.x), Some(layout.y), layout.z];
            for slot in p.into_iter().flatten() {
                let v = values[slot];
                if !v.is_finite() {
                    return Err(Error::NonFinitePoint { index });
                }
                coords.push(v);
            }
            if let (Some(labels), Some(slot)) = (labels.as_mut(), layout.change) {
                labels.push(values[slot] != 0.0);
            }
        }
        result = Some((PointCloud::from_flat(dim, coords)?, labels));
        // anything after the vertex element is irrelevant
        break;
    }
    result.ok_or_else(|| Error::PlyBody("file has no vertex element".into()))
}

/// Reads a PLY stream, returning the points and the optional `change` labels.
pub fn read_ply<R: BufRead>(mut reader: R) -> Result<(PointCloud, Option<Vec<bool>>)> {
    let header = read_header(&mut reader)?;
    match header.encoding {
        PlyEncoding::Ascii => {
            let mut src = AsciiSource {
                reader,
                tokens: Vec::new().into_iter(),
            };
            read_body(&header, &mut src)
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut src = BinarySource { reader, buf: [0; 8] };
            read_body(&header, &mut src)
        }
    }
}

/// Loads the vertex positions of a PLY file.
pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    load_ply_labeled(path).map(|(c, _)| c)
}

/// Loads vertex positions plus the per-vertex `change` flags, if present.
pub fn load_ply_labeled(path: impl AsRef<Path>) -> Result<(PointCloud, Option<Vec<bool>>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(BufReader::new(file))
}

/// Writes `cloud` as PLY with double-precision coordinates. Labels, when
/// given, become a uchar `change` property.
pub fn write_ply<W: Write>(
    mut w: W,
    cloud: &PointCloud,
    labels: Option<&[bool]>,
    encoding: PlyEncoding,
) -> std::io::Result<()> {
    if let Some(l) = labels {
        assert_eq!(l.len(), cloud.len(), "one label per point");
    }
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    if let Some(frame) = cloud.frame_id() {
        writeln!(w, "comment frame_id {frame}")?;
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"].iter().take(cloud.dim()) {
        writeln!(w, "property double {axis}")?;
    }
    if labels.is_some() {
        writeln!(w, "property uchar change")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points().enumerate() {
        let label = labels.map(|l| l[i] as u8);
        match encoding {
            PlyEncoding::Ascii => {
                let mut fields: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
                if let Some(l) = label {
                    fields.push(l.to_string());
                }
                writeln!(w, "{}", fields.join(" "))?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in p {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(l) = label {
                    w.write_all(&[l])?;
                }
            }
        }
    }
    w.flush()
}

/// Writes a PLY file. See [`write_ply`].
pub fn save_ply(
    cloud: &PointCloud,
    labels: Option<&[bool]>,
    path: impl AsRef<Path>,
    encoding: PlyEncoding,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(l) = labels {
        if l.len() != cloud.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} points",
                l.len(),
                cloud.len()
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(BufWriter::new(file), cloud, labels, encoding).map_err(|e| Error::io(path, e))
}
