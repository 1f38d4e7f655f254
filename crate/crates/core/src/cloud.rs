//! Point clouds and PLY I/O.
//!
//! Coordinates are held as `f64` and written as 32-bit floats. Reading accepts
//! ASCII and binary (little or big endian) PLY; any element or property other
//! than the vertex `x,y,z,red,green,blue` is skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Tag appended to a cloud name by [`normalize_cloud`].
const SCALE_TAG: &str = "@scale=";

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<[f64; 3]>,
    colors: Vec<[u8; 3]>,
    pub name: String,
}

impl PointCloud {
    pub fn new(
        coords: Vec<[f64; 3]>,
        colors: Vec<[u8; 3]>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidCloud("cloud has no points".into()));
        }
        if coords.len() != colors.len() {
            return Err(Error::InvalidCloud(format!(
                "{} coordinates but {} colors",
                coords.len(),
                colors.len()
            )));
        }
        if let Some(i) = coords
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidCloud(format!("non-finite coordinate at row {i}")));
        }
        Ok(Self {
            coords,
            colors,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn into_parts(self) -> (Vec<[f64; 3]>, Vec<[u8; 3]>, String) {
        (self.coords, self.colors, self.name)
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.coords {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let n = self.coords.len() as f64;
        c.map(|v| v / n)
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        bounding_box(&self.coords)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        norm(sub(hi, lo))
    }

    /// Base name without the normalization tag.
    pub fn base_name(&self) -> &str {
        self.name
            .split_once(SCALE_TAG)
            .map_or(self.name.as_str(), |(base, _)| base)
    }

    /// Accumulated normalization scale recorded in the name, 1 when absent.
    pub fn recorded_scale(&self) -> f64 {
        self.name
            .split_once(SCALE_TAG)
            .and_then(|(_, s)| s.parse().ok())
            .unwrap_or(1.0)
    }
}

pub(crate) fn bounding_box(points: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn norm2(a: [f64; 3]) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

#[inline]
pub(crate) fn norm(a: [f64; 3]) -> f64 {
    norm2(a).sqrt()
}

#[inline]
pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm2(sub(a, b))
}

/// Translate to zero centroid and scale so the farthest point has norm 1.
///
/// The applied scale factor is multiplied into the `@scale=` tag of the name.
pub fn normalize_cloud(pc: &PointCloud) -> Result<PointCloud> {
    let c = pc.centroid();
    let centered: Vec<[f64; 3]> = pc.coords.iter().map(|&p| sub(p, c)).collect();
    let max_norm = centered.iter().map(|&p| norm(p)).fold(0.0, f64::max);
    if max_norm == 0.0 || !max_norm.is_finite() {
        return Err(Error::DegenerateCloud);
    }
    let s = 1.0 / max_norm;
    let coords = centered.into_iter().map(|p| p.map(|v| v * s)).collect();
    let scale = pc.recorded_scale() * s;
    let name = format!("{}{SCALE_TAG}{scale}", pc.base_name());
    PointCloud::new(coords, pc.colors.clone(), name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

pub fn write_ply(path: impl AsRef<Path>, pc: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_to(&mut w, pc, encoding).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ply_to<W: Write>(w: &mut W, pc: &PointCloud, encoding: PlyEncoding) -> std::io::Result<()> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {format} 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.len()
    )?;
    for (p, c) in pc.coords.iter().zip(&pc.colors) {
        let [x, y, z] = p.map(|v| v as f32);
        match encoding {
            PlyEncoding::Ascii => writeln!(w, "{x} {y} {z} {} {} {}", c[0], c[1], c[2])?,
            PlyEncoding::BinaryLittleEndian => {
                w.write_all(&x.to_le_bytes())?;
                w.write_all(&y.to_le_bytes())?;
                w.write_all(&z.to_le_bytes())?;
                w.write_all(c)?;
            }
        }
    }
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_ply(BufReader::new(file), name)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    Binary { little: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if little {
                    <$t>::from_le_bytes(arr)
                } else {
                    <$t>::from_be_bytes(arr)
                }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct ElementDef {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<(Format, Vec<ElementDef>)> {
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        let n = r
            .read_line(line)
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;
        Ok(n > 0)
    };
    if !next_line(r, &mut line)? || line.trim_end() != "ply" {
        return Err(Error::MalformedHeader("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    loop {
        if !next_line(r, &mut line)? {
            return Err(Error::MalformedHeader("missing end_header".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", kind, _version] => {
                format = Some(match *kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::Binary { little: true },
                    "binary_big_endian" => Format::Binary { little: false },
                    other => {
                        return Err(Error::MalformedHeader(format!("unknown format `{other}`")))
                    }
                })
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::MalformedHeader(format!("bad element count `{count}`")))?;
                elements.push(ElementDef {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::MalformedHeader("property before element".into()))?;
                let count = Scalar::parse(count)
                    .ok_or_else(|| Error::MalformedHeader(format!("bad list type `{count}`")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| Error::MalformedHeader(format!("bad list type `{item}`")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::MalformedHeader("property before element".into()))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::MalformedHeader(format!("bad property type `{ty}`")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => {
                return Err(Error::MalformedHeader(format!(
                    "unrecognized header line `{}`",
                    line.trim_end()
                )))
            }
        }
    }
    let format = format.ok_or_else(|| Error::MalformedHeader("missing format line".into()))?;
    Ok((format, elements))
}

/// Indices of the six vertex properties we extract.
fn vertex_slots(el: &ElementDef) -> Result<[usize; 6]> {
    let find = |names: &[&str]| {
        el.props.iter().position(
            |p| matches!(p, Property::Scalar { name, .. } if names.contains(&name.as_str())),
        )
    };
    let mut slots = [0usize; 6];
    let wanted: [(&str, &[&str]); 6] = [
        ("x", &["x"]),
        ("y", &["y"]),
        ("z", &["z"]),
        ("red", &["red", "r", "diffuse_red"]),
        ("green", &["green", "g", "diffuse_green"]),
        ("blue", &["blue", "b", "diffuse_blue"]),
    ];
    for (slot, (label, names)) in slots.iter_mut().zip(wanted) {
        *slot = find(names).ok_or_else(|| Error::MissingProperty(label.to_string()))?;
    }
    Ok(slots)
}

struct TokenReader<R> {
    inner: R,
    buf: Vec<String>,
    pos: usize,
}

impl<R: BufRead> TokenReader<R> {
    fn next(&mut self) -> Result<String> {
        while self.pos >= self.buf.len() {
            let mut line = String::new();
            let n = self
                .inner
                .read_line(&mut line)
                .map_err(|e| Error::TruncatedBody(e.to_string()))?;
            if n == 0 {
                return Err(Error::TruncatedBody("unexpected end of ascii body".into()));
            }
            self.buf = line.split_whitespace().map(str::to_owned).collect();
            self.pos = 0;
        }
        self.pos += 1;
        Ok(std::mem::take(&mut self.buf[self.pos - 1]))
    }

    fn next_value(&mut self, ty: Scalar) -> Result<f64> {
        let t = self.next()?;
        let bad = || Error::TruncatedBody(format!("bad numeric token `{t}`"));
        // f32 tokens must round to the same f32 the writer held
        match ty {
            Scalar::F32 => t.parse::<f32>().map(f64::from).map_err(|_| bad()),
            _ => t.parse::<f64>().map_err(|_| bad()),
        }
    }
}

pub fn read_ply<R: BufRead>(mut r: R, name: impl Into<String>) -> Result<PointCloud> {
    let (format, elements) = parse_header(&mut r)?;
    let vidx = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::MalformedHeader("no vertex element".into()))?;
    let slots = vertex_slots(&elements[vidx])?;
    let nverts = elements[vidx].count;
    let mut coords = Vec::with_capacity(nverts);
    let mut colors = Vec::with_capacity(nverts);
    let mut row = Vec::new();

    match format {
        Format::Ascii => {
            let mut tr = TokenReader {
                inner: r,
                buf: Vec::new(),
                pos: 0,
            };
            for el in &elements[..=vidx] {
                for _ in 0..el.count {
                    row.clear();
                    for p in &el.props {
                        match p {
                            Property::Scalar { ty, .. } => row.push(tr.next_value(*ty)?),
                            Property::List { count, .. } => {
                                let n = tr.next_value(*count)? as usize;
                                for _ in 0..n {
                                    tr.next()?;
                                }
                                row.push(f64::NAN);
                            }
                        }
                    }
                    if el.name == "vertex" {
                        push_vertex(&row, &slots, &mut coords, &mut colors)?;
                    }
                }
            }
        }
        Format::Binary { little } => {
            let mut buf = [0u8; 8];
            let mut read_scalar = |r: &mut R, ty: Scalar| -> Result<f64> {
                let n = ty.size();
                r.read_exact(&mut buf[..n])
                    .map_err(|_| Error::TruncatedBody("unexpected end of binary body".into()))?;
                Ok(ty.decode(&buf[..n], little))
            };
            for el in &elements[..=vidx] {
                for _ in 0..el.count {
                    row.clear();
                    for p in &el.props {
                        match *p {
                            Property::Scalar { ty, .. } => row.push(read_scalar(&mut r, ty)?),
                            Property::List { count, item } => {
                                let n = read_scalar(&mut r, count)? as usize;
                                for _ in 0..n {
                                    read_scalar(&mut r, item)?;
                                }
                                row.push(f64::NAN);
                            }
                        }
                    }
                    if el.name == "vertex" {
                        push_vertex(&row, &slots, &mut coords, &mut colors)?;
                    }
                }
            }
        }
    }
    PointCloud::new(coords, colors, name)
}

fn push_vertex(
    row: &[f64],
    slots: &[usize; 6],
    coords: &mut Vec<[f64; 3]>,
    colors: &mut Vec<[u8; 3]>,
) -> Result<()> {
    coords.push([row[slots[0]], row[slots[1]], row[slots[2]]]);
    let mut c = [0u8; 3];
    for (a, &s) in slots[3..].iter().enumerate() {
        let v = row[s].round();
        if !(0.0..=255.0).contains(&v) {
            return Err(Error::InvalidCloud(format!("color value {} outside [0,255]", row[s])));
        }
        c[a] = v as u8;
    }
    colors.push(c);
    Ok(())
}
