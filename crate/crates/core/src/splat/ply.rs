//! Reading and writing PLY files: splat vertex layouts and plain point clouds.
//!
//! Binary little-endian and ASCII encodings are read; files are written as
//! binary little-endian with `float` properties.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};

use super::sh::coeffs_per_channel;
use super::GaussianSet;
use crate::error::{Error, Result};

const OPACITY_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, ScalarType),
    List(String),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Vertex element of a PLY file as named `f64` columns.
#[derive(Debug, Clone)]
pub(crate) struct VertexTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub count: usize,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }
}

fn header_error(path: &Path, message: impl Into<String>) -> Error {
    Error::format(path.display().to_string(), message)
}

fn read_header(reader: &mut impl BufRead, path: &Path) -> Result<(Encoding, Vec<Element>)> {
    let mut line = String::new();
    let mut next = |reader: &mut dyn BufRead| -> Result<String> {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(header_error(path, "unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next(reader)? != "ply" {
        return Err(header_error(path, "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next(reader)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLittleEndian),
            ["format", other, ..] => {
                return Err(header_error(path, format!("unsupported encoding '{other}'")));
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| header_error(path, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_error(path, "property before element"))?;
                el.properties.push(Property::List(name.to_string()));
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| header_error(path, format!("unknown property type '{ty}'")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_error(path, "property before element"))?;
                el.properties.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(header_error(path, format!("unrecognized header line '{l}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| header_error(path, "missing format line"))?;
    Ok((encoding, elements))
}

pub(crate) fn read_vertex_table(path: &Path) -> Result<VertexTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let (encoding, elements) = read_header(&mut reader, path)?;
    let Some(vertex_pos) = elements.iter().position(|e| e.name == "vertex") else {
        return Err(header_error(path, "no vertex element"));
    };
    if elements[..vertex_pos].iter().any(|e| e.count > 0) {
        return Err(header_error(path, "elements before 'vertex' are not supported"));
    }
    let vertex = &elements[vertex_pos];
    let mut scalars = Vec::new();
    for p in &vertex.properties {
        match p {
            Property::Scalar(name, ty) => scalars.push((name.clone(), *ty)),
            Property::List(name) => {
                return Err(header_error(path, format!("list property '{name}' in vertex element")));
            }
        }
    }
    let count = vertex.count;
    let mut columns: Vec<Vec<f64>> = scalars.iter().map(|_| Vec::with_capacity(count)).collect();
    match encoding {
        Encoding::BinaryLittleEndian => {
            let stride: usize = scalars.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; stride * count];
            reader
                .read_exact(&mut buf)
                .map_err(|_| header_error(path, format!("truncated vertex data, expected {count} records")))?;
            for record in buf.chunks_exact(stride.max(1)).take(count) {
                let mut offset = 0;
                for (col, (_, ty)) in columns.iter_mut().zip(&scalars) {
                    col.push(ty.decode(&record[offset..offset + ty.size()]));
                    offset += ty.size();
                }
            }
        }
        Encoding::Ascii => {
            let mut line = String::new();
            for index in 0..count {
                line.clear();
                reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
                let values: Vec<&str> = line.split_whitespace().collect();
                if values.len() < scalars.len() {
                    return Err(Error::Data {
                        index,
                        message: format!("expected {} values, found {}", scalars.len(), values.len()),
                    });
                }
                for (col, v) in columns.iter_mut().zip(values) {
                    let parsed: f64 = v.parse().map_err(|_| Error::Data {
                        index,
                        message: format!("cannot parse '{v}'"),
                    })?;
                    col.push(parsed);
                }
            }
        }
    }
    Ok(VertexTable {
        names: scalars.into_iter().map(|(n, _)| n).collect(),
        columns,
        count,
    })
}

fn write_float_ply(path: &Path, names: &[String], count: usize, rows: impl Iterator<Item = Vec<f32>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {count}\n"));
    for n in names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;
    for row in rows {
        for v in row {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    (p / (1.0 - p)).ln()
}

/// Loads a splat PLY, applying activations (exp on scale, logistic on
/// opacity) and normalizing quaternions stored w-first.
pub fn load_splat(path: impl AsRef<Path>) -> Result<GaussianSet> {
    let path = path.as_ref();
    let table = read_vertex_table(path)?;
    let ctx = path.display().to_string();
    let require = |name: &str| -> Result<&[f64]> {
        table
            .column(name)
            .ok_or_else(|| Error::format(ctx.clone(), format!("missing required property \"{name}\"")))
    };
    let xyz = [require("x")?, require("y")?, require("z")?];
    let dc = [require("f_dc_0")?, require("f_dc_1")?, require("f_dc_2")?];
    let opacity = require("opacity")?;
    let scale = [require("scale_0")?, require("scale_1")?, require("scale_2")?];
    let rot = [require("rot_0")?, require("rot_1")?, require("rot_2")?, require("rot_3")?];

    let rest_count = (0..).take_while(|i| table.column(&format!("f_rest_{i}")).is_some()).count();
    let degree = (0..=3)
        .find(|&l| 3 * (coeffs_per_channel(l) - 1) == rest_count)
        .ok_or_else(|| {
            Error::format(
                ctx.clone(),
                format!("property \"f_rest_{rest_count}\": {rest_count} f_rest columns match no SH degree"),
            )
        })?;
    let rest: Vec<&[f64]> = (0..rest_count)
        .map(|i| table.column(&format!("f_rest_{i}")).unwrap())
        .collect();
    let k = coeffs_per_channel(degree);

    let mut set = GaussianSet::with_capacity(degree, table.count)?;
    for i in 0..table.count {
        let mut values: Vec<f64> = xyz.iter().chain(&dc).chain(&scale).chain(&rot).map(|c| c[i]).collect();
        values.push(opacity[i]);
        values.extend(rest.iter().map(|c| c[i]));
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data {
                index: i,
                message: "non-finite attribute".into(),
            });
        }
        let q = Quaternion::new(rot[0][i], rot[1][i], rot[2][i], rot[3][i]);
        let norm = q.norm();
        if !(norm > 0.0) {
            return Err(Error::Data {
                index: i,
                message: "zero quaternion".into(),
            });
        }
        // exact-unit inputs are kept bit-for-bit so that save/load is a fixed point
        let rotation = if (norm - 1.0).abs() <= 1e-6 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        let mut sh = vec![0.0; 3 * k];
        for c in 0..3 {
            sh[c * k] = dc[c][i];
            for j in 1..k {
                sh[c * k + j] = rest[c * (k - 1) + j - 1][i];
            }
        }
        set.push(super::Gaussian {
            position: Vector3::new(xyz[0][i], xyz[1][i], xyz[2][i]),
            rotation,
            scale: Vector3::new(scale[0][i].exp(), scale[1][i].exp(), scale[2][i].exp()),
            opacity: sigmoid(opacity[i]),
            sh,
        })?;
    }
    Ok(set)
}

/// Writes a splat PLY, inverting the activations applied by [`load_splat`].
pub fn save_splat(set: &GaussianSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for (i, p) in set.positions().iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Data {
                index: i,
                message: "non-finite position".into(),
            });
        }
    }
    let k = set.coeffs_per_channel();
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"].map(String::from).to_vec();
    names.extend((0..3 * (k - 1)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend(["scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"].map(String::from));
    let rows = (0..set.len()).map(|i| {
        let p = set.positions()[i];
        let sh = set.sh_of(i);
        let s = set.scales()[i];
        let q = set.rotations()[i];
        let mut row: Vec<f64> = vec![p.x, p.y, p.z, sh[0], sh[k], sh[2 * k]];
        for c in 0..3 {
            row.extend_from_slice(&sh[c * k + 1..(c + 1) * k]);
        }
        row.push(logit(set.opacities()[i]));
        row.extend([s.x.ln(), s.y.ln(), s.z.ln(), q.w, q.i, q.j, q.k]);
        row.into_iter().map(|v| v as f32).collect()
    });
    write_float_ply(path, &names, set.len(), rows)
}

/// Reads `x, y, z` from a PLY point file.
pub fn load_points(path: impl AsRef<Path>) -> Result<Vec<Point3<f64>>> {
    let path = path.as_ref();
    let table = read_vertex_table(path)?;
    let ctx = path.display().to_string();
    let col = |n: &str| {
        table
            .column(n)
            .ok_or_else(|| Error::format(ctx.clone(), format!("missing required property \"{n}\"")))
    };
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    (0..table.count)
        .map(|i| {
            let p = Point3::new(x[i], y[i], z[i]);
            if p.iter().all(|v| v.is_finite()) {
                Ok(p)
            } else {
                Err(Error::Data {
                    index: i,
                    message: "non-finite point".into(),
                })
            }
        })
        .collect()
}

pub fn save_points(points: &[Point3<f64>], path: impl AsRef<Path>) -> Result<()> {
    let names = ["x", "y", "z"].map(String::from);
    let rows = points.iter().map(|p| vec![p.x as f32, p.y as f32, p.z as f32]);
    write_float_ply(path.as_ref(), &names, points.len(), rows)
}
