//! Binary little-endian PLY in the layout common splat viewers read:
//! `x y z scale_0..2 rot_0..3 opacity f_dc_0..2`, with log scales, logit
//! opacity and degree-0 spherical-harmonic color.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector3, Vector4};

use super::gaussian::{Gaussian3D, GaussianCloud};
use crate::error::{Error, Result};

/// Zeroth-order SH basis constant, `1 / (2√π)`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
];

fn encode(g: &Gaussian3D) -> [f64; 14] {
    let dc = g.color.map(|c| (c - 0.5) / SH_C0);
    [
        g.center.x,
        g.center.y,
        g.center.z,
        g.log_scale.x,
        g.log_scale.y,
        g.log_scale.z,
        g.rotation[0],
        g.rotation[1],
        g.rotation[2],
        g.rotation[3],
        g.opacity_logit,
        dc.x,
        dc.y,
        dc.z,
    ]
}

fn decode(v: &[f64; 14]) -> Gaussian3D {
    let mut g = Gaussian3D {
        center: Vector3::new(v[0], v[1], v[2]),
        log_scale: Vector3::new(v[3], v[4], v[5]),
        rotation: Vector4::new(v[6], v[7], v[8], v[9]),
        opacity_logit: v[10],
        color: Vector3::new(v[11], v[12], v[13]).map(|dc| dc * SH_C0 + 0.5),
    };
    g.normalize_rotation();
    g
}

pub fn write_ply(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_to(cloud, &mut w).map_err(|e| Error::io(path, e))
}

pub fn write_ply_to<W: Write>(cloud: &GaussianCloud, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for p in PROPERTIES {
        writeln!(w, "property float {p}")?;
    }
    writeln!(w, "end_header")?;
    for g in cloud.gaussians() {
        for v in encode(g) {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()
}

#[derive(Clone, Copy, Debug)]
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

    fn read<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply_from(&mut BufReader::new(file))
}

/// Reads the vertex element; extra properties (normals, higher SH bands) are skipped.
pub fn read_ply_from<R: BufRead>(r: &mut R) -> Result<GaussianCloud> {
    let bad = |m: &str| Error::format("ply", m.to_string());
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String> {
        line.clear();
        if r.read_line(&mut line).map_err(|e| bad(&e.to_string()))? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim().to_string())
    };
    if next_line(r)? != "ply" {
        return Err(bad("missing magic"));
    }
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    loop {
        let l = next_line(r)?;
        let f: Vec<&str> = l.split_whitespace().collect();
        match f.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(bad(&format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(bad("duplicate vertex element"));
                }
                count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => {
                if count.is_none() {
                    return Err(bad("elements before vertex are not supported"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => return Err(bad("list properties on vertices")),
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| bad(&format!("unknown type {ty}")))?;
                props.push((name.to_string(), s));
            }
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(bad(&format!("unexpected header line {l:?}"))),
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let slots: Vec<Option<usize>> = props
        .iter()
        .map(|(n, _)| PROPERTIES.iter().position(|p| p == n))
        .collect();
    for p in PROPERTIES {
        if !props.iter().any(|(n, _)| n == p) {
            return Err(bad(&format!("missing property {p}")));
        }
    }
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = [0.0; 14];
        for ((_, ty), slot) in props.iter().zip(&slots) {
            let x = ty.read(r).map_err(|e| bad(&e.to_string()))?;
            if let Some(k) = slot {
                v[*k] = x;
            }
        }
        gaussians.push(decode(&v));
    }
    GaussianCloud::new(gaussians)
}
